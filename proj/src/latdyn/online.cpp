#include "latdyn/online.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "latdyn/dataio.hpp"
#include "latdyn/error.hpp"

namespace latdyn::online {

namespace {

std::string mu_str(const Vector& mu) {
  std::ostringstream os;
  os << '[';
  for (Eigen::Index k = 0; k < mu.size(); ++k) os << (k ? ", " : "") << mu[k];
  os << ']';
  return os.str();
}

}  // namespace

FieldTrajectory predict(const ModelBundle& bundle, const PredictionRequest& req,
                        PredictionDetails* details) {
  const auto& arch = bundle.arch;
  if (req.mu.size() != arch.param_dim)
    throw DimensionError("prediction parameter has " + std::to_string(req.mu.size()) +
                         " components, bundle expects " + std::to_string(arch.param_dim));
  if (req.coords.cols() != arch.spatial_dim)
    throw DimensionError("query coordinates have " + std::to_string(req.coords.cols()) +
                         " columns, bundle expects " + std::to_string(arch.spatial_dim));
  if (req.coords.rows() == 0) throw InvalidArgument("no query coordinates");
  if (!req.mu.allFinite() || !req.coords.allFinite()) throw InvalidArgument("non-finite prediction input");
  if (!req.times.empty() && req.times != bundle.times)
    throw InvalidArgument("prediction time grid must match the training grid");
  if (bundle.xi.empty()) throw StateError("bundle has no coefficient matrices");

  const Vector mu_n = bundle.norm.mu.normalize(req.mu);
  const bool normalized = bundle.knn.space == DistanceSpace::kNormalized;
  std::vector<Vector> points;
  points.reserve(bundle.train_mu.size());
  for (const auto& m : bundle.train_mu) points.push_back(normalized ? bundle.norm.mu.normalize(m) : m);
  InterpolationResult ir =
      interpolate_coefficients(normalized ? mu_n : req.mu, points, bundle.xi, bundle.knn);

  const LatentModel model(arch, bundle.params);
  const Vector z0 = model.initial_state(bundle.params, mu_n.transpose()).row(0).transpose();
  const IDModel id{bundle.library, ir.xi, req.mu};
  Matrix z;
  try {
    z = solve_latent_ode(id, z0, bundle.times);
  } catch (const DivergenceError& e) {
    throw DivergenceError("latent ODE diverged for mu* = " + mu_str(req.mu) + ": " + e.what(), e.step());
  }

  const int ns = arch.latent_dim, nd = arch.param_dim, d = arch.spatial_dim, nf = arch.field_count;
  const Eigen::Index np = req.coords.rows();
  FieldTrajectory out;
  out.mu = req.mu;
  out.times = bundle.times;
  out.coords = req.coords;
  out.field_count = nf;
  out.grid_tag = "query";
  out.fields.resize(z.rows(), np * nf);
  Matrix in(np, ns + nd + d);
  in.middleCols(ns, nd).rowwise() = mu_n.transpose();
  in.rightCols(d) = bundle.norm.x.normalize(Matrix(req.coords));
  const Network& rec = model.rec();
  for (Eigen::Index m = 0; m < z.rows(); ++m) {
    in.leftCols(ns).rowwise() = z.row(m);
    const Matrix u = bundle.norm.u.denormalize(rec.evaluate(bundle.params, in));
    out.snapshot(m) = u;
  }
  if (details) {
    details->interpolation = std::move(ir);
    details->z = std::move(z);
  }
  return out;
}

double l2_rate(const RowMatrix& predicted, const RowMatrix& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw DimensionError("l2_rate: shapes differ");
  const double ref = truth.norm();
  if (!(ref > 0.0)) throw InvalidArgument("l2_rate: reference field has zero norm");
  return 100.0 * (predicted - truth).norm() / ref;
}

EvaluationReport evaluate_testset(const ModelBundle& bundle, const Dataset& truth,
                                  std::span<const Vector> points) {
  std::vector<const FieldTrajectory*> todo;
  EvaluationReport rep;
  if (points.empty()) {
    for (const auto& tr : truth.trajectories) todo.push_back(&tr);
  } else {
    for (const auto& p : points) {
      const FieldTrajectory* hit = nullptr;
      for (const auto& tr : truth.trajectories)
        if (tr.mu.size() == p.size() && (tr.mu - p).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + p.cwiseAbs().maxCoeff())) {
          hit = &tr;
          break;
        }
      if (hit) {
        todo.push_back(hit);
      } else {
        rep.partial = true;
        rep.missing.push_back(mu_str(p));
      }
    }
  }
  double err2 = 0.0, ref2 = 0.0;
  bool hf_known = true;
  for (const FieldTrajectory* tr : todo) {
    PredictionRequest req{tr->mu, tr->coords, {}};
    const auto start = std::chrono::steady_clock::now();
    const FieldTrajectory pred = predict(bundle, req);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (pred.fields.rows() != tr->fields.rows())
      throw DimensionError("truth trajectory '" + tr->id + "' time grid does not match the bundle");
    EvaluationEntry e;
    e.id = tr->id;
    e.mu = tr->mu;
    e.rl2 = l2_rate(pred.fields, tr->fields);
    e.predict_seconds = secs;
    e.hf_seconds = tr->wall_clock_seconds;
    hf_known = hf_known && e.hf_seconds > 0.0;
    err2 += (pred.fields - tr->fields).squaredNorm();
    ref2 += tr->fields.squaredNorm();
    rep.predict_seconds += secs;
    rep.hf_seconds += e.hf_seconds;
    rep.entries.push_back(std::move(e));
  }
  if (ref2 > 0.0) rep.aggregate_rl2 = 100.0 * std::sqrt(err2 / ref2);
  rep.speedup = hf_known && rep.predict_seconds > 0.0 && !rep.entries.empty()
                    ? rep.hf_seconds / rep.predict_seconds
                    : 0.0;
  return rep;
}

void write_report_csv(const std::string& path, const EvaluationReport& report) {
  const Eigen::Index nd = report.entries.empty() ? 0 : report.entries.front().mu.size();
  std::vector<std::string> header;
  for (Eigen::Index k = 0; k < nd; ++k) header.push_back("mu_" + std::to_string(k));
  header.insert(header.end(), {"rl2_percent", "predict_seconds", "hf_seconds"});
  RowMatrix rows(static_cast<Eigen::Index>(report.entries.size()), nd + 3);
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const auto& e = report.entries[i];
    const auto r = static_cast<Eigen::Index>(i);
    rows.row(r).head(nd) = e.mu.transpose();
    rows(r, nd) = e.rl2;
    rows(r, nd + 1) = e.predict_seconds;
    rows(r, nd + 2) = e.hf_seconds;
  }
  dataio::write_csv(path, header, rows);
}

}  // namespace latdyn::online
