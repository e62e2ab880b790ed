#include "latdyn/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "latdyn/bundle.hpp"
#include "latdyn/log.hpp"
#include "latdyn/parallel.hpp"

namespace latdyn {

void TrainingConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("iterations must be at least 1");
  if (check_every < 1) throw InvalidArgument("check interval must be at least 1");
  if (!(w_id >= 0.0) || !(w_z0 >= 0.0) || !(w_coef >= 0.0))
    throw InvalidArgument("loss weights must be non-negative");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(lr_decay > 0.0) || lr_period < 1) throw InvalidArgument("invalid learning-rate schedule");
  if (spatial_samples < 0) throw InvalidArgument("spatial sample count must be non-negative");
  if (!(range > 0.0)) throw InvalidArgument("range multiplier must be positive");
  if (chunk_rows < 1) throw InvalidArgument("chunk size must be positive");
  if (std::isnan(tol_latent) || std::isnan(tol_loss)) throw InvalidArgument("tolerances must not be NaN");
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"iterations", c.iterations},
          {"check_every", c.check_every},
          {"tol_latent", c.tol_latent},
          {"tol_loss", c.tol_loss},
          {"w_id", c.w_id},
          {"w_z0", c.w_z0},
          {"w_coef", c.w_coef},
          {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},
          {"lr_period", c.lr_period},
          {"spatial_samples", c.spatial_samples},
          {"range", c.range},
          {"seed", c.seed},
          {"workers", c.workers},
          {"chunk_rows", c.chunk_rows}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  try {
    c.iterations = j.value("iterations", c.iterations);
    c.check_every = j.value("check_every", c.check_every);
    c.tol_latent = j.value("tol_latent", c.tol_latent);
    c.tol_loss = j.value("tol_loss", c.tol_loss);
    c.w_id = j.value("w_id", c.w_id);
    c.w_z0 = j.value("w_z0", c.w_z0);
    c.w_coef = j.value("w_coef", c.w_coef);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lr_period = j.value("lr_period", c.lr_period);
    c.spatial_samples = j.value("spatial_samples", c.spatial_samples);
    c.range = j.value("range", c.range);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.chunk_rows = j.value("chunk_rows", c.chunk_rows);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_schedule(long iteration, double initial, double factor, int period) {
  if (iteration < 0) throw InvalidArgument("iteration must be non-negative");
  if (period < 1) throw InvalidArgument("decay period must be positive");
  return initial * std::pow(factor, static_cast<double>(iteration / period));
}

void adam_step(ad::ParamStore& store, AdamState& state, double lr) {
  if (state.m.size() != store.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& b : store) {
      state.m.push_back(Matrix::Zero(b.value.rows(), b.value.cols()));
      state.v.push_back(Matrix::Zero(b.value.rows(), b.value.cols()));
    }
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < store.size(); ++k) {
    auto& b = store.block(k);
    auto m = state.m[k].array();
    auto v = state.v[k].array();
    const auto g = b.grad.array();
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    b.value.array() -= lr * (m / c1) / ((v / c2).sqrt() + state.eps);
  }
}

nlohmann::json to_json(const Normalizers& n) {
  return {{"mu", to_json(n.mu)}, {"x", to_json(n.x)}, {"u", to_json(n.u)}};
}

Normalizers normalizers_from_json(const nlohmann::json& j) {
  try {
    return {normalizer_from_json(j.at("mu")), normalizer_from_json(j.at("x")),
            normalizer_from_json(j.at("u"))};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("normalizers: ") + e.what());
  }
}

Normalizers build_normalizers(const Dataset& data, double range) {
  if (data.trajectories.empty()) throw InvalidArgument("dataset has no trajectories");
  const auto& first = data.trajectories.front();
  const Eigen::Index nd = first.mu.size();
  const Eigen::Index d = first.dim();
  const int nf = first.field_count;

  Matrix mus(static_cast<Eigen::Index>(data.trajectories.size()), nd);
  Vector ulo = Vector::Constant(nf, std::numeric_limits<double>::infinity());
  Vector uhi = Vector::Constant(nf, -std::numeric_limits<double>::infinity());
  Vector xlo = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector xhi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const auto& tr = data.trajectories[i];
    if (tr.mu.size() != nd || tr.dim() != d || tr.field_count != nf)
      throw DimensionError("trajectory '" + tr.id + "' differs in parameter, spatial or field dimension");
    mus.row(static_cast<Eigen::Index>(i)) = tr.mu.transpose();
    Eigen::Map<const RowMatrix> all(tr.fields.data(), tr.fields.size() / nf, nf);
    ulo = ulo.cwiseMin(all.colwise().minCoeff().transpose());
    uhi = uhi.cwiseMax(all.colwise().maxCoeff().transpose());
    xlo = xlo.cwiseMin(tr.coords.colwise().minCoeff().transpose());
    xhi = xhi.cwiseMax(tr.coords.colwise().maxCoeff().transpose());
  }
  if (static_cast<Eigen::Index>(data.domain_box.size()) == d) {
    for (Eigen::Index k = 0; k < d; ++k) {
      xlo[k] = data.domain_box[static_cast<std::size_t>(k)].first;
      xhi[k] = data.domain_box[static_cast<std::size_t>(k)].second;
    }
  }
  return {Normalizer::from_rows(mus, range), Normalizer::from_bounds(xlo, xhi, range),
          Normalizer::from_bounds(ulo, uhi, range)};
}

TrainingSet make_training_set(const Dataset& data, const Normalizers& norm) {
  if (data.trajectories.empty()) throw InvalidArgument("dataset has no trajectories");
  if (data.times.size() < 2) throw InvalidArgument("training needs at least two time points");
  TrainingSet set;
  set.times = data.times;
  set.n_steps = static_cast<int>(data.times.size()) - 1;
  set.dt = data.times[1] - data.times[0];
  if (!(set.dt > 0.0)) throw InvalidArgument("time grid must be strictly increasing");
  for (std::size_t k = 1; k < data.times.size(); ++k) {
    const double h = data.times[k] - data.times[k - 1];
    if (std::abs(h - set.dt) > 1e-6 * set.dt) throw InvalidArgument("training requires a uniform time grid");
  }
  const auto& first = data.trajectories.front();
  set.field_count = first.field_count;
  const Eigen::Index nd = norm.mu.size(), d = norm.x.size();
  const int nf = set.field_count;
  if (norm.u.size() != nf) throw DimensionError("field normalizer does not match the field count");
  set.mu.resize(static_cast<Eigen::Index>(data.trajectories.size()), nd);
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const auto& tr = data.trajectories[i];
    if (tr.mu.size() != nd) throw DimensionError("trajectory '" + tr.id + "' parameter dimension mismatch");
    if (tr.dim() != d) throw DimensionError("trajectory '" + tr.id + "' spatial dimension mismatch");
    if (tr.field_count != nf) throw DimensionError("trajectory '" + tr.id + "' field count mismatch");
    if (tr.n_times() != static_cast<Eigen::Index>(data.times.size()))
      throw DimensionError("trajectory '" + tr.id + "' has " + std::to_string(tr.n_times()) +
                           " snapshots, expected " + std::to_string(data.times.size()));
    if (tr.fields.cols() != tr.n_points() * nf || tr.n_points() == 0)
      throw DimensionError("trajectory '" + tr.id + "' field array does not match its coordinates");
    if (!tr.fields.allFinite()) throw InvalidArgument("trajectory '" + tr.id + "' has non-finite values");
    set.mu.row(static_cast<Eigen::Index>(i)) = norm.mu.normalize(Vector(tr.mu)).transpose();
    set.coords.push_back(norm.x.normalize(Matrix(tr.coords)));
    RowMatrix f = tr.fields;
    Eigen::Map<RowMatrix> flat(f.data(), f.size() / nf, nf);
    flat = norm.u.normalize(Matrix(flat));
    set.fields.push_back(std::move(f));
  }
  return set;
}

Batch make_batch(const TrainingSet& set, int samples, std::uint64_t seed) {
  Batch b;
  b.n_traj = set.size();
  b.n_times = set.n_steps + 1;
  b.offsets.reserve(static_cast<std::size_t>(b.n_traj) * b.n_times + 1);
  b.offsets.push_back(0);
  std::mt19937_64 rng(seed);
  for (int m = 0; m < b.n_times; ++m) {
    for (int i = 0; i < b.n_traj; ++i) {
      const auto n = static_cast<std::int32_t>(set.coords[static_cast<std::size_t>(i)].rows());
      if (samples <= 0) {
        for (std::int32_t p = 0; p < n; ++p) b.points.push_back(p);
      } else {
        std::uniform_int_distribution<std::int32_t> pick(0, n - 1);
        for (int s = 0; s < samples; ++s) b.points.push_back(pick(rng));
      }
      b.offsets.push_back(b.points.size());
    }
  }
  return b;
}

TrainableModel::TrainableModel(const ArchitectureSpec& a, const LibrarySpec& lib, int n_traj,
                               std::uint64_t seed)
    : arch(a), library(lib) {
  if (n_traj < 1) throw InvalidArgument("need at least one training trajectory");
  build_networks(arch, seed, store);
  const int nb = library.columns(arch.latent_dim);
  for (int i = 0; i < n_traj; ++i)
    xi.push_back(store.add("xi." + std::to_string(i), Matrix::Zero(nb, arch.latent_dim)));
}

namespace {

// Squared reconstruction error of NN_rec summed over sampled rows with per-group
// weights 1 / (N_mu (N_t+1) |group| N_f). Outputs [Loss_rec, Loss_z0]. The
// network is differentiated chunk by chunk during forward; backward only
// scales the cached gradients.
class ReconLossOp final : public ad::CustomOp {
 public:
  ReconLossOp(const Network& rec, const ad::ParamStore& store, const TrainingSet& set,
              const Batch& batch, int latent_dim, int workers, Eigen::Index chunk_rows)
      : rec_(rec), store_(store), set_(set), batch_(batch), ns_(latent_dim), workers_(workers) {
    const std::size_t groups = batch.offsets.size() - 1;
    const std::size_t t0_groups = static_cast<std::size_t>(batch.n_traj);
    std::size_t g = 0;
    while (g < groups) {
      const std::size_t limit = g < t0_groups ? t0_groups : groups;
      Chunk c{g, g};
      std::size_t rows = 0;
      while (c.end < limit && (rows == 0 || rows + group_size(c.end) <= static_cast<std::size_t>(chunk_rows))) {
        rows += group_size(c.end);
        ++c.end;
      }
      c.initial = g < t0_groups;
      chunks_.push_back(c);
      g = c.end;
    }
  }

  std::string_view name() const override { return "reconstruction_loss"; }

  void forward(std::span<const Matrix* const> in, Matrix& out) override {
    const int nt = batch_.n_times;
    if (static_cast<int>(in.size()) != nt) throw DimensionError("reconstruction loss: one state per time");
    dz_.assign(static_cast<std::size_t>(nt), Matrix::Zero(batch_.n_traj, ns_));
    std::vector<ChunkResult> results(chunks_.size());
    parallel_for(chunks_.size(), workers_, [&](std::size_t k) { run_chunk(chunks_[k], in, results[k]); });
    grad_all_ = ad::GradBuffer(store_);
    grad_t0_ = ad::GradBuffer(store_);
    double all = 0.0, t0 = 0.0;
    for (std::size_t k = 0; k < chunks_.size(); ++k) {
      all += results[k].loss;
      grad_all_.add_scaled(results[k].grads, 1.0);
      if (chunks_[k].initial) {
        t0 += results[k].loss;
        grad_t0_.add_scaled(results[k].grads, 1.0);
      }
    }
    out.resize(1, 2);
    out(0, 0) = all;
    out(0, 1) = t0 * nt;
  }

  void backward(std::span<const Matrix* const>, const Matrix&, const Matrix& g,
                std::span<Matrix* const> gin, ad::GradBuffer& params) override {
    const double nt = batch_.n_times;
    const double g_rec = g(0, 0), g_z0 = g(0, 1) * nt;
    params.add_scaled(grad_all_, g_rec);
    params.add_scaled(grad_t0_, g_z0);
    for (std::size_t m = 0; m < gin.size(); ++m) {
      if (!gin[m]) continue;
      *gin[m] += (m == 0 ? g_rec + g_z0 : g_rec) * dz_[m];
    }
  }

 private:
  struct Chunk {
    std::size_t begin = 0, end = 0;  // group range
    bool initial = false;            // groups at t = 0
  };
  struct ChunkResult {
    double loss = 0.0;
    ad::GradBuffer grads;
  };

  std::size_t group_size(std::size_t g) const { return batch_.offsets[g + 1] - batch_.offsets[g]; }

  void run_chunk(const Chunk& c, std::span<const Matrix* const> z, ChunkResult& res) {
    const Eigen::Index nd = set_.mu.cols();
    const Eigen::Index d = set_.coords.front().cols();
    const int nf = set_.field_count;
    const std::size_t r0 = batch_.offsets[c.begin];
    const Eigen::Index rows = static_cast<Eigen::Index>(batch_.offsets[c.end] - r0);
    Matrix x(rows, ns_ + nd + d), target(rows, nf);
    Vector w(rows);
    const double denom = static_cast<double>(batch_.n_traj) * batch_.n_times * nf;
    for (std::size_t g = c.begin; g < c.end; ++g) {
      const int m = static_cast<int>(g / static_cast<std::size_t>(batch_.n_traj));
      const int i = static_cast<int>(g % static_cast<std::size_t>(batch_.n_traj));
      const auto& coords = set_.coords[static_cast<std::size_t>(i)];
      const auto& fields = set_.fields[static_cast<std::size_t>(i)];
      const double wg = 1.0 / (denom * static_cast<double>(group_size(g)));
      for (std::size_t r = batch_.offsets[g]; r < batch_.offsets[g + 1]; ++r) {
        const Eigen::Index row = static_cast<Eigen::Index>(r - r0);
        const Eigen::Index p = batch_.points[r];
        x.row(row).head(ns_) = z[static_cast<std::size_t>(m)]->row(i);
        x.row(row).segment(ns_, nd) = set_.mu.row(i);
        x.row(row).tail(d) = coords.row(p);
        for (int f = 0; f < nf; ++f) target(row, f) = fields(m, p * nf + f);
        w[row] = wg;
      }
    }
    ad::Tape tape(store_);
    const ad::NodeId xin = tape.input(std::move(x), true);
    const ad::NodeId y = rec_.record(tape, xin);
    const Matrix resid = tape.value(y) - target;
    res.loss = (resid.rowwise().squaredNorm().array() * w.array()).sum();
    const Matrix seed = 2.0 * (resid.array().colwise() * w.array()).matrix();
    res.grads = ad::GradBuffer(store_);
    tape.backward(y, seed, res.grads);
    const Matrix& gx = tape.grad(xin);
    for (std::size_t g = c.begin; g < c.end; ++g) {
      const int m = static_cast<int>(g / static_cast<std::size_t>(batch_.n_traj));
      const int i = static_cast<int>(g % static_cast<std::size_t>(batch_.n_traj));
      const Eigen::Index a = static_cast<Eigen::Index>(batch_.offsets[g] - r0);
      const Eigen::Index n = static_cast<Eigen::Index>(group_size(g));
      dz_[static_cast<std::size_t>(m)].row(i) = gx.block(a, 0, n, ns_).colwise().sum();
    }
  }

  const Network& rec_;
  const ad::ParamStore& store_;
  const TrainingSet& set_;
  const Batch& batch_;
  int ns_;
  int workers_;
  std::vector<Chunk> chunks_;
  std::vector<Matrix> dz_;
  ad::GradBuffer grad_all_;
  ad::GradBuffer grad_t0_;
};

std::string describe(const LossBreakdown& l) {
  std::ostringstream os;
  os << "total=" << l.total << " rec=" << l.rec << " z0=" << l.z0 << " id=" << l.id
     << " coef=" << l.coef;
  return os.str();
}

}  // namespace

LossBreakdown total_loss(const TrainableModel& model, const TrainingSet& set, const Batch& batch,
                         const LossWeights& weights, ad::GradBuffer* grads, int workers,
                         Eigen::Index chunk_rows, std::vector<Matrix>* latent) {
  const auto& arch = model.arch;
  const int ns = arch.latent_dim;
  const int n_traj = set.size();
  if (static_cast<int>(model.xi.size()) != n_traj)
    throw DimensionError("one coefficient matrix per training trajectory required");
  if (batch.n_traj != n_traj || batch.n_times != set.n_steps + 1)
    throw DimensionError("batch does not match the training set");
  if (set.mu.cols() != arch.param_dim || set.field_count != arch.field_count ||
      set.coords.front().cols() != arch.spatial_dim)
    throw DimensionError("training set dimensions do not match the architecture");

  const Network dyn(arch.dyn, model.store), rec(arch.rec, model.store), z0net(arch.z0, model.store);
  ad::Tape tape(model.store);
  const ad::NodeId mu = tape.input(set.mu);
  const ad::NodeId z0 = z0net.record(tape, mu);
  const RolloutNodes roll = record_rollout(tape, dyn, arch.taylor_order, z0, mu, set.dt, set.n_steps);

  auto op = std::make_shared<ReconLossOp>(rec, model.store, set, batch, ns, workers, chunk_rows);
  const ad::NodeId recon = tape.custom(op, roll.z);
  const ad::NodeId rec_loss = tape.slice_cols(recon, 0, 1);
  const ad::NodeId z0_loss = tape.slice_cols(recon, 1, 1);

  std::vector<ad::NodeId> xi;
  for (std::size_t k : model.xi) xi.push_back(tape.param(k));
  std::vector<ad::NodeId> id_terms;
  for (std::size_t m = 0; m < roll.z.size(); ++m) {
    const ad::NodeId theta = record_library(tape, model.library, roll.z[m]);
    const ad::NodeId pred = record_row_product(tape, theta, xi);
    id_terms.push_back(tape.sum_squares(tape.sub(roll.zdot[m], pred)));
  }
  const std::vector<double> id_w(id_terms.size(), 1.0 / (static_cast<double>(n_traj) * ns));
  const ad::NodeId id_loss_node = tape.weighted_sum(id_terms, id_w);
  std::vector<ad::NodeId> coef_terms;
  for (ad::NodeId x : xi) coef_terms.push_back(tape.sum_squares(x));
  const std::vector<double> ones(coef_terms.size(), 1.0);
  const ad::NodeId coef_loss = tape.weighted_sum(coef_terms, ones);

  const ad::NodeId parts[] = {rec_loss, z0_loss, id_loss_node, coef_loss};
  const double part_w[] = {1.0, weights.w_z0, weights.w_id, weights.w_coef};
  const ad::NodeId total = tape.weighted_sum(parts, part_w);

  LossBreakdown out;
  out.rec = tape.value(rec_loss)(0, 0);
  out.z0 = tape.value(z0_loss)(0, 0);
  out.id = tape.value(id_loss_node)(0, 0);
  out.coef = tape.value(coef_loss)(0, 0);
  out.total = tape.value(total)(0, 0);
  if (!std::isfinite(out.total)) throw DivergenceError("non-finite loss: " + describe(out), 0);

  if (latent) {
    latent->assign(static_cast<std::size_t>(n_traj), Matrix(set.n_steps + 1, ns));
    for (std::size_t m = 0; m < roll.z.size(); ++m)
      for (int i = 0; i < n_traj; ++i)
        (*latent)[static_cast<std::size_t>(i)].row(static_cast<Eigen::Index>(m)) = tape.value(roll.z[m]).row(i);
  }
  if (grads) tape.backward(total, 1.0, *grads);
  return out;
}

std::vector<double> latent_consistency(const TrainableModel& model, const TrainingSet& set, int workers) {
  const LatentModel lm(model.arch, model.store);
  const Matrix z0 = lm.initial_state(model.store, set.mu);
  std::vector<double> out(static_cast<std::size_t>(set.size()));
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double r = std::numeric_limits<double>::infinity();
    try {
      const LatentTrajectory tr =
          lm.rollout(model.store, z0.row(ii).transpose(), set.mu.row(ii).transpose(), set.dt, set.n_steps);
      IDModel id{model.library, model.store.block(model.xi[i]).value, Vector()};
      const Matrix zs = solve_latent_ode(id, z0.row(ii).transpose(), set.times);
      const double ref = tr.z.norm();
      const double diff = (zs - tr.z).norm();
      r = ref > 0.0 ? 100.0 * diff / ref : (diff == 0.0 ? 0.0 : r);
    } catch (const DivergenceError&) {
    }
    out[i] = r;
  });
  return out;
}

void write_training_log_csv(const std::string& path, const std::vector<TrainingLogRow>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write training log '" + path + "'");
  os << "iteration,lr,total,rec,z0,id,coef,latent_rl2,seconds\n";
  os << std::setprecision(10);
  for (const auto& r : log) {
    os << r.iteration << ',' << r.lr << ',' << r.loss.total << ',' << r.loss.rec << ','
       << r.loss.z0 << ',' << r.loss.id << ',' << r.loss.coef << ',';
    if (!std::isnan(r.latent_rl2)) os << r.latent_rl2;
    os << ',' << r.seconds << '\n';
  }
  if (!os) throw IoError("failed writing training log '" + path + "'");
}

namespace {

std::shared_ptr<ModelBundle> snapshot_bundle(const TrainableModel& model, const Dataset& data,
                                             const Normalizers& norm, const TrainingConfig& config,
                                             const std::vector<TrainingLogRow>& log, long iteration,
                                             const std::string& status) {
  auto b = std::make_shared<ModelBundle>();
  b->arch = model.arch;
  b->library = model.library;
  for (const auto& blk : model.store)
    if (blk.name.rfind("xi.", 0) != 0) b->params.add(blk.name, blk.value);
  for (std::size_t i = 0; i < model.xi.size(); ++i) {
    b->xi.push_back(model.store.block(model.xi[i]).value);
    b->train_mu.push_back(data.trajectories[i].mu);
  }
  b->norm = norm;
  b->times = data.times;
  b->config = config;
  b->status = status;
  b->iterations_run = iteration;
  b->log = log;
  return b;
}

}  // namespace

ModelBundle train(const Dataset& data, const ArchitectureSpec& arch, const LibrarySpec& library,
                  const TrainingConfig& config, const ProgressFn& progress) {
  config.validate();
  arch.validate();
  if (data.trajectories.empty()) throw InvalidArgument("dataset has no trajectories");
  const auto& first = data.trajectories.front();
  if (first.mu.size() != arch.param_dim || first.dim() != arch.spatial_dim ||
      first.field_count != arch.field_count)
    throw DimensionError("dataset dimensions do not match the architecture");

  const Normalizers norm = build_normalizers(data, config.range);
  const TrainingSet set = make_training_set(data, norm);
  TrainableModel model(arch, library, set.size(), config.seed);
  const LossWeights weights{config.w_id, config.w_z0, config.w_coef};
  const int workers = resolve_workers(config.workers);

  AdamState adam;
  std::vector<TrainingLogRow> log;
  std::shared_ptr<const ModelBundle> checkpoint =
      snapshot_bundle(model, data, norm, config, log, 0, "max-iterations");
  const auto start = std::chrono::steady_clock::now();
  std::string status = "max-iterations";
  long it = 1;
  for (; it <= config.iterations; ++it) {
    TrainingLogRow row;
    row.iteration = it;
    row.lr = lr_schedule(it - 1, config.learning_rate, config.lr_decay, config.lr_period);
    const Batch batch = make_batch(set, config.spatial_samples,
                                   config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(it));
    ad::GradBuffer grads(model.store);
    try {
      row.loss = total_loss(model, set, batch, weights, &grads, workers, config.chunk_rows);
    } catch (const DivergenceError& e) {
      throw TrainingDivergence(std::string("training diverged at iteration ") + std::to_string(it) +
                                   ": " + e.what(),
                               it, checkpoint);
    }
    model.store.zero_grad();
    grads.accumulate_into(model.store);
    adam_step(model.store, adam, row.lr);
    for (const auto& b : model.store)
      if (!b.value.allFinite())
        throw TrainingDivergence("training diverged at iteration " + std::to_string(it) +
                                     ": parameter block '" + b.name + "' became non-finite",
                                 it, checkpoint);
    bool stop = false;
    if (it % config.check_every == 0) {
      const auto r = latent_consistency(model, set, workers);
      row.latent_rl2 = *std::max_element(r.begin(), r.end());
      stop = row.latent_rl2 <= config.tol_latent && row.loss.total <= config.tol_loss;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(row);
    if (progress) progress(row);
    if (!std::isnan(row.latent_rl2))
      checkpoint = snapshot_bundle(model, data, norm, config, log, it, "max-iterations");
    if (stop) {
      status = "converged";
      break;
    }
  }
  const long ran = std::min<long>(it, config.iterations);
  ModelBundle out = *snapshot_bundle(model, data, norm, config, log, ran, status);
  return out;
}

}  // namespace latdyn
