#include "latdyn/idmodel.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "latdyn/error.hpp"
#include "latdyn/log.hpp"

namespace latdyn {

LibrarySpec::LibrarySpec(std::span<const TermKind> kinds) {
  if (kinds.empty()) throw SpecError("library needs at least one term kind");
  for (TermKind k : {TermKind::kConstant, TermKind::kLinear, TermKind::kQuadratic, TermKind::kCosine})
    if (std::find(kinds.begin(), kinds.end(), k) != kinds.end()) kinds_.push_back(k);
}

LibrarySpec LibrarySpec::constant_linear() {
  const TermKind k[] = {TermKind::kConstant, TermKind::kLinear};
  return LibrarySpec(k);
}

bool LibrarySpec::has(TermKind k) const {
  return std::find(kinds_.begin(), kinds_.end(), k) != kinds_.end();
}

int LibrarySpec::columns(int ns) const {
  if (kinds_.empty()) throw SpecError("empty library");
  int n = 0;
  for (TermKind k : kinds_) {
    switch (k) {
      case TermKind::kConstant: n += 1; break;
      case TermKind::kLinear: n += ns; break;
      case TermKind::kQuadratic: n += (ns + 1) * ns / 2; break;
      case TermKind::kCosine: n += ns; break;
    }
  }
  return n;
}

Matrix LibrarySpec::evaluate(const Matrix& z) const {
  const int ns = static_cast<int>(z.cols());
  Matrix theta(z.rows(), columns(ns));
  Eigen::Index c = 0;
  for (TermKind k : kinds_) {
    switch (k) {
      case TermKind::kConstant:
        theta.col(c++).setOnes();
        break;
      case TermKind::kLinear:
        theta.middleCols(c, ns) = z;
        c += ns;
        break;
      case TermKind::kQuadratic:
        for (int a = 0; a < ns; ++a)
          for (int b = a; b < ns; ++b) theta.col(c++) = z.col(a).cwiseProduct(z.col(b));
        break;
      case TermKind::kCosine:
        theta.middleCols(c, ns) = z.array().cos().matrix();
        c += ns;
        break;
    }
  }
  return theta;
}

Vector LibrarySpec::evaluate_row(const Vector& z) const {
  return evaluate(z.transpose()).row(0).transpose();
}

void LibrarySpec::backward(const Matrix& z, const Matrix& dtheta, Matrix& dz) const {
  const int ns = static_cast<int>(z.cols());
  Eigen::Index c = 0;
  for (TermKind k : kinds_) {
    switch (k) {
      case TermKind::kConstant:
        ++c;
        break;
      case TermKind::kLinear:
        dz += dtheta.middleCols(c, ns);
        c += ns;
        break;
      case TermKind::kQuadratic:
        for (int a = 0; a < ns; ++a) {
          for (int b = a; b < ns; ++b) {
            dz.col(a) += dtheta.col(c).cwiseProduct(z.col(b));
            dz.col(b) += dtheta.col(c).cwiseProduct(z.col(a));
            ++c;
          }
        }
        break;
      case TermKind::kCosine:
        dz -= (dtheta.middleCols(c, ns).array() * z.array().sin()).matrix();
        c += ns;
        break;
    }
  }
}

const char* term_name(TermKind k) {
  switch (k) {
    case TermKind::kConstant: return "constant";
    case TermKind::kLinear: return "linear";
    case TermKind::kQuadratic: return "quadratic";
    case TermKind::kCosine: return "cosine";
  }
  return "?";
}

TermKind term_from_name(const std::string& name) {
  if (name == "constant") return TermKind::kConstant;
  if (name == "linear") return TermKind::kLinear;
  if (name == "quadratic") return TermKind::kQuadratic;
  if (name == "cosine") return TermKind::kCosine;
  throw SpecError("unknown library term '" + name + "'");
}

nlohmann::json to_json(const LibrarySpec& spec) {
  nlohmann::json j = nlohmann::json::array();
  for (TermKind k : spec.kinds()) j.push_back(term_name(k));
  return j;
}

LibrarySpec library_from_json(const nlohmann::json& j) {
  std::vector<TermKind> kinds;
  for (const auto& e : j) kinds.push_back(term_from_name(e.get<std::string>()));
  return LibrarySpec(kinds);
}

Vector IDModel::rhs(const Vector& z) const {
  return (library.evaluate_row(z).transpose() * xi).transpose();
}

void IDModel::validate() const {
  if (xi.rows() != library.columns(static_cast<int>(xi.cols())))
    throw DimensionError("coefficient matrix rows do not match the library size");
  if (!xi.allFinite()) throw InvalidArgument("coefficient matrix has non-finite entries");
}

double id_loss(std::span<const LatentTrajectory> trajectories, std::span<const IDModel> models) {
  if (trajectories.size() != models.size())
    throw DimensionError("id_loss: one model per trajectory required");
  if (trajectories.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    const auto& m = models[i];
    if (tr.z.cols() != m.xi.cols() || tr.zdot.rows() != tr.z.rows() || tr.zdot.cols() != tr.z.cols())
      throw DimensionError("id_loss: latent width mismatch for trajectory " + std::to_string(i));
    const Matrix theta = m.library.evaluate(tr.z);
    if (theta.cols() != m.xi.rows())
      throw DimensionError("id_loss: library size mismatch for trajectory " + std::to_string(i));
    total += (tr.zdot - theta * m.xi).squaredNorm() / static_cast<double>(tr.z.cols());
  }
  return total / static_cast<double>(trajectories.size());
}

Matrix solve_latent_ode(const IDModel& model, const Vector& z0, std::span<const double> times) {
  model.validate();
  if (z0.size() != model.latent_dim()) throw DimensionError("initial state width mismatch");
  if (times.empty()) throw InvalidArgument("empty time grid");
  const std::size_t n = times.size();
  Matrix z(static_cast<Eigen::Index>(n), z0.size());
  z.row(0) = z0.transpose();
  if (n == 1) return z;
  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) throw InvalidArgument("time grid must be strictly increasing");
  for (std::size_t k = 1; k < n; ++k) {
    const double h = times[k] - times[k - 1];
    if (!(h > 0.0)) throw InvalidArgument("time grid must be strictly increasing");
    if (std::abs(h - dt) > 1e-6 * dt) throw InvalidArgument("time grid must be uniform");
  }
  Vector y = z0;
  for (std::size_t k = 1; k < n; ++k) {
    const Vector k1 = model.rhs(y);
    const Vector k2 = model.rhs(y + 0.5 * dt * k1);
    const Vector k3 = model.rhs(y + 0.5 * dt * k2);
    const Vector k4 = model.rhs(y + dt * k3);
    y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite())
      throw DivergenceError("latent ODE produced a non-finite state", static_cast<long>(k));
    z.row(static_cast<Eigen::Index>(k)) = y.transpose();
  }
  return z;
}

Matrix fit_coefficients_least_squares(const Matrix& z, const Matrix& zdot, const LibrarySpec& spec) {
  if (z.rows() != zdot.rows() || z.cols() != zdot.cols())
    throw DimensionError("state and derivative histories differ in shape");
  const Matrix theta = spec.evaluate(z);
  if (theta.rows() < theta.cols())
    throw InvalidArgument("need at least as many samples as library columns");
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(theta);
  if (cod.rank() < theta.cols())
    log::warn("library matrix is rank deficient; returning the minimum-norm solution");
  return cod.solve(zdot);
}

Matrix fit_coefficients_least_squares(const LatentTrajectory& trajectory, const LibrarySpec& spec) {
  return fit_coefficients_least_squares(trajectory.z, trajectory.zdot, spec);
}

namespace {

class LibraryOp final : public ad::CustomOp {
 public:
  explicit LibraryOp(LibrarySpec spec) : spec_(std::move(spec)) {}
  std::string_view name() const override { return "library"; }
  void forward(std::span<const Matrix* const> in, Matrix& out) override {
    out = spec_.evaluate(*in[0]);
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g,
                std::span<Matrix* const> gin, ad::GradBuffer&) override {
    if (gin[0]) spec_.backward(*in[0], g, *gin[0]);
  }

 private:
  LibrarySpec spec_;
};

class RowProductOp final : public ad::CustomOp {
 public:
  std::string_view name() const override { return "row_product"; }
  void forward(std::span<const Matrix* const> in, Matrix& out) override {
    const Matrix& theta = *in[0];
    const Eigen::Index ns = in[1]->cols();
    out.resize(theta.rows(), ns);
    for (Eigen::Index r = 0; r < theta.rows(); ++r)
      out.row(r).noalias() = theta.row(r) * (*in[static_cast<std::size_t>(r) + 1]);
  }
  void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& g,
                std::span<Matrix* const> gin, ad::GradBuffer&) override {
    const Matrix& theta = *in[0];
    for (Eigen::Index r = 0; r < theta.rows(); ++r) {
      const std::size_t k = static_cast<std::size_t>(r) + 1;
      if (gin[0]) gin[0]->row(r).noalias() += g.row(r) * in[k]->transpose();
      if (gin[k]) gin[k]->noalias() += theta.row(r).transpose() * g.row(r);
    }
  }
};

}  // namespace

ad::NodeId record_library(ad::Tape& tape, const LibrarySpec& spec, ad::NodeId z) {
  return tape.custom(std::make_shared<LibraryOp>(spec), {z});
}

ad::NodeId record_row_product(ad::Tape& tape, ad::NodeId theta, std::span<const ad::NodeId> xi) {
  const Matrix& th = tape.value(theta);
  if (static_cast<Eigen::Index>(xi.size()) != th.rows())
    throw DimensionError("row product needs one coefficient matrix per row");
  std::vector<ad::NodeId> inputs{theta};
  for (ad::NodeId x : xi) {
    if (tape.value(x).rows() != th.cols() || tape.value(x).cols() != tape.value(xi[0]).cols())
      throw DimensionError("coefficient matrix shape does not match the library");
    inputs.push_back(x);
  }
  return tape.custom(std::make_shared<RowProductOp>(), std::move(inputs));
}

}  // namespace latdyn
