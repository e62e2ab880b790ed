#include "latdyn/burgers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <lapacke.h>

#include "latdyn/error.hpp"

namespace latdyn::burgers {

void BurgersConfig::validate() const {
  if (!(reynolds > 0.0)) throw InvalidArgument("Reynolds number must be positive");
  if (!(box_hi > box_lo)) throw InvalidArgument("domain box is empty");
  if (segments < 2) throw InvalidArgument("need at least 2 segments per edge");
  if (!(t_final > 0.0) || n_steps < 1) throw InvalidArgument("time step must be positive");
  if (!(picard_tol > 0.0) || picard_max_sweeps < 1)
    throw InvalidArgument("Picard tolerance and sweep limit must be positive");
}

nlohmann::json to_json(const BurgersConfig& c) {
  return {{"reynolds", c.reynolds},     {"box_lo", c.box_lo},         {"box_hi", c.box_hi},
          {"segments", c.segments},     {"t_final", c.t_final},       {"n_steps", c.n_steps},
          {"picard_tol", c.picard_tol}, {"picard_max_sweeps", c.picard_max_sweeps}};
}

BurgersConfig burgers_config_from_json(const nlohmann::json& j) {
  BurgersConfig c;
  c.reynolds = j.value("reynolds", c.reynolds);
  c.box_lo = j.value("box_lo", c.box_lo);
  c.box_hi = j.value("box_hi", c.box_hi);
  c.segments = j.value("segments", c.segments);
  c.t_final = j.value("t_final", c.t_final);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.picard_tol = j.value("picard_tol", c.picard_tol);
  c.picard_max_sweeps = j.value("picard_max_sweeps", c.picard_max_sweeps);
  c.validate();
  return c;
}

std::string Grid::tag() const {
  std::ostringstream os;
  os << (convention == GridConvention::kPointCount ? "uniform-" : "uniform-inclusive-") << segments;
  return os.str();
}

Grid make_grid(int segments, GridConvention convention, double lo, double hi) {
  if (segments < 2) throw InvalidArgument("need at least 2 segments per edge");
  if (!(hi > lo)) throw InvalidArgument("domain box is empty");
  Grid g;
  g.segments = segments;
  g.lo = lo;
  g.hi = hi;
  g.spacing = (hi - lo) / segments;
  g.convention = convention;
  g.per_axis = convention == GridConvention::kPointCount ? segments : segments + 1;
  const int n = g.per_axis;
  g.coords.resize(static_cast<Eigen::Index>(n) * n, 2);
  g.boundary.assign(static_cast<std::size_t>(n) * n, false);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index p = static_cast<Eigen::Index>(j) * n + i;
      g.coords(p, 0) = lo + i * g.spacing;
      g.coords(p, 1) = lo + j * g.spacing;
      g.boundary[static_cast<std::size_t>(p)] =
          i == 0 || j == 0 || i == segments || j == segments;
    }
  }
  return g;
}

RowMatrix initial_field(double amplitude, double width, const Grid& grid) {
  if (!(width > 0.0)) throw InvalidArgument("Gaussian width must be positive");
  RowMatrix f(grid.size(), 2);
  const double inv = 1.0 / (2.0 * width * width);
  for (Eigen::Index p = 0; p < grid.size(); ++p) {
    const double x = grid.coords(p, 0), y = grid.coords(p, 1);
    const double val = grid.boundary[static_cast<std::size_t>(p)]
                           ? 0.0
                           : amplitude * std::exp(-(x * x + y * y) * inv);
    f(p, 0) = val;
    f(p, 1) = val;
  }
  return f;
}

namespace {

// Interior unknowns of the inclusive lattice, x1 fastest.
struct Lattice {
  int s = 0;   // segments
  int ni = 0;  // interior nodes per axis
  int n() const { return ni * ni; }
};

// Grid node index of lattice node (i, j), or -1 when the grid omits it.
Eigen::Index grid_index(const Grid& g, int i, int j) {
  if (i >= g.per_axis || j >= g.per_axis) return -1;
  return static_cast<Eigen::Index>(j) * g.per_axis + i;
}

void gather_interior(const Grid& g, const RowMatrix& field, const Lattice& L, Eigen::VectorXd& w) {
  w.resize(2 * L.n());
  for (int j = 1; j <= L.ni; ++j)
    for (int i = 1; i <= L.ni; ++i) {
      const Eigen::Index p = grid_index(g, i, j);
      const int k = (j - 1) * L.ni + (i - 1);
      w[k] = field(p, 0);
      w[L.n() + k] = field(p, 1);
    }
}

}  // namespace

Solver::Solver(const BurgersConfig& config, const Grid& grid) : config_(config), grid_(grid) {
  config_.validate();
  if (grid.size() == 0) throw InvalidArgument("empty grid");
}

RowMatrix Solver::step(const RowMatrix& field, double dt) const {
  if (field.rows() != grid_.size() || field.cols() != 2)
    throw DimensionError("Burgers field must be N_u x 2 on the solver grid");
  if (!field.allFinite()) throw InvalidArgument("Burgers field has non-finite values");
  if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");

  const Lattice L{grid_.segments, grid_.segments - 1};
  const int n = L.n();
  const int kl = L.ni, ku = L.ni;
  const int ldab = 2 * kl + ku + 1;
  const double h = grid_.spacing;
  const double nu = 1.0 / config_.reynolds;
  const double dif = nu / (h * h);

  Eigen::VectorXd old, cur, next(2 * n), rhs(2 * n);
  gather_interior(grid_, field, L, old);
  cur = old;
  std::vector<double> ab(static_cast<std::size_t>(ldab) * n);
  std::vector<lapack_int> ipiv(n);
  auto at = [&](int r, int c) -> double& {
    return ab[static_cast<std::size_t>(c) * ldab + (kl + ku + r - c)];
  };

  double change = 0.0;
  for (int sweep = 1; sweep <= config_.picard_max_sweeps; ++sweep) {
    std::fill(ab.begin(), ab.end(), 0.0);
    for (int j = 1; j <= L.ni; ++j) {
      for (int i = 1; i <= L.ni; ++i) {
        const int k = (j - 1) * L.ni + (i - 1);
        const double a = cur[k], b = cur[n + k];
        at(k, k) = 1.0 / dt + (std::abs(a) + std::abs(b)) / h + 4.0 * dif;
        if (i > 1) at(k, k - 1) = -std::max(a, 0.0) / h - dif;
        if (i < L.ni) at(k, k + 1) = std::min(a, 0.0) / h - dif;
        if (j > 1) at(k, k - L.ni) = -std::max(b, 0.0) / h - dif;
        if (j < L.ni) at(k, k + L.ni) = std::min(b, 0.0) / h - dif;
      }
    }
    rhs = old / dt;
    lapack_int info = LAPACKE_dgbtrf(LAPACK_COL_MAJOR, n, n, kl, ku, ab.data(), ldab, ipiv.data());
    if (info != 0) throw SolverError("banded factorization failed (info " + std::to_string(info) + ")");
    info = LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', n, kl, ku, 2, ab.data(), ldab, ipiv.data(),
                          rhs.data(), n);
    if (info != 0) throw SolverError("banded solve failed (info " + std::to_string(info) + ")");
    next = rhs;
    if (!next.allFinite()) throw SolverError("Picard iterate became non-finite");
    change = (next - cur).lpNorm<Eigen::Infinity>();
    cur.swap(next);
    if (change <= config_.picard_tol) {
      last_sweeps_ = sweep;
      RowMatrix out = RowMatrix::Zero(grid_.size(), 2);
      for (int jj = 1; jj <= L.ni; ++jj)
        for (int ii = 1; ii <= L.ni; ++ii) {
          const int k = (jj - 1) * L.ni + (ii - 1);
          const Eigen::Index p = grid_index(grid_, ii, jj);
          out(p, 0) = cur[k];
          out(p, 1) = cur[n + k];
        }
      return out;
    }
  }
  std::ostringstream os;
  os << "Picard iteration did not converge in " << config_.picard_max_sweeps
     << " sweeps (last change " << change << ")";
  throw SolverError(os.str());
}

RowMatrix step_implicit(const RowMatrix& field, const BurgersConfig& config, const Grid& grid) {
  return Solver(config, grid).step(field, config.dt());
}

FieldTrajectory simulate(double amplitude, double width, const BurgersConfig& config,
                         const Grid& grid) {
  const auto start = std::chrono::steady_clock::now();
  Solver solver(config, grid);
  FieldTrajectory tr;
  tr.mu.resize(2);
  tr.mu << amplitude, width;
  tr.field_count = 2;
  tr.coords = grid.coords;
  tr.grid_tag = grid.tag();
  tr.fields.resize(config.n_steps + 1, grid.size() * 2);
  tr.times.resize(static_cast<std::size_t>(config.n_steps) + 1);
  const double dt = config.dt();
  RowMatrix u = initial_field(amplitude, width, grid);
  for (int m = 0; m <= config.n_steps; ++m) {
    if (m > 0) u = solver.step(u, dt);
    tr.times[static_cast<std::size_t>(m)] = m * dt;
    tr.snapshot(m) = u;
  }
  tr.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return tr;
}

RowMatrix sample_bilinear(const Grid& grid, const RowMatrix& values, const RowMatrix& points) {
  if (values.rows() != grid.size()) throw DimensionError("values do not match the grid");
  if (points.cols() != 2) throw DimensionError("query points must have two coordinates");
  const int s = grid.segments;
  const double h = grid.spacing;
  const double slack = 1e-9 * (grid.hi - grid.lo);
  auto node = [&](int i, int j, Eigen::Index f) {
    const Eigen::Index p = grid_index(grid, i, j);
    return p < 0 ? 0.0 : values(p, f);
  };
  RowMatrix out(points.rows(), values.cols());
  for (Eigen::Index q = 0; q < points.rows(); ++q) {
    const double x = points(q, 0), y = points(q, 1);
    if (x < grid.lo - slack || x > grid.hi + slack || y < grid.lo - slack || y > grid.hi + slack)
      throw InvalidArgument("query point lies outside the grid box");
    const double fx = std::clamp((x - grid.lo) / h, 0.0, static_cast<double>(s));
    const double fy = std::clamp((y - grid.lo) / h, 0.0, static_cast<double>(s));
    const int i0 = std::min(static_cast<int>(fx), s - 1);
    const int j0 = std::min(static_cast<int>(fy), s - 1);
    const double tx = fx - i0, ty = fy - j0;
    for (Eigen::Index f = 0; f < values.cols(); ++f) {
      out(q, f) = (1 - tx) * (1 - ty) * node(i0, j0, f) + tx * (1 - ty) * node(i0 + 1, j0, f) +
                  (1 - tx) * ty * node(i0, j0 + 1, f) + tx * ty * node(i0 + 1, j0 + 1, f);
    }
  }
  return out;
}

}  // namespace latdyn::burgers
