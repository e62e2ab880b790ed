#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "latdyn/trajectory.hpp"

namespace latdyn::burgers {

/// u_t + (u·∇)u = (1/Re) Δu on a square box with homogeneous Dirichlet walls and a
/// Gaussian initial bump u = v = a exp(-(x1² + x2²) / (2 w²)).
struct BurgersConfig {
  double reynolds = 1e4;
  double box_lo = -3.0;
  double box_hi = 3.0;
  int segments = 50;
  double t_final = 1.0;
  int n_steps = 200;
  double picard_tol = 1e-10;
  int picard_max_sweeps = 50;

  double dt() const { return t_final / n_steps; }
  void validate() const;
};

nlohmann::json to_json(const BurgersConfig& c);
BurgersConfig burgers_config_from_json(const nlohmann::json& j);

enum class GridConvention {
  /// segments² nodes x_k = lo + k h, k = 0..segments-1 per axis. The far walls
  /// (x = hi) are omitted; they are identically zero under the wall condition.
  kPointCount,
  /// (segments+1)² nodes including every wall.
  kInclusive,
};

struct Grid {
  int segments = 0;
  double lo = -3.0;
  double hi = 3.0;
  double spacing = 0.0;
  int per_axis = 0;
  GridConvention convention = GridConvention::kPointCount;
  RowMatrix coords;           // N_u x 2, x1 varies fastest
  std::vector<bool> boundary; // true for nodes on the box walls

  Eigen::Index size() const { return coords.rows(); }
  std::string tag() const;
};

Grid make_grid(int segments, GridConvention convention = GridConvention::kPointCount,
               double lo = -3.0, double hi = 3.0);

/// N_u x 2 field (u, v); wall nodes are set to zero.
RowMatrix initial_field(double amplitude, double width, const Grid& grid);

/// Backward-Euler step with sign-aware first-order upwind convection and a
/// five-point Laplacian. The convective velocities are lagged (Picard) and each
/// sweep solves one banded system for both components.
class Solver {
 public:
  Solver(const BurgersConfig& config, const Grid& grid);

  /// Advances `field` (N_u x 2 on the solver grid) by one time step of size dt.
  RowMatrix step(const RowMatrix& field, double dt) const;
  int last_sweeps() const { return last_sweeps_; }

 private:
  BurgersConfig config_;
  Grid grid_;
  mutable int last_sweeps_ = 0;
};

RowMatrix step_implicit(const RowMatrix& field, const BurgersConfig& config, const Grid& grid);

/// Full trajectory with N_t + 1 snapshots (t = 0 included). Records wall-clock time.
FieldTrajectory simulate(double amplitude, double width, const BurgersConfig& config,
                         const Grid& grid);

/// Bilinear interpolation of nodal values on `grid` at arbitrary points inside
/// the box. Values on omitted far walls are taken as zero.
RowMatrix sample_bilinear(const Grid& grid, const RowMatrix& values, const RowMatrix& points);

}  // namespace latdyn::burgers
