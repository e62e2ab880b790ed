#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace latdyn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Snapshots of one parameter instance. `fields` row t holds the snapshot at
/// times[t], point-major with field components innermost, so the whole array is
/// the row-major (N_t+1) x N_u x N_f tensor.
struct FieldTrajectory {
  std::string id;
  Eigen::VectorXd mu;
  std::vector<double> times;
  RowMatrix coords;  // N_u x d
  RowMatrix fields;  // (N_t+1) x (N_u * N_f)
  int field_count = 1;
  std::string grid_tag;
  double wall_clock_seconds = 0.0;

  Eigen::Index n_times() const { return fields.rows(); }
  Eigen::Index n_points() const { return coords.rows(); }
  Eigen::Index dim() const { return coords.cols(); }

  /// Snapshot t as an N_u x N_f row-major view.
  Eigen::Map<const RowMatrix> snapshot(Eigen::Index t) const {
    return {fields.row(t).data(), n_points(), field_count};
  }
  Eigen::Map<RowMatrix> snapshot(Eigen::Index t) {
    return {fields.row(t).data(), n_points(), field_count};
  }
};

/// A set of trajectories sharing one time grid. Each trajectory may carry its
/// own coordinates, so mixed-resolution and unstructured data live side by side.
struct Dataset {
  std::vector<std::pair<double, double>> domain_box;  // one (lo, hi) per spatial axis
  std::vector<double> times;
  std::vector<std::string> fields;
  std::vector<FieldTrajectory> trajectories;
  nlohmann::json metadata = nlohmann::json::object();  // solver settings and other provenance
};

}  // namespace latdyn
