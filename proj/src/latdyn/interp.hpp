#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latdyn/autodiff.hpp"

namespace latdyn {

using ad::Matrix;
using ad::Vector;

enum class DistanceSpace { kRaw, kNormalized };

struct KnnConfig {
  int k = 5;
  double power = 2.0;
  double match_eps = 1e-12;
  DistanceSpace space = DistanceSpace::kNormalized;

  void validate() const;
};

struct InterpolationResult {
  Matrix xi;
  std::vector<std::size_t> neighbors;  // indices into the trained set, nearest first
  std::vector<double> weights;         // aligned with `neighbors`
  bool exact_match = false;
};

/// Euclidean distance over the parameter components.
double parameter_distance(const Vector& a, const Vector& b);

/// φ_i = d_i^-p / Σ_j d_j^-p. Zero distances must take the exact-match path.
std::vector<double> idw_weights(std::span<const double> distances, double power);

/// Indices of the k nearest points; ties are broken by lower index.
std::vector<std::size_t> nearest_neighbors(std::span<const Vector> points, const Vector& query, int k);

/// KNN + inverse-distance interpolation of each coefficient independently. The
/// caller supplies points in whichever space distances should be measured.
InterpolationResult interpolate_coefficients(const Vector& query, std::span<const Vector> points,
                                             std::span<const Matrix> coefficients,
                                             const KnnConfig& config);

}  // namespace latdyn
