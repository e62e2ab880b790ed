#include "latdyn/interp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latdyn/error.hpp"
#include "latdyn/log.hpp"

namespace latdyn {

void KnnConfig::validate() const {
  if (k < 1) throw InvalidArgument("knn: k must be at least 1");
  if (!(power > 0.0)) throw InvalidArgument("knn: distance power must be positive");
  if (!(match_eps >= 0.0)) throw InvalidArgument("knn: match threshold must be non-negative");
}

double parameter_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw DimensionError("parameter points differ in dimension (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  return (a - b).norm();
}

std::vector<double> idw_weights(std::span<const double> distances, double power) {
  if (distances.empty()) throw InvalidArgument("idw: no distances");
  double dmin = distances[0];
  for (double d : distances) {
    if (!(d > 0.0))
      throw InvalidArgument("idw: zero distance; exact matches must use the direct assignment path");
    dmin = std::min(dmin, d);
  }
  // (dmin/d)^p keeps the largest raw weight at 1 and avoids overflow.
  std::vector<double> w(distances.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::pow(dmin / distances[i], power);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

std::vector<std::size_t> nearest_neighbors(std::span<const Vector> points, const Vector& query, int k) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    order.emplace_back(parameter_distance(points[i], query), i);
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end());
  std::vector<std::size_t> out(kk);
  for (std::size_t i = 0; i < kk; ++i) out[i] = order[i].second;
  return out;
}

InterpolationResult interpolate_coefficients(const Vector& query, std::span<const Vector> points,
                                             std::span<const Matrix> coefficients,
                                             const KnnConfig& config) {
  config.validate();
  if (points.empty()) throw InvalidArgument("interpolation needs a non-empty trained set");
  if (points.size() != coefficients.size())
    throw DimensionError("one coefficient matrix per trained point required");
  for (const auto& c : coefficients)
    if (c.rows() != coefficients[0].rows() || c.cols() != coefficients[0].cols())
      throw DimensionError("coefficient matrices differ in shape");

  int k = config.k;
  if (static_cast<std::size_t>(k) > points.size()) {
    log::warn("knn: k=" + std::to_string(k) + " exceeds the trained set size " +
              std::to_string(points.size()) + "; clamping");
    k = static_cast<int>(points.size());
  }
  const auto nn = nearest_neighbors(points, query, k);

  InterpolationResult result;
  const double dmin = parameter_distance(points[nn[0]], query);
  if (dmin <= config.match_eps) {
    result.xi = coefficients[nn[0]];
    result.neighbors = {nn[0]};
    result.weights = {1.0};
    result.exact_match = true;
    return result;
  }
  std::vector<double> d;
  d.reserve(nn.size());
  for (std::size_t i : nn) d.push_back(parameter_distance(points[i], query));
  result.weights = idw_weights(d, config.power);
  result.neighbors = nn;
  result.xi = Matrix::Zero(coefficients[0].rows(), coefficients[0].cols());
  for (std::size_t j = 0; j < nn.size(); ++j) result.xi += result.weights[j] * coefficients[nn[j]];
  return result;
}

}  // namespace latdyn
