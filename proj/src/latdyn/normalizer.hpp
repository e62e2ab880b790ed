#pragma once

#include <nlohmann/json.hpp>

#include "latdyn/autodiff.hpp"

namespace latdyn {

/// Componentwise affine map v -> (v - ref) / half with ref = (lo + hi) / 2 and
/// half = (hi - lo) / 2. For ranges centred on the origin both are multiplied by
/// the range multiplier L.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(ad::Vector ref, ad::Vector half);

  /// Degenerate components (hi == lo) are widened with a warning.
  static Normalizer from_bounds(const ad::Vector& lo, const ad::Vector& hi, double range = 1.0);
  /// Bounds of the columns of `rows`.
  static Normalizer from_rows(const ad::Matrix& rows, double range = 1.0);

  Eigen::Index size() const { return ref_.size(); }
  const ad::Vector& ref() const { return ref_; }
  const ad::Vector& half() const { return half_; }

  /// Rows are samples, columns components.
  ad::Matrix normalize(const ad::Matrix& rows) const;
  ad::Matrix denormalize(const ad::Matrix& rows) const;
  ad::Vector normalize(const ad::Vector& v) const;
  ad::Vector denormalize(const ad::Vector& v) const;

 private:
  ad::Vector ref_;
  ad::Vector half_;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

}  // namespace latdyn
