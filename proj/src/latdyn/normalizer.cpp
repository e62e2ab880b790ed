#include "latdyn/normalizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "latdyn/error.hpp"
#include "latdyn/log.hpp"

namespace latdyn {

Normalizer::Normalizer(ad::Vector ref, ad::Vector half) : ref_(std::move(ref)), half_(std::move(half)) {
  if (ref_.size() != half_.size()) throw DimensionError("normalizer: reference and range sizes differ");
  for (Eigen::Index k = 0; k < half_.size(); ++k)
    if (!(half_[k] > 0.0) || !std::isfinite(half_[k]) || !std::isfinite(ref_[k]))
      throw InvalidArgument("normalizer: half-range must be positive and finite");
}

Normalizer Normalizer::from_bounds(const ad::Vector& lo, const ad::Vector& hi, double range) {
  if (lo.size() != hi.size()) throw DimensionError("normalizer: bound sizes differ");
  if (!(range > 0.0)) throw InvalidArgument("normalizer: range multiplier must be positive");
  ad::Vector ref(lo.size()), half(lo.size());
  for (Eigen::Index k = 0; k < lo.size(); ++k) {
    if (!(hi[k] >= lo[k])) throw InvalidArgument("normalizer: upper bound below lower bound");
    double w = (hi[k] - lo[k]) / 2.0;
    const double floor_w =
        std::max(std::abs(lo[k]), std::abs(hi[k])) * 1e3 * std::numeric_limits<double>::epsilon();
    if (w <= floor_w) {
      w = std::max(floor_w, 1e-12);
      log::warn("normalizer: component " + std::to_string(k) +
                " has a degenerate range; widened to half-width " + std::to_string(w));
    }
    const bool symmetric = std::abs(lo[k] + hi[k]) <= 1e-12 * std::max(std::abs(lo[k]), std::abs(hi[k]));
    const double scale = symmetric ? range : 1.0;
    ref[k] = scale * (lo[k] + hi[k]) / 2.0;
    half[k] = scale * w;
  }
  return Normalizer(ref, half);
}

Normalizer Normalizer::from_rows(const ad::Matrix& rows, double range) {
  if (rows.rows() == 0) throw InvalidArgument("normalizer: no samples");
  return from_bounds(rows.colwise().minCoeff().transpose(), rows.colwise().maxCoeff().transpose(),
                     range);
}

ad::Matrix Normalizer::normalize(const ad::Matrix& rows) const {
  if (rows.cols() != size()) throw DimensionError("normalizer: component count mismatch");
  return ((rows.rowwise() - ref_.transpose()).array().rowwise() / half_.transpose().array()).matrix();
}

ad::Matrix Normalizer::denormalize(const ad::Matrix& rows) const {
  if (rows.cols() != size()) throw DimensionError("normalizer: component count mismatch");
  return ((rows.array().rowwise() * half_.transpose().array()).rowwise() +
          ref_.transpose().array()).matrix();
}

ad::Vector Normalizer::normalize(const ad::Vector& v) const {
  if (v.size() != size()) throw DimensionError("normalizer: component count mismatch");
  return ((v - ref_).array() / half_.array()).matrix();
}

ad::Vector Normalizer::denormalize(const ad::Vector& v) const {
  if (v.size() != size()) throw DimensionError("normalizer: component count mismatch");
  return (v.array() * half_.array()).matrix() + ref_;
}

nlohmann::json to_json(const Normalizer& n) {
  return {{"ref", std::vector<double>(n.ref().data(), n.ref().data() + n.size())},
          {"half", std::vector<double>(n.half().data(), n.half().data() + n.size())}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  try {
    auto r = j.at("ref").get<std::vector<double>>();
    auto h = j.at("half").get<std::vector<double>>();
    return Normalizer(Eigen::Map<ad::Vector>(r.data(), static_cast<Eigen::Index>(r.size())),
                      Eigen::Map<ad::Vector>(h.data(), static_cast<Eigen::Index>(h.size())));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("normalizer: ") + e.what());
  }
}

}  // namespace latdyn
