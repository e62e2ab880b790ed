#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latdyn/autodiff.hpp"
#include "latdyn/networks.hpp"

namespace latdyn {

enum class TermKind { kConstant, kLinear, kQuadratic, kCosine };

/// Candidate functions for the latent ODE right-hand side. Columns are always
/// laid out constant | linear z_1..z_Ns | quadratic z_a*z_b (a <= b, row-major
/// upper triangle) | cos z_1..cos z_Ns, skipping disabled kinds.
class LibrarySpec {
 public:
  LibrarySpec() = default;
  /// Throws SpecError when `kinds` is empty; duplicates are ignored.
  explicit LibrarySpec(std::span<const TermKind> kinds);

  static LibrarySpec constant_linear();

  bool has(TermKind k) const;
  const std::vector<TermKind>& kinds() const { return kinds_; }
  int columns(int latent_dim) const;

  /// Θ(z) for each row of z (T x N_s) -> T x N_b.
  Matrix evaluate(const Matrix& z) const;
  /// Θ(z) for a single state.
  Vector evaluate_row(const Vector& z) const;
  /// Accumulates dL/dz given dL/dΘ.
  void backward(const Matrix& z, const Matrix& dtheta, Matrix& dz) const;

 private:
  std::vector<TermKind> kinds_;
};

nlohmann::json to_json(const LibrarySpec& spec);
LibrarySpec library_from_json(const nlohmann::json& j);
const char* term_name(TermKind k);
TermKind term_from_name(const std::string& name);

struct IDModel {
  LibrarySpec library;
  Matrix xi;  // N_b x N_s
  Vector mu;  // owning parameter point (raw units)

  int latent_dim() const { return static_cast<int>(xi.cols()); }
  /// dz/dt = Θ(z) Ξ
  Vector rhs(const Vector& z) const;
  void validate() const;
};

/// (1/N_mu) Σ_i (1/N_s) Σ_j ||zdot_i^(j) - Θ(z_i) ξ_i^(j)||², with zdot taken from
/// each trajectory's network derivatives.
double id_loss(std::span<const LatentTrajectory> trajectories, std::span<const IDModel> models);

/// Classic fourth-order Runge-Kutta over a uniform, strictly increasing grid.
/// Returns one row per grid time.
Matrix solve_latent_ode(const IDModel& model, const Vector& z0, std::span<const double> times);

/// Ξ = argmin ||zdot - Θ(z) Ξ||_F, minimum-norm when Θ is rank deficient.
Matrix fit_coefficients_least_squares(const LatentTrajectory& trajectory, const LibrarySpec& spec);
Matrix fit_coefficients_least_squares(const Matrix& z, const Matrix& zdot, const LibrarySpec& spec);

// Tape primitives ------------------------------------------------------------

/// Θ(z) as a tape node.
ad::NodeId record_library(ad::Tape& tape, const LibrarySpec& spec, ad::NodeId z);

/// Row r of the result is Θ_r · Ξ_r, pairing each batch row with its own
/// coefficient matrix node.
ad::NodeId record_row_product(ad::Tape& tape, ad::NodeId theta, std::span<const ad::NodeId> xi);

}  // namespace latdyn
