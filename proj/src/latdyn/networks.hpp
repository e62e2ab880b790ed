#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latdyn/autodiff.hpp"

namespace latdyn {

using ad::Matrix;
using ad::Vector;

enum class LayerKind { kAffine, kResNet };
enum class Activation { kNone, kTanh };

/// One entry of a network listing. `activation` is applied to the layer output.
/// A ResNet block is two affine maps with a tanh between them plus a skip path;
/// the skip is the identity when in == out and a learned affine map otherwise.
struct LayerSpec {
  LayerKind kind = LayerKind::kAffine;
  int in = 0;
  int out = 0;
  Activation activation = Activation::kNone;
};

struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;

  int input_width() const;
  int output_width() const;
};

struct ArchitectureSpec {
  int latent_dim = 5;    // N_s
  int param_dim = 2;     // N_D
  int spatial_dim = 2;   // d
  int field_count = 2;   // N_f
  int taylor_order = 2;  // 1 or 2
  NetworkSpec dyn;
  NetworkSpec rec;
  NetworkSpec z0;

  /// Throws SpecError when a width contract between the three networks is broken.
  void validate() const;

  /// The three networks used for the 2D Burgers problem.
  static ArchitectureSpec burgers(int latent_dim, int taylor_order = 2);
  /// Same widths with arbitrary dimensions; used for ingested data sets.
  static ArchitectureSpec standard(int latent_dim, int param_dim, int spatial_dim, int field_count,
                                   int taylor_order);
};

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& j);

/// Allocates all network blocks in `store`, names prefixed by the network name
/// ("dyn.", "rec.", "z0."). Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)), biases 0.
void build_networks(const ArchitectureSpec& spec, std::uint64_t seed, ad::ParamStore& store);

/// Evaluates one network against a ParamStore, either on a tape or directly.
class Network {
 public:
  Network() = default;
  Network(const NetworkSpec& spec, const ad::ParamStore& store);

  const NetworkSpec& spec() const { return spec_; }

  ad::NodeId record(ad::Tape& tape, ad::NodeId input) const;
  /// Batched evaluation; rows of `input` are independent queries.
  Matrix evaluate(const ad::ParamStore& store, const Matrix& input) const;

 private:
  struct Blocks {
    std::size_t w = 0, b = 0;    // affine, or first map of a block
    std::size_t w2 = 0, b2 = 0;  // second map of a block
    std::size_t wp = 0, bp = 0;  // skip projection
    bool projected = false;
  };
  NetworkSpec spec_;
  std::vector<Blocks> blocks_;
};

/// F(x) + skip(x) for one ResNet block held in `store` under `prefix` (e.g. "dyn.1").
Matrix resnet_block_forward(const ad::ParamStore& store, const std::string& prefix,
                            const Matrix& x);

struct LatentTrajectory {
  std::vector<double> times;
  Matrix z;      // (N_t+1) x N_s
  Matrix zdot;   // (N_t+1) x N_s, network output at each state
  Matrix zddot;  // (N_t+1) x N_s when order 2, empty otherwise
};

/// The dynamics, reconstruction and initial-state networks of one model.
class LatentModel {
 public:
  LatentModel(const ArchitectureSpec& spec, const ad::ParamStore& store);

  const ArchitectureSpec& spec() const { return spec_; }
  const Network& dyn() const { return dyn_; }
  const Network& rec() const { return rec_; }
  const Network& z0() const { return z0_; }

  /// z(0) for normalized parameter points (one per row).
  Matrix initial_state(const ad::ParamStore& store, const Matrix& mu_normalized) const;

  /// Explicit Taylor stepping z_{m+1} = z_m + dt*zdot_m (+ dt^2*zddot_m). Derivatives are
  /// also evaluated at the final state so every row of the trajectory has one.
  LatentTrajectory rollout(const ad::ParamStore& store, const Vector& z0, const Vector& mu_normalized,
                           double dt, int n_steps) const;

  /// Field values at each row of `coords` for one latent state; returns M x N_f.
  Matrix reconstruct(const ad::ParamStore& store, const Vector& z, const Vector& mu_normalized,
                     const Matrix& coords_normalized) const;

 private:
  ArchitectureSpec spec_;
  Network dyn_;
  Network rec_;
  Network z0_;
};

/// Tape form of the rollout, batched over parameter points (rows).
struct RolloutNodes {
  std::vector<ad::NodeId> z;     // N_t+1 nodes, each N_mu x N_s
  std::vector<ad::NodeId> zdot;  // N_t+1 nodes
};

RolloutNodes record_rollout(ad::Tape& tape, const Network& dyn, int order, ad::NodeId z0,
                            ad::NodeId mu_normalized, double dt, int n_steps);

}  // namespace latdyn
