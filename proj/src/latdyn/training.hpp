#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latdyn/autodiff.hpp"
#include "latdyn/error.hpp"
#include "latdyn/idmodel.hpp"
#include "latdyn/networks.hpp"
#include "latdyn/normalizer.hpp"
#include "latdyn/trajectory.hpp"

namespace latdyn {

struct TrainingConfig {
  int iterations = 6000;
  int check_every = 500;          // N_tol
  double tol_latent = 1.0;        // tol_1, percent
  double tol_loss = 1e-4;         // tol_2
  double w_id = 0.05;
  double w_z0 = 0.5;
  double w_coef = 0.0;
  double learning_rate = 0.05;
  double lr_decay = 0.6;
  int lr_period = 500;
  int spatial_samples = 0;        // points per (trajectory, time) each iteration; 0 = all
  double range = 1.0;             // L_range
  std::uint64_t seed = 0;
  int workers = 0;                // 0 = hardware concurrency
  int chunk_rows = 2048;

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j);

double lr_schedule(long iteration, double initial, double factor, int period);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One Adam update of every block in `store` from its gradient buffer.
void adam_step(ad::ParamStore& store, AdamState& state, double lr);

struct Normalizers {
  Normalizer mu;
  Normalizer x;
  Normalizer u;
};

nlohmann::json to_json(const Normalizers& n);
Normalizers normalizers_from_json(const nlohmann::json& j);

/// μ bounds from the training parameters, x from the domain box, u per field
/// component over all snapshots.
Normalizers build_normalizers(const Dataset& data, double range);

/// Normalized training arrays.
struct TrainingSet {
  std::vector<double> times;
  double dt = 0.0;
  int n_steps = 0;
  int field_count = 0;
  Matrix mu;                        // N_mu x N_D, normalized
  std::vector<RowMatrix> coords;    // per trajectory, N_u x d, normalized
  std::vector<RowMatrix> fields;    // per trajectory, (N_t+1) x (N_u N_f), normalized

  int size() const { return static_cast<int>(coords.size()); }
};

/// Validates shapes and the time grid, then normalizes.
TrainingSet make_training_set(const Dataset& data, const Normalizers& norm);

/// Point indices drawn for each (time, trajectory) group, time-major.
struct Batch {
  std::vector<std::int32_t> points;
  std::vector<std::size_t> offsets;  // size N_groups + 1
  int n_traj = 0;
  int n_times = 0;
};

/// All points, or `samples` points per group drawn uniformly with replacement.
Batch make_batch(const TrainingSet& set, int samples, std::uint64_t seed);

struct LossWeights {
  double w_id = 0.05;
  double w_z0 = 0.5;
  double w_coef = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double rec = 0.0;
  double z0 = 0.0;
  double id = 0.0;
  double coef = 0.0;
};

/// Learnable state of one training run: network blocks followed by one
/// coefficient block "xi.<i>" per training trajectory.
struct TrainableModel {
  ArchitectureSpec arch;
  LibrarySpec library;
  ad::ParamStore store;
  std::vector<std::size_t> xi;  // block index per trajectory

  TrainableModel(const ArchitectureSpec& arch, const LibrarySpec& library, int n_traj,
                 std::uint64_t seed);
};

/// Loss_rec + ω_z0 Loss_z0 + ω_ID Loss_dz/dt + ω_coef Σ_i ||Ξ_i||². When `grads` is
/// given it receives the gradient of the total. `latent` (optional) receives the
/// rollout states, one (N_t+1) x N_s matrix per trajectory.
LossBreakdown total_loss(const TrainableModel& model, const TrainingSet& set, const Batch& batch,
                         const LossWeights& weights, ad::GradBuffer* grads, int workers,
                         Eigen::Index chunk_rows = 2048, std::vector<Matrix>* latent = nullptr);

/// r_L2 between each rollout trajectory and its ID-model re-solve, in percent.
std::vector<double> latent_consistency(const TrainableModel& model, const TrainingSet& set, int workers = 0);

struct TrainingLogRow {
  long iteration = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double latent_rl2 = std::numeric_limits<double>::quiet_NaN();  // only at checks
  double seconds = 0.0;
};

void write_training_log_csv(const std::string& path, const std::vector<TrainingLogRow>& log);

struct ModelBundle;

/// Training diverged; carries the model state at the last completed check.
class TrainingDivergence : public DivergenceError {
 public:
  TrainingDivergence(const std::string& what, long iteration, std::shared_ptr<const ModelBundle> checkpoint)
      : DivergenceError(what, iteration), checkpoint_(std::move(checkpoint)) {}
  const std::shared_ptr<const ModelBundle>& checkpoint() const { return checkpoint_; }

 private:
  std::shared_ptr<const ModelBundle> checkpoint_;
};

using ProgressFn = std::function<void(const TrainingLogRow&)>;

ModelBundle train(const Dataset& data, const ArchitectureSpec& arch, const LibrarySpec& library,
                  const TrainingConfig& config, const ProgressFn& progress = {});

}  // namespace latdyn
