#pragma once

#include <nlohmann/json.hpp>

#include "latdyn/burgers.hpp"
#include "latdyn/idmodel.hpp"
#include "latdyn/interp.hpp"
#include "latdyn/networks.hpp"
#include "latdyn/training.hpp"

namespace latdyn::config {

// One flat JSON object covers every command. Keys and defaults:
//
//   seed 0, workers 0 (all cores)
//   generate:  reynolds 1e4, segments 50, t_final 1, n_steps 200, picard_tol 1e-10,
//              picard_max_sweeps 50, mu_box [[0.7,0.9],[0.9,1.1]], n_train 25,
//              train_sampling "random", n_test 225, test_sampling "uniform-grid",
//              multiscale_segments [] (e.g. [50,60,70] splits the training set),
//              test_segments 0 (= segments)
//   train:     latent_dim 5, taylor_order 2, library ["constant","linear"],
//              iterations 6000, check_every 500, tol_latent 1.0, tol_loss 1e-4,
//              w_id 0.05, w_z0 0.5, w_coef 0, learning_rate 0.05, lr_decay 0.6,
//              lr_period 500, spatial_samples 0 (all points), range 1, chunk_rows 2048
//   predict:   knn_k 5, knn_power 2, knn_match_eps 1e-12, knn_space "normalized"
//
// Precedence: defaults < config file < command-line flags.

nlohmann::json defaults();

/// Overlays `user` on the defaults. Unknown keys and mistyped values are SpecErrors.
nlohmann::json resolve(const nlohmann::json& user);

struct GenerateConfig {
  burgers::BurgersConfig solver;
  std::vector<std::pair<double, double>> mu_box;
  int n_train = 25;
  std::string train_sampling = "random";
  int n_test = 225;
  std::string test_sampling = "uniform-grid";
  std::vector<int> multiscale_segments;
  int test_segments = 0;
  std::uint64_t seed = 0;
  int workers = 0;
};

GenerateConfig generate_config(const nlohmann::json& resolved);
TrainingConfig training_config(const nlohmann::json& resolved);
LibrarySpec library(const nlohmann::json& resolved);
KnnConfig knn_config(const nlohmann::json& resolved);
int latent_dim(const nlohmann::json& resolved);
int taylor_order(const nlohmann::json& resolved);

}  // namespace latdyn::config
