#pragma once

#include <string>
#include <vector>

#include "latdyn/idmodel.hpp"
#include "latdyn/interp.hpp"
#include "latdyn/networks.hpp"
#include "latdyn/normalizer.hpp"
#include "latdyn/training.hpp"

namespace latdyn {

inline constexpr int kBundleVersion = 1;

/// Everything prediction needs; no training data is referenced.
struct ModelBundle {
  ArchitectureSpec arch;
  LibrarySpec library;
  ad::ParamStore params;             // network blocks only
  Normalizers norm;
  std::vector<Vector> train_mu;      // raw units
  std::vector<Matrix> xi;            // one N_b x N_s matrix per training point
  std::vector<double> times;
  TrainingConfig config;
  KnnConfig knn;
  std::string status;                // "converged" or "max-iterations"
  long iterations_run = 0;
  std::vector<TrainingLogRow> log;
};

}  // namespace latdyn
