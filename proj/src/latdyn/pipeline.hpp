#pragma once

#include <string>
#include <vector>

#include "latdyn/config.hpp"
#include "latdyn/trajectory.hpp"

namespace latdyn {

struct GenerationFailure {
  std::string id;
  Vector mu;
  std::string message;
};

struct GeneratedData {
  Dataset train;
  Dataset test;
  std::vector<GenerationFailure> failures;
};

/// Samples training and test parameters and runs the Burgers solver for each.
/// Training points are split across `multiscale_segments` grids when given.
/// Failed simulations are left out and listed in `failures` and in the
/// manifests' metadata.
GeneratedData generate_burgers(const config::GenerateConfig& cfg);

}  // namespace latdyn
