#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latdyn/bundle.hpp"
#include "latdyn/trajectory.hpp"

namespace latdyn::dataio {

inline constexpr int kDatasetVersion = 1;

using Box = std::vector<std::pair<double, double>>;

enum class SamplingMode { kRandom, kUniformGrid };

/// Random mode draws i.i.d. uniform points. Uniform-grid mode builds a tensor
/// lattice (corners included) with ceil(n^(1/N_D)) points per axis; when n is
/// not a perfect power the lattice size differs from n and a warning is logged.
std::vector<Vector> sample_parameters(const Box& box, int n, SamplingMode mode, std::uint64_t seed);
SamplingMode sampling_mode_from_name(const std::string& name);

/// Directory layout: manifest.json plus one coordinate and one field file per
/// trajectory, raw little-endian float64 in row-major order.
void save_dataset(const std::string& dir, const Dataset& data);
Dataset load_dataset(const std::string& dir);

struct IngestRequest {
  std::string id;
  std::string coords_path;   // CSV (N_u rows x d) or .bin with `spatial_dim` columns
  std::string fields_path;   // CSV ((N_t+1) rows x N_u N_f) or .bin
  std::vector<double> times;
  Vector mu;
  int spatial_dim = 2;       // required for .bin coordinates
  int field_count = 1;
};

/// Appends an externally produced trajectory on arbitrary (unstructured) points.
/// NaN field values are rejected with their (time, point, field) indices listed;
/// coordinates outside the domain box widen it with a warning.
const FieldTrajectory& ingest_external(Dataset& data, const IngestRequest& request);

/// Bundle layout: bundle.json (metadata and block table), weights.bin (all
/// blocks row-major float64, crc32 recorded) and training_log.csv.
void save_bundle(const std::string& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& dir);

// Helpers shared with the CLI and tests.
RowMatrix read_matrix_file(const std::string& path, Eigen::Index cols = -1);
RowMatrix read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header, const RowMatrix& rows);
void write_binary(const std::string& path, const double* data, std::size_t count);
std::vector<double> read_binary(const std::string& path);
std::uint32_t crc32_of(const void* data, std::size_t bytes);

}  // namespace latdyn::dataio
