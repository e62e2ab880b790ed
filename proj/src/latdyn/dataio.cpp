#include "latdyn/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <unordered_map>

#include <zlib.h>

#include "latdyn/error.hpp"
#include "latdyn/log.hpp"

namespace fs = std::filesystem;

namespace latdyn::dataio {

namespace {

using json = nlohmann::json;

constexpr bool kLittleEndian = std::endian::native == std::endian::little;

void byteswap_doubles(double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t u;
    std::memcpy(&u, p + i, 8);
    u = __builtin_bswap64(u);
    std::memcpy(p + i, &u, 8);
  }
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << std::setw(2) << j << '\n';
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw FormatError(where + ": missing key \"" + key + "\"");
  return j.at(key);
}

template <class T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return require(j, key, where).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": key \"" + key + "\" has the wrong type (" + e.what() + ")");
  }
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::uint32_t crc32_of(const void* data, std::size_t bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (bytes > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
    crc = crc32(crc, p, n);
    p += n;
    bytes -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_binary(const std::string& path, const double* data, std::size_t count) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  if constexpr (kLittleEndian) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
  } else {
    std::vector<double> tmp(data, data + count);
    byteswap_doubles(tmp.data(), count);
    os.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(count * 8));
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<double> read_binary(const std::string& path) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError("cannot open '" + path + "'");
  if (bytes % 8 != 0) throw FormatError("'" + path + "' is not a whole number of float64 values");
  std::vector<double> out(bytes / 8);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw IoError("failed reading '" + path + "'");
  if constexpr (!kLittleEndian) byteswap_doubles(out.data(), out.size());
  return out;
}

RowMatrix read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::vector<double> values;
  Eigen::Index cols = -1, rows = 0;
  std::string line;
  bool first = true;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      const char* b = cell.c_str();
      char* e = nullptr;
      const double v = std::strtod(b, &e);
      while (e && (*e == ' ' || *e == '\t')) ++e;
      if (e == b || (e && *e != '\0')) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw FormatError("'" + path + "' line " + std::to_string(line_no) + " is not numeric");
    }
    first = false;
    if (cols < 0) cols = static_cast<Eigen::Index>(row.size());
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw FormatError("'" + path + "' line " + std::to_string(line_no) + " has " +
                        std::to_string(row.size()) + " columns, expected " + std::to_string(cols));
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw FormatError("'" + path + "' has no data rows");
  return Eigen::Map<RowMatrix>(values.data(), rows, cols);
}

RowMatrix read_matrix_file(const std::string& path, Eigen::Index cols) {
  if (has_suffix(path, ".csv") || has_suffix(path, ".txt")) {
    RowMatrix m = read_csv(path);
    if (cols > 0 && m.cols() != cols)
      throw DimensionError("'" + path + "' has " + std::to_string(m.cols()) + " columns, expected " +
                           std::to_string(cols));
    return m;
  }
  if (cols <= 0) throw InvalidArgument("binary matrix '" + path + "' needs a known column count");
  auto v = read_binary(path);
  if (v.size() % static_cast<std::size_t>(cols) != 0)
    throw FormatError("'" + path + "' size is not a multiple of " + std::to_string(cols) + " columns");
  return Eigen::Map<RowMatrix>(v.data(), static_cast<Eigen::Index>(v.size()) / cols, cols);
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const RowMatrix& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  os.imbue(std::locale::classic());
  for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
  if (!header.empty()) os << '\n';
  os << std::setprecision(17);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) os << (c ? "," : "") << rows(r, c);
    os << '\n';
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

SamplingMode sampling_mode_from_name(const std::string& name) {
  if (name == "random") return SamplingMode::kRandom;
  if (name == "uniform-grid" || name == "uniform") return SamplingMode::kUniformGrid;
  throw InvalidArgument("unknown sampling mode '" + name + "' (expected random or uniform-grid)");
}

std::vector<Vector> sample_parameters(const Box& box, int n, SamplingMode mode, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("sample count must be at least 1");
  if (box.empty()) throw InvalidArgument("parameter box is empty");
  for (const auto& [lo, hi] : box)
    if (!(hi >= lo)) throw InvalidArgument("parameter box has an inverted axis");
  const auto nd = static_cast<Eigen::Index>(box.size());
  std::vector<Vector> out;
  if (mode == SamplingMode::kRandom) {
    std::mt19937_64 rng(seed);
    for (int s = 0; s < n; ++s) {
      Vector p(nd);
      for (Eigen::Index k = 0; k < nd; ++k) {
        std::uniform_real_distribution<double> dist(box[static_cast<std::size_t>(k)].first,
                                                    box[static_cast<std::size_t>(k)].second);
        p[k] = dist(rng);
      }
      out.push_back(std::move(p));
    }
    return out;
  }
  int per = static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 1.0 / nd) - 1e-9));
  per = std::max(per, 1);
  long total = 1;
  for (Eigen::Index k = 0; k < nd; ++k) total *= per;
  if (total != n)
    log::warn("uniform-grid sampling: " + std::to_string(n) + " is not a perfect power; using a " +
              std::to_string(per) + "-per-axis lattice of " + std::to_string(total) + " points");
  std::vector<int> idx(static_cast<std::size_t>(nd), 0);
  for (long s = 0; s < total; ++s) {
    Vector p(nd);
    for (Eigen::Index k = 0; k < nd; ++k) {
      const auto& [lo, hi] = box[static_cast<std::size_t>(k)];
      const int i = idx[static_cast<std::size_t>(k)];
      p[k] = per == 1 ? 0.5 * (lo + hi) : (i == per - 1 ? hi : lo + (hi - lo) * i / (per - 1));
    }
    out.push_back(std::move(p));
    for (std::size_t k = static_cast<std::size_t>(nd); k-- > 0;) {
      if (++idx[k] < per) break;
      idx[k] = 0;
    }
  }
  return out;
}

// Datasets ------------------------------------------------------------------

void save_dataset(const std::string& dir, const Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  json manifest;
  manifest["version"] = kDatasetVersion;
  json box = json::array();
  for (const auto& [lo, hi] : data.domain_box) box.push_back({lo, hi});
  manifest["domain_box"] = box;
  manifest["times"] = data.times;
  manifest["fields"] = data.fields;
  json trajs = json::array();
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const auto& tr = data.trajectories[i];
    if (tr.fields.cols() != tr.n_points() * tr.field_count)
      throw DimensionError("trajectory '" + tr.id + "' field array does not match its coordinates");
    if (tr.n_times() != static_cast<Eigen::Index>(data.times.size()))
      throw DimensionError("trajectory '" + tr.id + "' snapshot count does not match the time grid");
    std::ostringstream stem;
    stem << "traj_" << std::setw(5) << std::setfill('0') << i;
    const std::string cf = stem.str() + ".coords.bin";
    const std::string ff = stem.str() + ".fields.bin";
    write_binary((fs::path(dir) / cf).string(), tr.coords.data(), static_cast<std::size_t>(tr.coords.size()));
    write_binary((fs::path(dir) / ff).string(), tr.fields.data(), static_cast<std::size_t>(tr.fields.size()));
    trajs.push_back({{"id", tr.id.empty() ? stem.str() : tr.id},
                     {"mu", to_vec(tr.mu)},
                     {"coords_file", cf},
                     {"fields_file", ff},
                     {"n_points", tr.n_points()},
                     {"spatial_dim", tr.dim()},
                     {"field_count", tr.field_count},
                     {"grid", tr.grid_tag},
                     {"wall_clock", tr.wall_clock_seconds}});
  }
  manifest["trajectories"] = trajs;
  manifest["metadata"] = data.metadata;
  write_json(fs::path(dir) / "manifest.json", manifest);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  if (!fs::exists(mpath)) throw NotFoundError("no dataset manifest at '" + mpath.string() + "'");
  const json m = read_json(mpath);
  const std::string where = "manifest '" + mpath.string() + "'";
  const int version = get_as<int>(m, "version", where);
  if (version != kDatasetVersion)
    throw VersionError(where + ": dataset version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kDatasetVersion) + "); re-export the archive with this release");
  Dataset ds;
  for (const auto& e : require(m, "domain_box", where)) {
    if (!e.is_array() || e.size() != 2) throw FormatError(where + ": domain_box entries must be [lo, hi]");
    ds.domain_box.emplace_back(e[0].get<double>(), e[1].get<double>());
  }
  ds.times = get_as<std::vector<double>>(m, "times", where);
  ds.fields = get_as<std::vector<std::string>>(m, "fields", where);
  if (m.contains("metadata")) ds.metadata = m.at("metadata");
  const auto& trajs = require(m, "trajectories", where);
  if (!trajs.is_array()) throw FormatError(where + ": \"trajectories\" must be an array");
  const int default_nf = static_cast<int>(ds.fields.size());
  const auto default_d = static_cast<Eigen::Index>(ds.domain_box.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const json& t = trajs[i];
    const std::string tw = where + " trajectory " + std::to_string(i);
    FieldTrajectory tr;
    tr.id = get_as<std::string>(t, "id", tw);
    tr.mu = to_vector(get_as<std::vector<double>>(t, "mu", tw));
    const auto np = get_as<Eigen::Index>(t, "n_points", tw);
    const Eigen::Index d = t.value("spatial_dim", default_d);
    tr.field_count = t.value("field_count", default_nf);
    tr.grid_tag = t.value("grid", std::string());
    tr.wall_clock_seconds = t.value("wall_clock", 0.0);
    if (np < 1 || d < 1 || tr.field_count < 1) throw FormatError(tw + ": non-positive shape");
    const auto cf = (fs::path(dir) / get_as<std::string>(t, "coords_file", tw)).string();
    const auto ff = (fs::path(dir) / get_as<std::string>(t, "fields_file", tw)).string();
    auto cv = read_binary(cf);
    if (cv.size() != static_cast<std::size_t>(np * d))
      throw FormatError(tw + ": '" + cf + "' holds " + std::to_string(cv.size()) + " values, manifest declares " +
                        std::to_string(np) + " x " + std::to_string(d) + " (truncated or mismatched)");
    tr.coords = Eigen::Map<RowMatrix>(cv.data(), np, d);
    auto fv = read_binary(ff);
    const auto nt = static_cast<Eigen::Index>(ds.times.size());
    if (fv.size() != static_cast<std::size_t>(nt * np * tr.field_count))
      throw FormatError(tw + ": '" + ff + "' holds " + std::to_string(fv.size()) + " values, manifest declares " +
                        std::to_string(nt) + " x " + std::to_string(np) + " x " +
                        std::to_string(tr.field_count) + " (truncated or mismatched)");
    tr.fields = Eigen::Map<RowMatrix>(fv.data(), nt, np * tr.field_count);
    tr.times = ds.times;
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

const FieldTrajectory& ingest_external(Dataset& data, const IngestRequest& req) {
  if (req.spatial_dim < 1 || req.field_count < 1) throw InvalidArgument("ingest: dimensions must be positive");
  if (req.times.empty()) throw InvalidArgument("ingest: empty time grid");
  if (!data.times.empty() && data.times != req.times)
    throw InvalidArgument("ingest: time grid differs from the dataset's");
  if (!data.trajectories.empty()) {
    const auto& f = data.trajectories.front();
    if (f.dim() != req.spatial_dim || f.field_count != req.field_count || f.mu.size() != req.mu.size())
      throw DimensionError("ingest: dimensions differ from the existing trajectories");
  }
  FieldTrajectory tr;
  tr.id = req.id.empty() ? "ext_" + std::to_string(data.trajectories.size()) : req.id;
  tr.mu = req.mu;
  tr.field_count = req.field_count;
  tr.times = req.times;
  tr.grid_tag = "unstructured";
  tr.coords = read_matrix_file(req.coords_path, req.spatial_dim);
  const Eigen::Index np = tr.coords.rows();
  const auto nt = static_cast<Eigen::Index>(req.times.size());
  RowMatrix f = read_matrix_file(req.fields_path, np * req.field_count);
  if (f.rows() != nt)
    throw DimensionError("ingest: fields have " + std::to_string(f.rows()) + " time rows, expected " +
                         std::to_string(nt));
  std::vector<std::string> bad;
  long nbad = 0;
  for (Eigen::Index t = 0; t < f.rows(); ++t)
    for (Eigen::Index c = 0; c < f.cols(); ++c)
      if (std::isnan(f(t, c))) {
        if (++nbad <= 20)
          bad.push_back("(" + std::to_string(t) + "," + std::to_string(c / req.field_count) + "," +
                        std::to_string(c % req.field_count) + ")");
      }
  if (nbad > 0) {
    std::string msg = "ingest: " + std::to_string(nbad) + " NaN field values at (time, point, field)";
    for (const auto& b : bad) msg += " " + b;
    if (nbad > 20) msg += " ...";
    throw InvalidArgument(msg);
  }
  if (!tr.coords.allFinite()) throw InvalidArgument("ingest: coordinates contain non-finite values");
  tr.fields = std::move(f);

  if (data.domain_box.empty()) {
    for (Eigen::Index k = 0; k < tr.dim(); ++k)
      data.domain_box.emplace_back(tr.coords.col(k).minCoeff(), tr.coords.col(k).maxCoeff());
  } else {
    for (Eigen::Index k = 0; k < tr.dim(); ++k) {
      auto& [lo, hi] = data.domain_box[static_cast<std::size_t>(k)];
      const double cmin = tr.coords.col(k).minCoeff(), cmax = tr.coords.col(k).maxCoeff();
      if (cmin < lo || cmax > hi) {
        log::warn("ingest: coordinates of '" + tr.id + "' leave the domain box on axis " + std::to_string(k) +
                  "; box expanded");
        lo = std::min(lo, cmin);
        hi = std::max(hi, cmax);
      }
    }
  }
  if (data.times.empty()) data.times = req.times;
  if (data.fields.empty())
    for (int k = 0; k < req.field_count; ++k) data.fields.push_back("f" + std::to_string(k));
  data.trajectories.push_back(std::move(tr));
  return data.trajectories.back();
}

// Bundles -------------------------------------------------------------------

void save_bundle(const std::string& dir, const ModelBundle& b) {
  if (b.xi.empty()) throw StateError("bundle has no coefficient matrices");
  if (b.xi.size() != b.train_mu.size()) throw DimensionError("bundle: one parameter point per coefficient matrix");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());

  std::vector<double> flat;
  json blocks = json::array();
  auto put = [&](const std::string& name, const Matrix& m) {
    blocks.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", flat.size()}});
    const RowMatrix r = m;
    flat.insert(flat.end(), r.data(), r.data() + r.size());
  };
  for (const auto& blk : b.params) put(blk.name, blk.value);
  json coefs = json::array();
  for (std::size_t i = 0; i < b.xi.size(); ++i) {
    const std::string name = "xi." + std::to_string(i);
    put(name, b.xi[i]);
    coefs.push_back({{"mu", to_vec(b.train_mu[i])}, {"block", name}});
  }
  const auto path_w = (fs::path(dir) / "weights.bin").string();
  write_binary(path_w, flat.data(), flat.size());
  std::vector<double> le = flat;
  if constexpr (!kLittleEndian) byteswap_doubles(le.data(), le.size());
  const std::uint32_t crc = crc32_of(le.data(), le.size() * 8);

  json meta;
  meta["version"] = kBundleVersion;
  meta["architecture"] = to_json(b.arch);
  meta["library"] = to_json(b.library);
  meta["normalizers"] = to_json(b.norm);
  meta["knn"] = {{"k", b.knn.k},
                 {"power", b.knn.power},
                 {"match_eps", b.knn.match_eps},
                 {"space", b.knn.space == DistanceSpace::kRaw ? "raw" : "normalized"}};
  meta["training_config"] = to_json(b.config);
  meta["status"] = b.status;
  meta["iterations_run"] = b.iterations_run;
  meta["times"] = b.times;
  meta["blocks"] = blocks;
  meta["coefficients"] = coefs;
  meta["weights_file"] = "weights.bin";
  meta["weights_crc32"] = crc;
  meta["weights_count"] = flat.size();
  meta["training_log"] = "training_log.csv";
  write_training_log_csv((fs::path(dir) / "training_log.csv").string(), b.log);
  write_json(fs::path(dir) / "bundle.json", meta);
}

ModelBundle load_bundle(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "bundle.json";
  if (!fs::exists(mpath)) throw NotFoundError("no model bundle at '" + dir + "'");
  const json m = read_json(mpath);
  const std::string where = "bundle '" + mpath.string() + "'";
  const int version = get_as<int>(m, "version", where);
  if (version != kBundleVersion)
    throw VersionError(where + ": bundle version " + std::to_string(version) + " cannot be read by this release (expects " +
                       std::to_string(kBundleVersion) + "); retrain or convert the bundle");
  ModelBundle b;
  b.arch = architecture_from_json(require(m, "architecture", where));
  try {
    b.library = library_from_json(require(m, "library", where));
  } catch (const json::exception& e) {
    throw FormatError(where + ": library: " + e.what());
  }
  b.norm = normalizers_from_json(require(m, "normalizers", where));
  b.config = training_config_from_json(require(m, "training_config", where));
  if (m.contains("knn")) {
    const auto& k = m.at("knn");
    b.knn.k = k.value("k", b.knn.k);
    b.knn.power = k.value("power", b.knn.power);
    b.knn.match_eps = k.value("match_eps", b.knn.match_eps);
    b.knn.space = k.value("space", std::string("normalized")) == "raw" ? DistanceSpace::kRaw
                                                                      : DistanceSpace::kNormalized;
  }
  b.status = m.value("status", std::string());
  b.iterations_run = m.value("iterations_run", 0L);
  b.times = get_as<std::vector<double>>(m, "times", where);

  const auto wpath = (fs::path(dir) / m.value("weights_file", std::string("weights.bin"))).string();
  std::vector<double> flat = read_binary(wpath);
  if (flat.size() != get_as<std::size_t>(m, "weights_count", where))
    throw ChecksumError(where + ": weights file is truncated");
  std::vector<double> le = flat;
  if constexpr (!kLittleEndian) byteswap_doubles(le.data(), le.size());
  if (crc32_of(le.data(), le.size() * 8) != get_as<std::uint32_t>(m, "weights_crc32", where))
    throw ChecksumError(where + ": weights checksum mismatch (file corrupted)");

  std::unordered_map<std::string, Matrix> by_name;
  std::vector<std::string> order;
  for (const auto& blk : require(m, "blocks", where)) {
    const auto name = get_as<std::string>(blk, "name", where);
    const auto rows = get_as<Eigen::Index>(blk, "rows", where);
    const auto cols = get_as<Eigen::Index>(blk, "cols", where);
    const auto off = get_as<std::size_t>(blk, "offset", where);
    if (rows < 0 || cols < 0 || off + static_cast<std::size_t>(rows * cols) > flat.size())
      throw FormatError(where + ": block '" + name + "' lies outside the weights file");
    by_name[name] = Eigen::Map<const RowMatrix>(flat.data() + off, rows, cols);
    order.push_back(name);
  }
  if (!m.contains("coefficients") || m.at("coefficients").empty())
    throw FormatError(where + ": bundle has no coefficient matrices; prediction is impossible");
  for (const auto& name : order)
    if (name.rfind("xi.", 0) != 0) b.params.add(name, by_name[name]);
  for (const auto& c : m.at("coefficients")) {
    const auto name = get_as<std::string>(c, "block", where);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(where + ": coefficient block '" + name + "' missing");
    b.xi.push_back(it->second);
    b.train_mu.push_back(to_vector(get_as<std::vector<double>>(c, "mu", where)));
  }
  // Validates that every network block is present with the right shape.
  try {
    LatentModel check(b.arch, b.params);
    (void)check;
  } catch (const NotFoundError& e) {
    throw FormatError(where + ": " + e.what());
  }
  const int nb = b.library.columns(b.arch.latent_dim);
  for (const auto& x : b.xi)
    if (x.rows() != nb || x.cols() != b.arch.latent_dim)
      throw FormatError(where + ": coefficient matrix shape does not match library and latent size");
  return b;
}

}  // namespace latdyn::dataio
