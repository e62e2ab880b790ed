#include "latdyn/latdyn.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "latdyn/bundle.hpp"
#include "latdyn/config.hpp"
#include "latdyn/dataio.hpp"
#include "latdyn/error.hpp"
#include "latdyn/online.hpp"
#include "latdyn/pipeline.hpp"
#include "latdyn/training.hpp"

struct latdyn_dataset {
  latdyn::Dataset data;
};

struct latdyn_bundle {
  latdyn::ModelBundle bundle;
};

struct latdyn_report {
  latdyn::online::EvaluationReport report;
};

namespace {

thread_local std::string g_last_error;

latdyn_status to_status(latdyn::ErrorCode c) { return static_cast<latdyn_status>(static_cast<int>(c)); }

template <class F>
latdyn_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return LATDYN_OK;
  } catch (const latdyn::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return LATDYN_ERR_FORMAT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LATDYN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LATDYN_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return LATDYN_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw latdyn::InvalidArgument(what);
}

nlohmann::json parse_config(const char* text) {
  if (!text || !*text) return latdyn::config::resolve(nlohmann::json::object());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw latdyn::SpecError(std::string("config is not valid JSON: ") + e.what());
  }
  return latdyn::config::resolve(j);
}

latdyn::Vector to_vector(const double* p, size_t n) {
  return Eigen::Map<const latdyn::Vector>(p, static_cast<Eigen::Index>(n));
}

}  // namespace

extern "C" {

const char* latdyn_version(void) { return "0.1.0"; }

const char* latdyn_status_string(latdyn_status status) {
  if (status == LATDYN_OK) return "ok";
  if (status < LATDYN_ERR_INVALID_ARGUMENT || status > LATDYN_ERR_INTERNAL) return "unknown";
  return latdyn::error_code_name(static_cast<latdyn::ErrorCode>(status));
}

const char* latdyn_last_error_message(void) { return g_last_error.c_str(); }

latdyn_status latdyn_config_resolve(const char* config_json, char* buffer, size_t capacity, size_t* needed) {
  return guarded([&] {
    const std::string text = parse_config(config_json).dump(2);
    if (needed) *needed = text.size();
    if (buffer && capacity > 0) {
      const size_t n = std::min(capacity - 1, text.size());
      std::memcpy(buffer, text.data(), n);
      buffer[n] = '\0';
    }
  });
}

latdyn_status latdyn_generate(const char* config_json, const char* out_dir, size_t* n_failures) {
  return guarded([&] {
    require(out_dir != nullptr, "output directory is required");
    const auto cfg = latdyn::config::generate_config(parse_config(config_json));
    const auto gen = latdyn::generate_burgers(cfg);
    const std::filesystem::path base(out_dir);
    if (cfg.n_train > 0) latdyn::dataio::save_dataset((base / "train").string(), gen.train);
    if (cfg.n_test > 0) latdyn::dataio::save_dataset((base / "test").string(), gen.test);
    if (n_failures) *n_failures = gen.failures.size();
  });
}

latdyn_status latdyn_dataset_open(const char* dir, latdyn_dataset** out) {
  return guarded([&] {
    require(dir && out, "dataset path and output handle are required");
    *out = nullptr;
    auto* ds = new latdyn_dataset{latdyn::dataio::load_dataset(dir)};
    *out = ds;
  });
}

latdyn_status latdyn_dataset_info(const latdyn_dataset* ds, size_t* n_trajectories, size_t* n_times,
                                  size_t* param_dim, size_t* spatial_dim, size_t* field_count) {
  return guarded([&] {
    require(ds != nullptr, "null dataset handle");
    const auto& d = ds->data;
    const bool any = !d.trajectories.empty();
    if (n_trajectories) *n_trajectories = d.trajectories.size();
    if (n_times) *n_times = d.times.size();
    if (param_dim) *param_dim = any ? static_cast<size_t>(d.trajectories[0].mu.size()) : 0;
    if (spatial_dim) *spatial_dim = any ? static_cast<size_t>(d.trajectories[0].dim()) : d.domain_box.size();
    if (field_count) *field_count = any ? static_cast<size_t>(d.trajectories[0].field_count) : d.fields.size();
  });
}

void latdyn_dataset_free(latdyn_dataset* ds) { delete ds; }

latdyn_status latdyn_train(const latdyn_dataset* ds, const char* config_json, latdyn_progress_fn progress,
                           void* user, latdyn_bundle** out) {
  return guarded([&] {
    require(ds && out, "dataset and output handle are required");
    *out = nullptr;
    const auto cfg = parse_config(config_json);
    const auto& data = ds->data;
    if (data.trajectories.empty()) throw latdyn::InvalidArgument("dataset has no trajectories");
    const auto& t0 = data.trajectories.front();
    const auto arch = latdyn::ArchitectureSpec::standard(
        latdyn::config::latent_dim(cfg), static_cast<int>(t0.mu.size()), static_cast<int>(t0.dim()),
        t0.field_count, latdyn::config::taylor_order(cfg));
    latdyn::ProgressFn fn;
    if (progress)
      fn = [&](const latdyn::TrainingLogRow& r) { progress(r.iteration, r.lr, r.loss.total, r.latent_rl2, user); };
    auto b = std::make_unique<latdyn_bundle>();
    b->bundle = latdyn::train(data, arch, latdyn::config::library(cfg), latdyn::config::training_config(cfg), fn);
    b->bundle.knn = latdyn::config::knn_config(cfg);
    *out = b.release();
  });
}

latdyn_status latdyn_bundle_save(const latdyn_bundle* b, const char* dir) {
  return guarded([&] {
    require(b && dir, "bundle and directory are required");
    latdyn::dataio::save_bundle(dir, b->bundle);
  });
}

latdyn_status latdyn_bundle_load(const char* dir, latdyn_bundle** out) {
  return guarded([&] {
    require(dir && out, "bundle path and output handle are required");
    *out = nullptr;
    auto b = std::make_unique<latdyn_bundle>();
    b->bundle = latdyn::dataio::load_bundle(dir);
    *out = b.release();
  });
}

latdyn_status latdyn_bundle_set_knn(latdyn_bundle* b, const char* config_json) {
  return guarded([&] {
    require(b != nullptr, "null bundle handle");
    b->bundle.knn = latdyn::config::knn_config(parse_config(config_json));
  });
}

latdyn_status latdyn_bundle_shape(const latdyn_bundle* b, size_t* n_times, size_t* latent_dim, size_t* param_dim,
                                  size_t* spatial_dim, size_t* field_count) {
  return guarded([&] {
    require(b != nullptr, "null bundle handle");
    const auto& a = b->bundle.arch;
    if (n_times) *n_times = b->bundle.times.size();
    if (latent_dim) *latent_dim = static_cast<size_t>(a.latent_dim);
    if (param_dim) *param_dim = static_cast<size_t>(a.param_dim);
    if (spatial_dim) *spatial_dim = static_cast<size_t>(a.spatial_dim);
    if (field_count) *field_count = static_cast<size_t>(a.field_count);
  });
}

const char* latdyn_bundle_status(const latdyn_bundle* b) { return b ? b->bundle.status.c_str() : ""; }

void latdyn_bundle_free(latdyn_bundle* b) { delete b; }

latdyn_status latdyn_predict(const latdyn_bundle* b, const double* mu, size_t param_dim, const double* coords,
                             size_t n_points, size_t spatial_dim, double* out, size_t out_capacity) {
  return guarded([&] {
    require(b && mu && coords && out, "bundle, parameter, coordinates and output buffer are required");
    latdyn::online::PredictionRequest req;
    req.mu = to_vector(mu, param_dim);
    req.coords = Eigen::Map<const latdyn::RowMatrix>(coords, static_cast<Eigen::Index>(n_points),
                                                     static_cast<Eigen::Index>(spatial_dim));
    const auto pred = latdyn::online::predict(b->bundle, req);
    const auto n = static_cast<size_t>(pred.fields.size());
    if (out_capacity < n)
      throw latdyn::DimensionError("output buffer holds " + std::to_string(out_capacity) + " values, need " +
                                   std::to_string(n));
    std::memcpy(out, pred.fields.data(), n * sizeof(double));
  });
}

latdyn_status latdyn_predict_to_archive(const latdyn_bundle* b, const double* mu, size_t param_dim,
                                        const char* coords_path, const char* out_dir) {
  return guarded([&] {
    require(b && mu && coords_path && out_dir, "bundle, parameter, coordinate file and output directory are required");
    const auto& bb = b->bundle;
    latdyn::online::PredictionRequest req;
    req.mu = to_vector(mu, param_dim);
    req.coords = latdyn::dataio::read_matrix_file(coords_path, bb.arch.spatial_dim);
    latdyn::Dataset ds;
    ds.times = bb.times;
    for (Eigen::Index k = 0; k < req.coords.cols(); ++k)
      ds.domain_box.emplace_back(req.coords.col(k).minCoeff(), req.coords.col(k).maxCoeff());
    for (int f = 0; f < bb.arch.field_count; ++f) ds.fields.push_back("f" + std::to_string(f));
    ds.trajectories.push_back(latdyn::online::predict(bb, req));
    ds.trajectories.back().id = "prediction";
    ds.metadata["source"] = "prediction";
    latdyn::dataio::save_dataset(out_dir, ds);
  });
}

latdyn_status latdyn_evaluate(const latdyn_bundle* b, const latdyn_dataset* truth, latdyn_report** out) {
  return guarded([&] {
    require(b && truth && out, "bundle, truth dataset and output handle are required");
    *out = nullptr;
    auto r = std::make_unique<latdyn_report>();
    r->report = latdyn::online::evaluate_testset(b->bundle, truth->data);
    *out = r.release();
  });
}

size_t latdyn_report_count(const latdyn_report* r) { return r ? r->report.entries.size() : 0; }
double latdyn_report_aggregate(const latdyn_report* r) { return r ? r->report.aggregate_rl2 : 0.0; }
double latdyn_report_speedup(const latdyn_report* r) { return r ? r->report.speedup : 0.0; }
double latdyn_report_predict_seconds(const latdyn_report* r) { return r ? r->report.predict_seconds : 0.0; }
double latdyn_report_hf_seconds(const latdyn_report* r) { return r ? r->report.hf_seconds : 0.0; }

latdyn_status latdyn_report_entry(const latdyn_report* r, size_t index, double* rl2, double* predict_seconds,
                                  double* hf_seconds) {
  return guarded([&] {
    require(r != nullptr, "null report handle");
    if (index >= r->report.entries.size()) throw latdyn::NotFoundError("report entry index out of range");
    const auto& e = r->report.entries[index];
    if (rl2) *rl2 = e.rl2;
    if (predict_seconds) *predict_seconds = e.predict_seconds;
    if (hf_seconds) *hf_seconds = e.hf_seconds;
  });
}

latdyn_status latdyn_report_write_csv(const latdyn_report* r, const char* path) {
  return guarded([&] {
    require(r && path, "report and path are required");
    latdyn::online::write_report_csv(path, r->report);
  });
}

void latdyn_report_free(latdyn_report* r) { delete r; }

}  // extern "C"
