/* C interface to the latdyn reduced-order modeling library.
 *
 * All functions return a latdyn_status. On failure a description is available
 * from latdyn_last_error_message() on the calling thread until the next call.
 * Handles are opaque and must be released with the matching *_free function.
 * Configuration is passed as a flat JSON object (see latdyn_config_resolve). */
#ifndef LATDYN_LATDYN_H
#define LATDYN_LATDYN_H

#include <stddef.h>

#if defined(_WIN32)
#define LATDYN_API __declspec(dllexport)
#else
#define LATDYN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum latdyn_status {
  LATDYN_OK = 0,
  LATDYN_ERR_INVALID_ARGUMENT = 1,
  LATDYN_ERR_DIMENSION = 2,
  LATDYN_ERR_SPEC = 3,
  LATDYN_ERR_STATE = 4,
  LATDYN_ERR_DIVERGENCE = 5,
  LATDYN_ERR_SOLVER = 6,
  LATDYN_ERR_IO = 7,
  LATDYN_ERR_FORMAT = 8,
  LATDYN_ERR_VERSION = 9,
  LATDYN_ERR_CHECKSUM = 10,
  LATDYN_ERR_NOT_FOUND = 11,
  LATDYN_ERR_INTERNAL = 12
} latdyn_status;

typedef struct latdyn_dataset latdyn_dataset;
typedef struct latdyn_bundle latdyn_bundle;
typedef struct latdyn_report latdyn_report;

/* Called after every training iteration. latent_rl2 is NaN except at checks. */
typedef void (*latdyn_progress_fn)(long iteration, double learning_rate, double loss,
                                  double latent_rl2, void* user);

LATDYN_API const char* latdyn_version(void);
/* Short machine-readable category, e.g. "invalid_argument". */
LATDYN_API const char* latdyn_status_string(latdyn_status status);
LATDYN_API const char* latdyn_last_error_message(void);

/* Writes the default configuration (flat JSON) or, with config_json non-NULL, the
 * effective configuration after overlaying it. Follows the snprintf convention:
 * *needed receives the length excluding the terminator. */
LATDYN_API latdyn_status latdyn_config_resolve(const char* config_json, char* buffer, size_t capacity,
                                               size_t* needed);

/* Simulates training and test sets and writes them to out_dir/train and
 * out_dir/test. *n_failures (optional) receives the number of failed solves;
 * failures are listed in the manifests and do not fail the call. */
LATDYN_API latdyn_status latdyn_generate(const char* config_json, const char* out_dir, size_t* n_failures);

LATDYN_API latdyn_status latdyn_dataset_open(const char* dir, latdyn_dataset** out);
LATDYN_API latdyn_status latdyn_dataset_info(const latdyn_dataset* ds, size_t* n_trajectories,
                                             size_t* n_times, size_t* param_dim, size_t* spatial_dim,
                                             size_t* field_count);
LATDYN_API void latdyn_dataset_free(latdyn_dataset* ds);

/* Trains on every trajectory of the dataset. The training log is kept in the
 * bundle and written next to it by latdyn_bundle_save. */
LATDYN_API latdyn_status latdyn_train(const latdyn_dataset* ds, const char* config_json,
                                      latdyn_progress_fn progress, void* user, latdyn_bundle** out);

LATDYN_API latdyn_status latdyn_bundle_save(const latdyn_bundle* b, const char* dir);
LATDYN_API latdyn_status latdyn_bundle_load(const char* dir, latdyn_bundle** out);
/* Replaces the bundle's neighbour settings with the knn_* keys of config_json. */
LATDYN_API latdyn_status latdyn_bundle_set_knn(latdyn_bundle* b, const char* config_json);
LATDYN_API latdyn_status latdyn_bundle_shape(const latdyn_bundle* b, size_t* n_times, size_t* latent_dim,
                                             size_t* param_dim, size_t* spatial_dim, size_t* field_count);
/* "converged" or "max-iterations". */
LATDYN_API const char* latdyn_bundle_status(const latdyn_bundle* b);
LATDYN_API void latdyn_bundle_free(latdyn_bundle* b);

/* Fields at n_points coordinates (row-major n_points x spatial_dim) for one raw
 * parameter point. out receives n_times x n_points x field_count values. */
LATDYN_API latdyn_status latdyn_predict(const latdyn_bundle* b, const double* mu, size_t param_dim,
                                        const double* coords, size_t n_points, size_t spatial_dim,
                                        double* out, size_t out_capacity);
/* Reads coordinates from a CSV or raw float64 file and stores the prediction as
 * a one-trajectory dataset in out_dir. */
LATDYN_API latdyn_status latdyn_predict_to_archive(const latdyn_bundle* b, const double* mu, size_t param_dim,
                                                   const char* coords_path, const char* out_dir);

/* Predicts every trajectory of the truth dataset on its own coordinates. */
LATDYN_API latdyn_status latdyn_evaluate(const latdyn_bundle* b, const latdyn_dataset* truth,
                                         latdyn_report** out);
LATDYN_API size_t latdyn_report_count(const latdyn_report* r);
LATDYN_API double latdyn_report_aggregate(const latdyn_report* r);
LATDYN_API double latdyn_report_speedup(const latdyn_report* r);
LATDYN_API double latdyn_report_predict_seconds(const latdyn_report* r);
LATDYN_API double latdyn_report_hf_seconds(const latdyn_report* r);
LATDYN_API latdyn_status latdyn_report_entry(const latdyn_report* r, size_t index, double* rl2,
                                             double* predict_seconds, double* hf_seconds);
LATDYN_API latdyn_status latdyn_report_write_csv(const latdyn_report* r, const char* path);
LATDYN_API void latdyn_report_free(latdyn_report* r);

#ifdef __cplusplus
}
#endif

#endif
