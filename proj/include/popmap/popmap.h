#ifndef POPMAP_POPMAP_H
#define POPMAP_POPMAP_H

#include <stddef.h>

#if defined(POPMAP_BUILDING_LIBRARY)
#define POPMAP_API __attribute__((visibility("default")))
#else
#define POPMAP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes; 0 is success. Values are stable. */
typedef enum popmap_status {
  POPMAP_OK = 0,
  POPMAP_E_USAGE = 1,
  POPMAP_E_CONFIG = 2,
  POPMAP_E_SPEC = 3,
  POPMAP_E_NON_POSITIVE_AREA = 10,
  POPMAP_E_MANIFEST_PARSE = 11,
  POPMAP_E_MISSING_TILE = 12,
  POPMAP_E_EMPTY_DATASET = 13,
  POPMAP_E_DECODE = 14,
  POPMAP_E_SHAPE_MISMATCH = 15,
  POPMAP_E_IO = 16,
  POPMAP_E_WEIGHT_FILE = 17,
  POPMAP_E_SHAPE_INCOMPATIBLE = 18,
  POPMAP_E_DATA_PIPELINE = 19,
  POPMAP_E_CHECKPOINT = 20,
  POPMAP_E_DEGENERATE_TRUTH = 21,
  POPMAP_E_DEGENERATE_INPUT = 22,
  POPMAP_E_ZERO_TRUTH = 23,
  POPMAP_E_MISSING_VILLAGE = 24,
  POPMAP_E_OUT_OF_BOUNDS = 25,
  POPMAP_E_DIVERGENCE = 30,
  POPMAP_E_INTERNAL = 99
} popmap_status;

/* Name of a status, e.g. "MissingTileError". */
POPMAP_API const char* popmap_status_name(popmap_status status);
/* Process exit code for a status: 0 ok, 1 usage/config, 2 data, 3 numerical divergence. */
POPMAP_API int popmap_exit_code(popmap_status status);
/* Message of the last failure on the calling thread; empty after success. */
POPMAP_API const char* popmap_last_error(void);
POPMAP_API const char* popmap_version(void);

/* Experiment configuration. */
typedef struct popmap_config popmap_config;

POPMAP_API popmap_status popmap_config_new(popmap_config** out);
POPMAP_API void popmap_config_free(popmap_config* config);
/* Applies a key = value file on top of the current values. */
POPMAP_API popmap_status popmap_config_load(popmap_config* config, const char* path);
/* Applies n key/value pairs as one batch. */
POPMAP_API popmap_status popmap_config_apply(popmap_config* config, const char* const* keys,
                                             const char* const* values, size_t n);
/* Copies the value of `key` into buf (NUL-terminated, truncated to buf_size). `needed`, when
   non-null, receives the full length plus one. */
POPMAP_API popmap_status popmap_config_get(const popmap_config* config, const char* key,
                                           char* buf, size_t buf_size, size_t* needed);
POPMAP_API size_t popmap_config_key_count(void);
/* Key by index in sorted order, or NULL when out of range. */
POPMAP_API const char* popmap_config_key(size_t index);
/* 16 hex digits plus NUL. */
POPMAP_API popmap_status popmap_config_hash(const popmap_config* config, char out[17]);
POPMAP_API popmap_status popmap_config_validate(const popmap_config* config);

/* Pipeline commands: "synthgen", "split", "train", "eval", "baseline", "report". */
typedef void (*popmap_log_fn)(const char* line, void* user);

POPMAP_API size_t popmap_command_count(void);
POPMAP_API const char* popmap_command_name(size_t index);
POPMAP_API popmap_status popmap_run(const popmap_config* config, const char* command,
                                    popmap_log_fn log, void* user);

/* Metrics over n paired values. */
POPMAP_API popmap_status popmap_r_squared(const double* pred, const double* truth, size_t n,
                                          double* out);
POPMAP_API popmap_status popmap_pearson(const double* pred, const double* truth, size_t n,
                                        double* out);
POPMAP_API popmap_status popmap_mape(const double* pred, const double* truth, size_t n,
                                     double* out);
POPMAP_API popmap_status popmap_pct_rmse(const double* pred, const double* truth, size_t n,
                                         double* out);

/* Trained model loaded from a checkpoint, for per-village prediction. */
typedef struct popmap_model popmap_model;

POPMAP_API popmap_status popmap_model_load(const char* checkpoint_path, popmap_model** out);
POPMAP_API void popmap_model_free(popmap_model* model);
/* Input tile side in pixels, and 1 for regression or the class count for a classifier. */
POPMAP_API popmap_status popmap_model_info(const popmap_model* model, int* input_side,
                                           int* output_dim);
/* Eval-mode prediction for villages in a manifest whose tiles sit under tile_root.
   out_log2 receives n values in the order of village_ids. */
POPMAP_API popmap_status popmap_model_predict(popmap_model* model, const char* manifest_path,
                                              const char* tile_root,
                                              const char* const* village_ids, size_t n,
                                              int batch_size, double* out_log2);

#ifdef __cplusplus
}
#endif

#endif
