/* SPDX-License-Identifier: Apache-2.0 */
#ifndef DPPNET_DPPNET_H
#define DPPNET_DPPNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define DPPNET_API __declspec(dllexport)
#else
#  define DPPNET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dppnet_status {
  DPPNET_OK = 0,
  DPPNET_ERR_INVALID_ARGUMENT = 1,
  DPPNET_ERR_SHAPE = 2,
  DPPNET_ERR_IO = 3,
  DPPNET_ERR_FORMAT = 4,
  DPPNET_ERR_CONFIG = 5,
  DPPNET_ERR_NUMERIC = 6,
  DPPNET_ERR_INTERNAL = 99
} dppnet_status;

typedef struct dppnet_model dppnet_model;
typedef struct dppnet_dataset dppnet_dataset;

/* Receives one JSON object per finished epoch. */
typedef void (*dppnet_epoch_fn)(const char* epoch_json, void* user);

/* Strings returned through `char**` out-parameters are owned by the caller
 * and released with dppnet_string_free. On failure out-parameters are left
 * untouched and dppnet_last_error() describes the problem (per thread). */
DPPNET_API const char* dppnet_version(void);
DPPNET_API const char* dppnet_status_name(dppnet_status status);
DPPNET_API const char* dppnet_last_error(void);
DPPNET_API void dppnet_string_free(char* s);

/* Hashing */
DPPNET_API uint64_t dppnet_splitmix64(uint64_t x);
DPPNET_API dppnet_status dppnet_hash_psi(const char* spec_json, uint32_t m, uint32_t n, uint32_t* out_bucket);
DPPNET_API dppnet_status dppnet_hash_xi(const char* spec_json, uint32_t m, uint32_t n, int32_t* out_sign);
DPPNET_API dppnet_status dppnet_hash_stats(const char* spec_json, int include_loads, char** out_json);

/* Data */
DPPNET_API dppnet_status dppnet_generate_synthetic(const char* config_json, uint64_t seed, const char* out_dir,
                                                   char** out_summary);
DPPNET_API dppnet_status dppnet_dataset_load(const char* path, dppnet_dataset** out);
DPPNET_API void dppnet_dataset_free(dppnet_dataset* data);
DPPNET_API size_t dppnet_dataset_size(const dppnet_dataset* data);
DPPNET_API size_t dppnet_dataset_feature_dim(const dppnet_dataset* data);

/* Training: writes a checkpoint directory and returns a JSON summary. */
DPPNET_API dppnet_status dppnet_train(const char* run_config_json, const dppnet_dataset* train,
                                      const dppnet_dataset* val, const char* out_dir, dppnet_epoch_fn on_epoch,
                                      void* user, char** out_summary);

/* Feature-only softmax regression baseline; answer classes come from `train`. */
DPPNET_API dppnet_status dppnet_linear_probe(const dppnet_dataset* train, const dppnet_dataset* test,
                                             uint64_t seed, char** out_json);

/* Checkpoints */
DPPNET_API dppnet_status dppnet_model_load(const char* dir, dppnet_model** out);
DPPNET_API void dppnet_model_free(dppnet_model* model);
DPPNET_API dppnet_status dppnet_model_info(const dppnet_model* model, char** out_json);
DPPNET_API dppnet_status dppnet_model_predict(const dppnet_model* model, const double* features, size_t feature_count,
                                              const char* question, char** out_json);
/* JSON-lines, one {id, answer, class, confidence} per example. `options_json`
 * may carry {"multiple_choice": path}; pass NULL for none. */
DPPNET_API dppnet_status dppnet_model_predict_dataset(const dppnet_model* model, const dppnet_dataset* data,
                                                      const char* options_json, char** out_jsonl);
/* Options: {"wups_thresholds":[...], "taxonomy":path, "vqa":bool, "multiple_choice":path}. */
DPPNET_API dppnet_status dppnet_model_evaluate(const dppnet_model* model, const dppnet_dataset* data,
                                               const char* options_json, char** out_json);
/* `corpus_json` is a JSON array of question strings. */
DPPNET_API dppnet_status dppnet_model_retrieve(const dppnet_model* model, const char* query, const char* corpus_json,
                                               size_t top_k, char** out_json);

/* Scores a predictions file against a dataset with the same options as above. */
DPPNET_API dppnet_status dppnet_evaluate_predictions(const char* predictions_path, const dppnet_dataset* data,
                                                     const char* options_json, char** out_json);

/* Finite-difference oracle suite; `config_json` may be NULL. The status is
 * DPPNET_OK whenever the suite ran; inspect "passed" in the report. */
DPPNET_API dppnet_status dppnet_gradcheck(const char* config_json, uint64_t seed, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* DPPNET_DPPNET_H */
