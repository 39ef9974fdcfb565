/* C interface for the sedge ensemble library. */

#ifndef SEDGE_H
#define SEDGE_H

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this interface.
typedef enum SedgeStatus {
  SEDGE_STATUS_OK = 0,
  // A required pointer argument was null.
  SEDGE_STATUS_NULL_ARGUMENT = 1,
  // An argument failed validation (bad length, unknown name, bad range).
  SEDGE_STATUS_INVALID_ARGUMENT = 2,
  // The filesystem refused a read or write.
  SEDGE_STATUS_IO_ERROR = 3,
  // A file or JSON string did not parse.
  SEDGE_STATUS_PARSE_ERROR = 4,
  // Loaded data is structurally inconsistent.
  SEDGE_STATUS_VALIDATION_ERROR = 5,
  // Internal failure; the message has details.
  SEDGE_STATUS_RUNTIME_ERROR = 6,
} SedgeStatus;

// A trained dispatcher plus adapters, ready for inference.
typedef struct SedgeModel SedgeModel;

// Cached pool of frozen model outputs plus its manifest.
typedef struct SedgePool SedgePool;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread. Never
// null.
const char *sedge_last_error(void);

// Library version as a static string, e.g. "0.1.0".
const char *sedge_version(void);

// Loads a pool directory (manifest plus cached tensors).
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be a valid pointer.
enum SedgeStatus sedge_pool_load(const char *dir, struct SedgePool **out);

// Generates a synthetic pool into `out_dir` and returns a handle to
// it. `config_json` may be null for the default generator config.
//
// # Safety
// Strings must be NUL-terminated; `out` may be null if the caller
// only wants the files.
enum SedgeStatus sedge_generate_pool(const char *config_json,
                                     const char *out_dir,
                                     struct SedgePool **out);

// Releases a pool handle. Null is a no-op.
//
// # Safety
// `pool` must be null or a pointer from this library, freed once.
void sedge_pool_free(struct SedgePool *pool);

// Number of frozen models in the pool; 0 for a null handle.
//
// # Safety
// `pool` must be null or a live pool handle.
size_t sedge_pool_num_models(const struct SedgePool *pool);

// Number of shared label classes; 0 for a null handle.
//
// # Safety
// `pool` must be null or a live pool handle.
size_t sedge_pool_num_classes(const struct SedgePool *pool);

// Number of domains; 0 for a null handle.
//
// # Safety
// `pool` must be null or a live pool handle.
size_t sedge_pool_num_domains(const struct SedgePool *pool);

// Number of cached samples; 0 for a null handle.
//
// # Safety
// `pool` must be null or a live pool handle.
size_t sedge_pool_num_samples(const struct SedgePool *pool);

// Width of the sample embeddings; 0 for a null handle.
//
// # Safety
// `pool` must be null or a live pool handle.
size_t sedge_pool_embed_dim(const struct SedgePool *pool);

// Domain name at `index` as a NUL-terminated string copied into
// `buf` (capacity `buf_len`, including the terminator).
//
// # Safety
// `pool` must be a live handle and `buf` must hold `buf_len` bytes.
enum SedgeStatus sedge_pool_domain_name(const struct SedgePool *pool,
                                        size_t index,
                                        char *buf,
                                        size_t buf_len);

// Trains a dispatcher on `pool` holding out `target_domain`.
// `config_json` may be null for defaults; `run_dir` may be null to
// skip persisting the run (existing files in `run_dir` are
// overwritten).
//
// # Safety
// `pool` must be a live handle, strings NUL-terminated, `out` valid.
enum SedgeStatus sedge_train(const struct SedgePool *pool,
                             const char *target_domain,
                             const char *config_json,
                             const char *run_dir,
                             struct SedgeModel **out);

// Loads a persisted run directory against the pool it was trained on.
//
// # Safety
// `pool` must be a live handle, `dir` NUL-terminated, `out` valid.
enum SedgeStatus sedge_model_load(const char *dir,
                                  const struct SedgePool *pool,
                                  struct SedgeModel **out);

// Releases a model handle. Null is a no-op.
//
// # Safety
// `model` must be null or a pointer from this library, freed once.
void sedge_model_free(struct SedgeModel *model);

// Number of models the dispatcher mixes; 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t sedge_model_num_models(const struct SedgeModel *model);

// Number of shared label classes; 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t sedge_model_num_classes(const struct SedgeModel *model);

// Expected embedding length for `sedge_dispatch`; 0 for null.
//
// # Safety
// `model` must be null or a live model handle.
size_t sedge_model_embed_dim(const struct SedgeModel *model);

// Expected total length of the concatenated raw logits passed to
// `sedge_dispatch`: the sum over models of their group's label
// width, in model id order. 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t sedge_model_logits_len(const struct SedgeModel *model);

// Dispatches one sample. `embedding` holds `sedge_model_embed_dim`
// values; `logits` holds `sedge_model_logits_len` values, the raw
// outputs of every frozen model concatenated in model id order.
//
// On success writes the per-model mixture weights to `weights_out`
// (`sedge_model_num_models` values), the combined prediction vector
// to `prediction_out` (`sedge_model_num_classes` values), and the
// predicted class to `class_out`. Each out-pointer may be null to
// skip that output.
//
// # Safety
// `model` must be a live handle and every non-null pointer must
// reference a buffer of the documented length.
enum SedgeStatus sedge_dispatch(const struct SedgeModel *model,
                                const double *embedding,
                                size_t embedding_len,
                                const double *logits,
                                size_t logits_len,
                                double *weights_out,
                                double *prediction_out,
                                size_t *class_out);

// Accuracy of `model` over every cached sample of one domain in
// `pool`. The pool must structurally match the pool the model was
// trained on.
//
// # Safety
// Handles must be live, `domain` NUL-terminated, `acc_out` valid.
enum SedgeStatus sedge_evaluate_domain(const struct SedgeModel *model,
                                       const struct SedgePool *pool,
                                       const char *domain,
                                       double *acc_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEDGE_H */
