#ifndef BABYMAMBA_H
#define BABYMAMBA_H

/* Generated from the Rust sources by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result class of a C-ABI call. Numbering matches the CLI's process exit
// codes where the classes coincide.
typedef enum BmStatus {
  // Success.
  BM_STATUS_OK = 0,
  // Filesystem failure (missing file, permissions, short read).
  BM_STATUS_IO = 1,
  // Invalid configuration or tensor-shape mismatch.
  BM_STATUS_CONFIG = 2,
  // Malformed data: bad model file, bad JSON, protocol violation.
  BM_STATUS_DATA = 3,
  // Non-finite values encountered during computation.
  BM_STATUS_NUMERIC = 4,
  // A required pointer argument was null.
  BM_STATUS_NULL_POINTER = 5,
  // A string argument was not valid UTF-8.
  BM_STATUS_UTF8 = 6,
} BmStatus;

// Opaque model handle.
typedef struct BmModel BmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string. Never free it.
const char *bm_version(void);

// Message of the most recent failure on this thread, or null if the last
// call succeeded. The pointer is invalidated by the next failing call on
// the same thread; do not free it.
const char *bm_last_error(void);

// Load a serialized model from disk.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must point to writable
// storage for one pointer. On success `*out` owns the model.
enum BmStatus bm_model_load(const char *path, struct BmModel **out);

// Build a freshly initialized model from a configuration JSON document
// (the same schema the CLI writes into run directories under `"model"`).
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must point to
// writable storage for one pointer. On success `*out` owns the model.
enum BmStatus bm_model_build(const char *config_json, struct BmModel **out);

// Serialize a model to disk in the versioned binary format.
//
// # Safety
// `model` must be a live handle from this library; `path` must be a
// NUL-terminated string.
enum BmStatus bm_model_save(const struct BmModel *model, const char *path);

// Destroy a model handle. Null is a no-op; the handle must not be used
// afterwards.
//
// # Safety
// `model` must be null or a live handle from this library, freed at most
// once.
void bm_model_free(struct BmModel *model);

// Classify one window: writes the argmax class index to `*out_class`.
//
// # Safety
// `model` must be a live handle; `data` must point to
// `channels * seq_len` readable doubles; `out_class` must be writable.
enum BmStatus bm_model_predict(const struct BmModel *model,
                               const double *data,
                               size_t channels,
                               size_t seq_len,
                               size_t *out_class);

// Compute per-class scores for one window. `out_logits` must hold
// `bm_model_num_classes` doubles.
//
// # Safety
// Same as [`bm_model_predict`], plus `out_logits` must point to
// `num_classes` writable doubles.
enum BmStatus bm_model_logits(const struct BmModel *model,
                              const double *data,
                              size_t channels,
                              size_t seq_len,
                              double *out_logits,
                              size_t out_len);

// Number of output classes of the model.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum BmStatus bm_model_num_classes(const struct BmModel *model, size_t *out);

// Total learnable parameter count.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum BmStatus bm_model_param_count(const struct BmModel *model, uint64_t *out);

// Analytic multiply-accumulate count for one window at the model's
// configured shape.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum BmStatus bm_model_mac_count(const struct BmModel *model, uint64_t *out);

// Render the full analytic cost profile of a configuration (same JSON the
// CLI's `count` command emits, plus per-layer rows). The returned string
// must be released with [`bm_string_free`].
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must point to
// writable storage for one pointer.
enum BmStatus bm_cost_report_json(const char *config_json, char **out);

// Release a string allocated by this library.
//
// # Safety
// `s` must be null or a pointer previously returned through an
// out-parameter of this library, freed at most once.
void bm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BABYMAMBA_H */
