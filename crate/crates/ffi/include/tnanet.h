#ifndef TNANET_H
#define TNANET_H

/* Generated by cbindgen from the tnanet-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum TnanetStatus {
  TNANET_STATUS_OK = 0,
  TNANET_STATUS_NULL_POINTER = 1,
  TNANET_STATUS_INVALID_ARGUMENT = 2,
  TNANET_STATUS_IO_ERROR = 3,
  TNANET_STATUS_CORRUPT_CHECKPOINT = 4,
  TNANET_STATUS_SHAPE_MISMATCH = 5,
  TNANET_STATUS_PROCESSING_ERROR = 6,
} TnanetStatus;

// Opaque model handle.
typedef struct TnanetModel TnanetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the underlying library; static storage, do not free.
const char *tnanet_version(void);

// Number of features per window in the preprocessing pipeline (rows of the
// extracted matrix).
size_t tnanet_feature_count(void);

// Number of windows a full-length recording is clipped to (columns of the
// extracted matrix).
size_t tnanet_window_count(void);

// Copies the last error message of this thread into `buf` (truncating if
// needed, always NUL-terminated when `len > 0`) and returns the full
// message length in bytes.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null (query mode).
size_t tnanet_last_error(char *buf, size_t len);

// Loads a checkpoint into a fresh model handle.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
// pointer. On success `*out` owns the model and must be released with
// [`tnanet_model_free`].
enum TnanetStatus tnanet_model_load(const char *path, struct TnanetModel **out);

// Releases a model handle. Passing null is a no-op.
//
// # Safety
// `model` must have come from [`tnanet_model_load`] and not been freed.
void tnanet_model_free(struct TnanetModel *model);

// Reports the input dimensions the model expects: `channels` feature rows
// of `len` points each.
//
// # Safety
// All pointers must be valid.
enum TnanetStatus tnanet_model_dims(const struct TnanetModel *model, size_t *channels, size_t *len);

// Runs eval-mode inference on one sample.
//
// `matrix` holds `matrix_len` doubles, row-major (channels x len) matching
// [`tnanet_model_dims`]. On success `out_probs[0]` is the negative-class
// and `out_probs[1]` the positive-class probability, and `out_label` (when
// non-null) the predicted label with the negative-wins tie rule.
//
// # Safety
// Pointers must be valid for the documented lengths.
enum TnanetStatus tnanet_model_predict(const struct TnanetModel *model,
                                       const double *matrix,
                                       size_t matrix_len,
                                       double *out_probs,
                                       uint8_t *out_label);

// Runs the preprocessing pipeline on one raw recording and writes the
// normalized feature matrix.
//
// `out` must hold `tnanet_feature_count() * tnanet_window_count()` doubles;
// it is filled row-major (features x windows).
//
// # Safety
// Pointers must be valid for the documented lengths.
enum TnanetStatus tnanet_extract_features(const double *static_phase,
                                          size_t static_len,
                                          const double *stimulation,
                                          size_t stimulation_len,
                                          double sample_rate,
                                          double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TNANET_H */
