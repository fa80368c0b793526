#ifndef FUSIONATTN_H
#define FUSIONATTN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FaStatus {
  FA_OK = 0,
  FA_ERR_NULL = 1,
  FA_ERR_INVALID = 2,
  FA_ERR_IO = 3,
  FA_ERR_SHAPE = 4,
  FA_ERR_DATA = 5,
  FA_ERR_BUFFER_TOO_SMALL = 6,
  FA_ERR_PANIC = 7,
} FaStatus;

/**
 * Opaque model handle.
 */
typedef struct FaModel FaModel;

/**
 * Opaque tensor handle (64-bit values, row-major).
 */
typedef struct FaTensor FaTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *fa_last_error(void);

/**
 * Builds a freshly initialized model.
 *
 * `kind` is one of `self`, `cross`, `self-nosp`, `cross-nosp`,
 * `cross+self`; `modalities` a code such as `tva`. `desk_scale` selects
 * the small synthetic geometry instead of the full-size one.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum FaStatus fa_model_new(const char *kind,
                           const char *modalities,
                           bool desk_scale,
                           size_t hidden,
                           size_t heads,
                           uint64_t seed,
                           struct FaModel **out);

/**
 * Builds a model from a `key=value` configuration document (the format of
 * a checkpoint's `config.txt`).
 *
 * # Safety
 * `config` must be NUL-terminated; `out` must be writable.
 */
enum FaStatus fa_model_from_config(const char *config, uint64_t seed, struct FaModel **out);

/**
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
enum FaStatus fa_model_load(const char *dir, struct FaModel **out);

/**
 * # Safety
 * `model` must come from this library; `dir` must be NUL-terminated.
 */
enum FaStatus fa_model_save(const struct FaModel *model, const char *dir);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void fa_model_free(struct FaModel *model);

/**
 * Total number of trainable scalars.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum FaStatus fa_model_parameter_count(const struct FaModel *model, size_t *out);

/**
 * Number of attention modules.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum FaStatus fa_model_attention_modules(const struct FaModel *model, size_t *out);

/**
 * Copies the model's `key=value` configuration, NUL-terminated, into
 * `buf`. `needed` receives the required size including the terminator;
 * a too-small buffer yields `FA_ERR_BUFFER_TOO_SMALL` and no copy.
 *
 * # Safety
 * `buf` must hold `len` bytes (it may be null when `len` is 0).
 */
enum FaStatus fa_model_config(const struct FaModel *model, char *buf, size_t len, size_t *needed);

/**
 * Class probabilities for one utterance.
 *
 * `inputs` holds one `max_len × width` tensor per model modality, in
 * audio, vision, text order (skipping absent modalities); `probs` receives
 * `probs_len` (= number of classes) values.
 *
 * # Safety
 * `inputs` must point to `n_inputs` valid tensor handles; `probs` must
 * hold `probs_len` doubles.
 */
enum FaStatus fa_model_predict(const struct FaModel *model,
                               const struct FaTensor *const *inputs,
                               size_t n_inputs,
                               double *probs,
                               size_t probs_len);

/**
 * Input geometry expected for modality code `modality` (`a`, `v` or `t`).
 *
 * # Safety
 * `rows` and `cols` must be writable.
 */
enum FaStatus fa_model_input_shape(const struct FaModel *model,
                                   char modality,
                                   size_t *rows,
                                   size_t *cols);

/**
 * Copies `data` (product of `dims` values) into a new tensor.
 *
 * # Safety
 * `dims` must hold `ndim` values and `data` their product.
 */
enum FaStatus fa_tensor_new(const size_t *dims,
                            size_t ndim,
                            const double *data,
                            struct FaTensor **out);

/**
 * Reads an FTNS file of either precision.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum FaStatus fa_tensor_read(const char *path, struct FaTensor **out);

/**
 * Writes an FTNS file, 32-bit (version 1) unless `double_precision`.
 *
 * # Safety
 * `tensor` must come from this library; `path` must be NUL-terminated.
 */
enum FaStatus fa_tensor_write(const struct FaTensor *tensor,
                              const char *path,
                              bool double_precision);

/**
 * Number of dimensions, or 0 for a null handle.
 *
 * # Safety
 * `tensor` must come from this library or be null.
 */
size_t fa_tensor_ndim(const struct FaTensor *tensor);

/**
 * Pointer to `ndim` dimensions, valid while the tensor lives.
 *
 * # Safety
 * `tensor` must come from this library or be null.
 */
const size_t *fa_tensor_dims(const struct FaTensor *tensor);

/**
 * Number of elements, or 0 for a null handle.
 *
 * # Safety
 * `tensor` must come from this library or be null.
 */
size_t fa_tensor_len(const struct FaTensor *tensor);

/**
 * Pointer to the row-major values, valid while the tensor lives.
 *
 * # Safety
 * `tensor` must come from this library or be null.
 */
const double *fa_tensor_data(const struct FaTensor *tensor);

/**
 * # Safety
 * `tensor` must come from this library and not be used afterwards. Null
 * is ignored.
 */
void fa_tensor_free(struct FaTensor *tensor);

/**
 * Welch's two-tailed t-test. Any of `t`, `df`, `p` may be null.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` doubles.
 */
enum FaStatus fa_welch_t_test(const double *a,
                              size_t na,
                              const double *b,
                              size_t nb,
                              double *t,
                              double *df,
                              double *p);

/**
 * Weighted and unweighted accuracy of a row-major `classes × classes`
 * confusion matrix (rows true, columns predicted).
 *
 * # Safety
 * `counts` must hold `classes²` values; `wa` and `uwa` must be writable.
 */
enum FaStatus fa_accuracy(const uint64_t *counts, size_t classes, double *wa, double *uwa);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSIONATTN_H */
