#ifndef DQNN_H
#define DQNN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum DqnnStatus {
  DQNN_STATUS_OK = 0,
  DQNN_STATUS_NULL_POINTER = 1,
  DQNN_STATUS_INVALID_ARGUMENT = 2,
  DQNN_STATUS_SHAPE = 3,
  DQNN_STATUS_NUMERIC = 4,
  DQNN_STATUS_CAPACITY = 5,
  DQNN_STATUS_WIRING = 6,
  DQNN_STATUS_IO = 7,
  DQNN_STATUS_CHECKPOINT = 8,
  DQNN_STATUS_CONFIG = 9,
  DQNN_STATUS_PANIC = 10,
} DqnnStatus;

/**
 * Opaque model handle.
 */
typedef struct DqnnModel DqnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *dqnn_last_error_message(void);

/**
 * Static, NUL-terminated name of a status code; unknown codes map to
 * "unknown status".
 */
const char *dqnn_status_name(int32_t status);

/**
 * Library version, NUL-terminated.
 */
const char *dqnn_version(void);

/**
 * Builds an ensemble over `grid_h x grid_w` inputs split into `n_qc`
 * row-contiguous shards of `n_qubits` qubits each, with the default ten
 * observables and scale `c`. Parameters start at zero; see
 * `dqnn_model_init_params`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DqnnStatus dqnn_model_new(size_t grid_h,
                               size_t grid_w,
                               size_t n_qc,
                               size_t n_qubits,
                               double c,
                               struct DqnnModel **out);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DqnnStatus dqnn_model_load(const char *path, struct DqnnModel **out);

/**
 * Writes a JSON checkpoint that reloads bit-exactly.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum DqnnStatus dqnn_model_save(const struct DqnnModel *model, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void dqnn_model_free(struct DqnnModel *model);

/**
 * Total trainable parameters over all shards, 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t dqnn_model_num_params(const struct DqnnModel *model);

/**
 * Number of input values per sample (`grid_h * grid_w`), 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t dqnn_model_sample_len(const struct DqnnModel *model);

/**
 * Number of logits (classes), 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t dqnn_model_num_outputs(const struct DqnnModel *model);

/**
 * Number of shards, 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t dqnn_model_num_shards(const struct DqnnModel *model);

/**
 * Draws every parameter uniformly from `[0, pi)` with `seed`.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum DqnnStatus dqnn_model_init_params(struct DqnnModel *model, uint64_t seed);

/**
 * Copies the parameters into `out[0..len]`; `len` must equal
 * `dqnn_model_num_params`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum DqnnStatus dqnn_model_get_params(const struct DqnnModel *model, double *out, size_t len);

/**
 * Replaces the parameters from `values[0..len]`. Non-finite values are
 * rejected and leave the model unchanged.
 *
 * # Safety
 * `values` must point to `len` readable doubles.
 */
enum DqnnStatus dqnn_model_set_params(struct DqnnModel *model, const double *values, size_t len);

/**
 * Forward pass on one sample of `sample_len` angles. Writes the logits and,
 * if `probs` is not NULL, the softmax probabilities; both buffers hold
 * `n_out` doubles.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum DqnnStatus dqnn_model_forward(const struct DqnnModel *model,
                                   const double *sample,
                                   size_t sample_len,
                                   double *logits,
                                   double *probs,
                                   size_t n_out);

/**
 * Cross-entropy loss of one labelled sample and its gradient with respect
 * to every parameter (flat layout, `grad_len = dqnn_model_num_params`).
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths; `loss` must be
 * writable.
 */
enum DqnnStatus dqnn_model_loss_grad(const struct DqnnModel *model,
                                     const double *sample,
                                     size_t sample_len,
                                     size_t label,
                                     double *loss,
                                     double *grad,
                                     size_t grad_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DQNN_H */
