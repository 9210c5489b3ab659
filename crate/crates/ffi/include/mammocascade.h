#ifndef MAMMOCASCADE_H
#define MAMMOCASCADE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every `mvm_*` function.
 */
typedef enum MvmStatus {
  MVM_STATUS_OK = 0,
  MVM_STATUS_NULL_POINTER = 1,
  MVM_STATUS_INVALID_INPUT = 2,
  MVM_STATUS_SHAPE = 3,
  MVM_STATUS_CHECKPOINT = 4,
  MVM_STATUS_IO = 5,
  MVM_STATUS_PANIC = 6,
  MVM_STATUS_OTHER = 7,
} MvmStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct MvmModel MvmModel;

/**
 * Operating point where sensitivity equals specificity.
 */
typedef struct MvmEer {
  double threshold;
  double accuracy;
  double sensitivity;
  double specificity;
} MvmEer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Mann-Whitney AUC with ties counted as one half. Labels are 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements; `out` must be writable.
 */
enum MvmStatus mvm_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Hanley-McNeil standard error of an AUC.
 *
 * # Safety
 * `out` must be writable.
 */
enum MvmStatus mvm_hanley_mcneil_se(double auc, size_t n_pos, size_t n_neg, double *out);

/**
 * Equal-error operating point of a score set.
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements; `out` must be writable.
 */
enum MvmStatus mvm_eer(const double *scores, const uint8_t *labels, size_t n, struct MvmEer *out);

/**
 * Mean and population standard deviation of per-fold values.
 *
 * # Safety
 * `values` must point to `n` elements; `mean` and `std` must be writable.
 */
enum MvmStatus mvm_cv_aggregate(const double *values, size_t n, double *mean, double *std);

/**
 * Learning rate of a warmup + cyclic cosine schedule at `epoch`. A plan
 * with `warmup_epochs = 0` and `delta = 0` is a fixed rate.
 *
 * # Safety
 * `out` must be writable.
 */
enum MvmStatus mvm_lr_at(double base_lr,
                         size_t warmup_epochs,
                         size_t period,
                         double delta,
                         size_t total_epochs,
                         size_t epoch,
                         double *out);

/**
 * Loads a checkpoint. The handle must be released with [`mvm_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MvmStatus mvm_model_load(const char *path, struct MvmModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`mvm_model_load`] and not be used afterwards.
 */
void mvm_model_free(struct MvmModel *model);

/**
 * Number of output classes (0 for a bare backbone).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum MvmStatus mvm_model_num_classes(const struct MvmModel *model, size_t *out);

/**
 * Expected input height and width.
 *
 * # Safety
 * `model` must be a live handle; `height` and `width` must be writable.
 */
enum MvmStatus mvm_model_input_size(const struct MvmModel *model, size_t *height, size_t *width);

/**
 * Class probabilities for one preprocessed input. `mlo` is null for
 * single-input models and required for two-view models. Each image is
 * `height * width` row-major floats; `probs` receives `n_probs` values,
 * which must equal the class count.
 *
 * # Safety
 * Pointers must be valid for the stated sizes; `model` must be live.
 */
enum MvmStatus mvm_model_forward(const struct MvmModel *model,
                                 const float *cc,
                                 const float *mlo,
                                 size_t height,
                                 size_t width,
                                 float *probs,
                                 size_t n_probs);

/**
 * Message for the last non-`Ok` status on this thread; empty after a
 * success. The pointer stays valid until the next `mvm_*` call on the
 * same thread.
 */
const char *mvm_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAMMOCASCADE_H */
