#ifndef LARS_UE_H
#define LARS_UE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LarsUeStatus {
  LARS_UE_STATUS_OK = 0,
  LARS_UE_STATUS_NULL_POINTER = 1,
  LARS_UE_STATUS_INVALID_ARGUMENT = 2,
  LARS_UE_STATUS_IO = 3,
  LARS_UE_STATUS_FORMAT = 4,
  LARS_UE_STATUS_UNDEFINED = 5,
  LARS_UE_STATUS_INTERNAL = 6,
} LarsUeStatus;

/**
 * A loaded LARS scorer.
 */
typedef struct LarsUeModel LarsUeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *lars_ue_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lars_ue_version(void);

/**
 * Loads a model file. On success `*out` owns a handle that must be passed
 * to `lars_ue_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LarsUeStatus lars_ue_model_load(const char *path, struct LarsUeModel **out);

/**
 * Releases a model handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from `lars_ue_model_load` and not be used afterwards.
 */
void lars_ue_model_free(struct LarsUeModel *model);

/**
 * Scores one answer: `tokens` and `logprobs` hold `len` entries each.
 * Writes the probability-like score in (0, 1].
 *
 * # Safety
 * All pointers must be valid for the stated lengths; strings NUL-terminated.
 */
enum LarsUeStatus lars_ue_model_score(const struct LarsUeModel *model,
                                      const char *question,
                                      const char *const *tokens,
                                      const double *logprobs,
                                      size_t len,
                                      double *out_score);

/**
 * Length-normalized score: `exp(mean(logprobs))`.
 *
 * # Safety
 * `logprobs` must hold `len` values; `out` must be valid.
 */
enum LarsUeStatus lars_ue_length_normalized_score(const double *logprobs, size_t len, double *out);

/**
 * Sequence probability: `exp(sum(logprobs))`.
 *
 * # Safety
 * `logprobs` must hold `len` values; `out` must be valid.
 */
enum LarsUeStatus lars_ue_sequence_prob(const double *logprobs, size_t len, double *out);

/**
 * Rouge-L F-measure between two whitespace-tokenized strings.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated; `out` must be valid.
 */
enum LarsUeStatus lars_ue_rouge_l(const char *a, const char *b, double *out);

/**
 * AUROC of `uncertainties` against labels (1 = correct, 0 = incorrect).
 * `LARS_UE_STATUS_UNDEFINED` when only one class is present.
 *
 * # Safety
 * Both arrays must hold `len` entries; `out` must be valid.
 */
enum LarsUeStatus lars_ue_auroc(const double *uncertainties,
                                const uint8_t *labels,
                                size_t len,
                                double *out);

/**
 * Prediction rejection ratio of `uncertainties` against labels.
 *
 * # Safety
 * Both arrays must hold `len` entries; `out` must be valid.
 */
enum LarsUeStatus lars_ue_prr(const double *uncertainties,
                              const uint8_t *labels,
                              size_t len,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LARS_UE_H */
