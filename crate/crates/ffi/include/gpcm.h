#ifndef GPCM_H
#define GPCM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum GpcmStatus {
  GPCM_STATUS_OK = 0,
  GPCM_STATUS_NULL_POINTER = 1,
  GPCM_STATUS_INVALID_INPUT = 2,
  GPCM_STATUS_DIMENSION_MISMATCH = 3,
  GPCM_STATUS_DATA_ERROR = 4,
  GPCM_STATUS_NONCONVERGENCE = 5,
  GPCM_STATUS_NUMERICAL_FAILURE = 6,
  GPCM_STATUS_BUFFER_TOO_SMALL = 7,
  GPCM_STATUS_PANIC = 99,
} GpcmStatus;

/**
 * Fitted item parameters and abilities, from either estimator.
 */
typedef struct GpcmFit GpcmFit;

/**
 * Response matrix handle.
 */
typedef struct GpcmResponses GpcmResponses;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gpcm_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into the library on this
 * thread.
 */
const char *gpcm_last_error_message(void);

/**
 * Category probabilities of one item at `theta`.
 *
 * `steps` holds the `n_steps` step parameters; `out_probs` receives
 * `n_steps + 1` probabilities and must have room for them.
 *
 * # Safety
 * `steps` must be valid for `n_steps` reads and `out_probs` for `out_len`
 * writes.
 */
enum GpcmStatus gpcm_category_probs(double theta,
                                    double a,
                                    const double *steps,
                                    size_t n_steps,
                                    double *out_probs,
                                    size_t out_len);

/**
 * Builds a response matrix from `n_persons * n_items` row-major
 * categories. `n_categories[j]` is the number of categories of item `j`.
 *
 * # Safety
 * `data` must be valid for `n_persons * n_items` reads, `n_categories` for
 * `n_items` reads and `out` for one write.
 */
enum GpcmStatus gpcm_responses_new(const uint16_t *data,
                                   size_t n_persons,
                                   size_t n_items,
                                   const size_t *n_categories,
                                   struct GpcmResponses **out);

/**
 * # Safety
 * `responses` must be null or a handle from `gpcm_responses_new` that has
 * not been freed.
 */
void gpcm_responses_free(struct GpcmResponses *responses);

/**
 * Marginal maximum likelihood fit by EM with default settings; abilities
 * are EAP scores.
 *
 * # Safety
 * `responses` must be a live handle and `out` valid for one write.
 */
enum GpcmStatus gpcm_fit_mmle(const struct GpcmResponses *responses, struct GpcmFit **out);

/**
 * Bayesian fit by HMC with default settings and the given seed; estimates
 * are posterior means. Returns `GPCM_STATUS_NONCONVERGENCE` when the PSRF
 * check fails after all retries.
 *
 * # Safety
 * `responses` must be a live handle and `out` valid for one write.
 */
enum GpcmStatus gpcm_fit_mcmc(const struct GpcmResponses *responses,
                              uint64_t seed,
                              struct GpcmFit **out);

/**
 * Number of items in a fit, 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t gpcm_fit_n_items(const struct GpcmFit *fit);

/**
 * Number of persons in a fit, 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t gpcm_fit_n_persons(const struct GpcmFit *fit);

/**
 * Copies item `item` (0-based): discrimination into `a`, steps into
 * `steps`, and the number of steps into `n_steps`.
 *
 * # Safety
 * `fit` must be a live handle, `a` and `n_steps` valid for one write and
 * `steps` for `steps_len` writes.
 */
enum GpcmStatus gpcm_fit_item(const struct GpcmFit *fit,
                              size_t item,
                              double *a,
                              double *steps,
                              size_t steps_len,
                              size_t *n_steps);

/**
 * Copies the ability estimates into `out`, which needs room for
 * `gpcm_fit_n_persons(fit)` values.
 *
 * # Safety
 * `fit` must be a live handle and `out` valid for `len` writes.
 */
enum GpcmStatus gpcm_fit_abilities(const struct GpcmFit *fit, double *out, size_t len);

/**
 * Convergence details: EM convergence flag (always 1 for MCMC), largest
 * PSRF (NaN for MMLE) and the number of MCMC retries. Any output pointer
 * may be null.
 *
 * # Safety
 * `fit` must be a live handle; non-null outputs must be valid for one write.
 */
enum GpcmStatus gpcm_fit_diagnostics(const struct GpcmFit *fit,
                                     int32_t *converged,
                                     double *max_psrf,
                                     size_t *n_retries);

/**
 * # Safety
 * `fit` must be null or a handle from a fit function that has not been
 * freed.
 */
void gpcm_fit_free(struct GpcmFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPCM_H */
