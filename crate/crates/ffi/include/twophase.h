#ifndef TWOPHASE_H
#define TWOPHASE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  TP_STATUS_IO = 3,
  TP_STATUS_INVALID_DATA = 4,
  TP_STATUS_FIT_FAILED = 5,
  TP_STATUS_CALIBRATION_FAILED = 6,
  TP_STATUS_ESTIMATION_FAILED = 7,
  TP_STATUS_BUFFER_TOO_SMALL = 8,
  TP_STATUS_PANIC = 9,
} TpStatus;

typedef enum TpDistance {
  TP_DISTANCE_CHI_SQUARE = 0,
  TP_DISTANCE_EXPONENTIAL = 1,
} TpDistance;

typedef enum TpMethod {
  TP_METHOD_DIRECT_S2 = 0,
  TP_METHOD_IMPUTATION = 1,
  TP_METHOD_CALIB_INFLUENCE = 2,
} TpMethod;

/**
 * A validated two-phase dataset.
 */
typedef struct TpDataset TpDataset;

/**
 * Coefficients and their design covariance from one estimator run.
 */
typedef struct TpEstimate TpEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *tp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tp_version(void);

/**
 * Weighted logistic fit of `y` on the `n × k` matrix `x`, whose first column
 * must be the intercept.
 *
 * Writes `k` coefficients to `beta_out` and, when `influence_out` is not
 * NULL, the `n × k` influence matrix (row `i` is `∂β̂/∂w_i`).
 *
 * # Safety
 * `x` must hold `n*k` doubles, `y` and `w` `n` each, `beta_out` room for `k`
 * and `influence_out` (if given) room for `n*k`.
 */
enum TpStatus tp_logistic_fit(const double *x,
                              size_t n,
                              size_t k,
                              const double *y,
                              const double *w,
                              double n_scale,
                              double *beta_out,
                              double *influence_out);

/**
 * Calibrate weights `w` of `n2` units with auxiliaries `v` (`n2 × k`) to the
 * totals `target` (`k`). Writes the adjustment factors to `factors_out`; the
 * calibrated weights are `w[i] * factors_out[i]`.
 *
 * # Safety
 * `v` must hold `n2*k` doubles, `w` and `factors_out` `n2`, `target` `k`.
 */
enum TpStatus tp_calibrate(const double *v,
                           size_t n2,
                           size_t k,
                           const double *w,
                           const double *target,
                           enum TpDistance distance,
                           double n_scale,
                           double *factors_out);

/**
 * Read a dataset from a CSV file with the default column names and reject
 * it unless it validates.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TpStatus tp_dataset_read_csv(const char *path, struct TpDataset **out);

/**
 * # Safety
 * `ds` must come from [`tp_dataset_read_csv`] and not be used afterwards.
 */
void tp_dataset_free(struct TpDataset *ds);

/**
 * First-phase size, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t tp_dataset_n1(const struct TpDataset *ds);

/**
 * Second-phase size, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t tp_dataset_n2(const struct TpDataset *ds);

/**
 * Fit the outcome model with one estimator.
 *
 * `covariates` and `interactions` are comma-separated column lists
 * (`interactions` may be NULL, entries look like `x2:x1_2`). `predictor` names
 * the ancillary column holding the prediction of `x2`; it is required for
 * imputation and calibration and ignored for `DirectS2`.
 *
 * # Safety
 * `ds` must be a live dataset handle, strings NUL-terminated, `out` valid.
 */
enum TpStatus tp_estimate(const struct TpDataset *ds,
                          enum TpMethod method,
                          const char *covariates,
                          const char *interactions,
                          const char *predictor,
                          enum TpDistance distance,
                          struct TpEstimate **out);

/**
 * # Safety
 * `est` must come from [`tp_estimate`] and not be used afterwards.
 */
void tp_estimate_free(struct TpEstimate *est);

/**
 * Number of coefficients, or 0 for NULL.
 *
 * # Safety
 * `est` must be NULL or a live estimate handle.
 */
size_t tp_estimate_dim(const struct TpEstimate *est);

/**
 * Copy the coefficients into `beta_out` (room for `len`).
 *
 * # Safety
 * `est` must be a live handle and `beta_out` hold `len` doubles.
 */
enum TpStatus tp_estimate_beta(const struct TpEstimate *est, double *beta_out, size_t len);

/**
 * Copy the `k × k` covariance (row-major) into `cov_out` (room for `len`)
 * and the design degrees of freedom into `df_out` (may be NULL).
 *
 * # Safety
 * `est` must be a live handle, `cov_out` hold `len` doubles and `df_out` be
 * NULL or valid.
 */
enum TpStatus tp_estimate_covariance(const struct TpEstimate *est,
                                     double *cov_out,
                                     size_t len,
                                     int64_t *df_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOPHASE_H */
