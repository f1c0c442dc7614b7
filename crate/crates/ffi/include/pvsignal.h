#ifndef PVSIGNAL_H
#define PVSIGNAL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PvStatus {
  PV_STATUS_OK = 0,
  PV_STATUS_NULL_POINTER = 1,
  PV_STATUS_INVALID_ARGUMENT = 2,
  PV_STATUS_DATA_ERROR = 3,
  PV_STATUS_NUMERICAL_ERROR = 4,
  PV_STATUS_PANIC = 5,
} PvStatus;

typedef enum PvSplitMethod {
  PV_SPLIT_METHOD_THINNING = 0,
  PV_SPLIT_METHOD_STRATIFIED = 1,
  PV_SPLIT_METHOD_RANDOM = 2,
} PvSplitMethod;

typedef struct PvGpsFit PvGpsFit;

/**
 * A count table with its expected counts.
 */
typedef struct PvTable PvTable;

typedef struct PvZgpsFit PvZgpsFit;

/**
 * Gamma mixture prior `(alpha1, beta1, alpha2, beta2, omega)`.
 */
typedef struct PvGpsHyper {
  double alpha1;
  double beta1;
  double alpha2;
  double beta2;
  double omega;
} PvGpsHyper;

typedef struct PvGpsCell {
  double ebgm;
  double mean;
  double lower;
  double upper;
} PvGpsCell;

typedef struct PvZinbGroup {
  /**
   * Nonzero when the group could not be fitted; the other fields are NaN.
   */
  uint8_t failed;
  uint8_t converged;
  uint8_t poisson_like;
  double r_hat;
  double loglik;
} PvZinbGroup;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pv_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pv_version(void);

/**
 * Builds a table from `n_drugs * n_aes` counts. Drugs are named `D1..`,
 * AEs `A1..`. Expected counts come from the margins.
 *
 * # Safety
 * `counts` must point to `n_drugs * n_aes` values and `out` must be writable.
 */
enum PvStatus pv_table_new(size_t n_drugs,
                           size_t n_aes,
                           const uint64_t *counts,
                           struct PvTable **out);

/**
 * # Safety
 * `table` must come from [`pv_table_new`] and not have been freed.
 */
void pv_table_free(struct PvTable *table);

/**
 * Copies the expected counts into `out` (`len` must equal drugs × AEs).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum PvStatus pv_table_expected(const struct PvTable *table, double *out, size_t len);

/**
 * Log-pmf of the negative binomial with the given shape and success
 * probability `q`, as used in the GPS marginal.
 */
double pv_nb_logpmf(uint64_t n, double shape, double q);

/**
 * Log-pmf of the zero-inflated negative binomial count with exposure `e`,
 * dispersion `r`, zero probability `p` and rate mean `mu`.
 */
double pv_zinb_logpmf(uint64_t n, double e, double r, double p, double mu);

/**
 * Default starting values of the GPS fit.
 */
struct PvGpsHyper pv_gps_default_hyper(void);

/**
 * Fits the GPS prior. `init` may be null for the defaults.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
enum PvStatus pv_gps_fit(const struct PvTable *table,
                         const struct PvGpsHyper *init,
                         double tol,
                         size_t max_iter,
                         struct PvGpsFit **out);

/**
 * # Safety
 * `fit` must come from [`pv_gps_fit`] and not have been freed.
 */
void pv_gps_fit_free(struct PvGpsFit *fit);

/**
 * Fitted hyperparameters, log-likelihood, convergence flag and iteration count.
 * Any output pointer may be null.
 *
 * # Safety
 * `fit` must be a live handle.
 */
enum PvStatus pv_gps_fit_result(const struct PvGpsFit *fit,
                                struct PvGpsHyper *theta,
                                double *loglik,
                                uint8_t *converged,
                                size_t *iterations);

/**
 * Posterior summary of one cell: EBGM, mean and the `lower_prob` and
 * `upper_prob` quantiles.
 *
 * # Safety
 * `theta` and `out` must be valid.
 */
enum PvStatus pv_gps_posterior(uint64_t n,
                               double e,
                               const struct PvGpsHyper *theta,
                               double lower_prob,
                               double upper_prob,
                               struct PvGpsCell *out);

/**
 * Posterior mean of λ and zero-mass probability for one cell.
 *
 * # Safety
 * Output pointers must be writable; `pi_hat` may be null.
 */
enum PvStatus pv_eb_lambda(uint64_t n,
                           double e,
                           double p,
                           double mu,
                           double r,
                           double *lambda_hat,
                           double *pi_hat);

/**
 * Fits the zero-inflated model per AE group. `ae_group[j]` is the group
 * index of AE column `j`.
 *
 * # Safety
 * `ae_group` must hold one entry per AE; `out` must be writable.
 */
enum PvStatus pv_zgps_fit(const struct PvTable *table,
                          const uint32_t *ae_group,
                          size_t n_aes,
                          double tol,
                          size_t max_iter,
                          struct PvZgpsFit **out);

/**
 * # Safety
 * `fit` must come from [`pv_zgps_fit`] and not have been freed.
 */
void pv_zgps_fit_free(struct PvZgpsFit *fit);

/**
 * Number of groups. Group `k` of the fit is the `k`-th smallest index in
 * `ae_group`.
 *
 * # Safety
 * `fit` must be a live handle.
 */
size_t pv_zgps_n_groups(const struct PvZgpsFit *fit);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum PvStatus pv_zgps_group(const struct PvZgpsFit *fit, size_t group, struct PvZinbGroup *out);

/**
 * Group-level rates as a drugs × groups matrix; NaN for failed groups.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum PvStatus pv_zgps_s_hat(const struct PvZgpsFit *fit, double *out, size_t len);

/**
 * AE-level posterior means as a drugs × AEs matrix; NaN where unavailable.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum PvStatus pv_zgps_lambda_hat(const struct PvZgpsFit *fit, double *out, size_t len);

/**
 * Splits the counts into train and validation tables. For random splits,
 * `train_present[k]` is 0 where cell `k` was held out (and `valid_present`
 * is its complement); other methods set both to 1. Presence pointers may be
 * null.
 *
 * # Safety
 * Every non-null output must point to drugs × AEs writable elements.
 */
enum PvStatus pv_split(const struct PvTable *table,
                       enum PvSplitMethod method,
                       double epsilon,
                       uint64_t seed,
                       uint64_t *train,
                       uint64_t *valid,
                       uint8_t *train_present,
                       uint8_t *valid_present,
                       size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVSIGNAL_H */
