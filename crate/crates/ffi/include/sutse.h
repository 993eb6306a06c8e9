#ifndef SUTSE_H
#define SUTSE_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SutseStatus {
  SUTSE_STATUS_OK = 0,
  SUTSE_STATUS_NULL_POINTER = 1,
  SUTSE_STATUS_INVALID_INPUT = 2,
  SUTSE_STATUS_DIVERGENCE = 3,
  SUTSE_STATUS_SINGULAR = 4,
  SUTSE_STATUS_NO_CONVERGENCE = 5,
  SUTSE_STATUS_NUMERICAL = 6,
  SUTSE_STATUS_PARSE = 7,
  SUTSE_STATUS_IO = 8,
  SUTSE_STATUS_PANIC = 9,
} SutseStatus;

/**
 * Per-series filters plus the estimated forecast-error covariance.
 */
typedef struct SutseFastHandle SutseFastHandle;

/**
 * A completed multivariate filter run.
 */
typedef struct SutseFilterHandle SutseFilterHandle;

/**
 * An n × d observation panel; NaN marks a missing cell.
 */
typedef struct SutseSeriesHandle SutseSeriesHandle;

/**
 * A SUTSE model specification.
 */
typedef struct SutseSpecHandle SutseSpecHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `sutse_*` call on the same thread.
 */
const char *sutse_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SutseStatus sutse_spec_load(const char *path, struct SutseSpecHandle **out);

/**
 * The d-dimensional benchmark model with equicorrelation `rho`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SutseStatus sutse_spec_simulation(size_t d, double rho, struct SutseSpecHandle **out);

/**
 * Number of series, or 0 for a null handle.
 *
 * # Safety
 * `spec` must be null or a live handle.
 */
size_t sutse_spec_dim(const struct SutseSpecHandle *spec);

/**
 * # Safety
 * `spec` must be null or a handle not yet freed.
 */
void sutse_spec_free(struct SutseSpecHandle *spec);

/**
 * Copy an n × d row-major panel. NaN entries are missing.
 *
 * # Safety
 * `values` must point to `n * d` doubles and `out` must be valid.
 */
enum SutseStatus sutse_series_new(const double *values,
                                  size_t n,
                                  size_t d,
                                  struct SutseSeriesHandle **out);

/**
 * Draw n rows from the composed model of `spec`.
 *
 * # Safety
 * `spec` must be a live handle and `out` a valid pointer.
 */
enum SutseStatus sutse_series_simulate(const struct SutseSpecHandle *spec,
                                       size_t n,
                                       uint64_t seed,
                                       struct SutseSeriesHandle **out);

/**
 * # Safety
 * `series` must be null or a live handle.
 */
size_t sutse_series_len(const struct SutseSeriesHandle *series);

/**
 * # Safety
 * `series` must be null or a live handle.
 */
size_t sutse_series_dim(const struct SutseSeriesHandle *series);

/**
 * Copy the panel out row-major, NaN where missing.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum SutseStatus sutse_series_copy(const struct SutseSeriesHandle *series, double *buf, size_t len);

/**
 * # Safety
 * `series` must be null or a handle not yet freed.
 */
void sutse_series_free(struct SutseSeriesHandle *series);

/**
 * Gaussian log-likelihood without the 2π constant.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum SutseStatus sutse_loglik(const struct SutseSpecHandle *spec,
                              const struct SutseSeriesHandle *series,
                              double *out);

/**
 * Run the multivariate filter over the whole series.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum SutseStatus sutse_filter_run(const struct SutseSpecHandle *spec,
                                  const struct SutseSeriesHandle *series,
                                  struct SutseFilterHandle **out);

/**
 * # Safety
 * `filter` must be a live handle and `out` valid.
 */
enum SutseStatus sutse_filter_loglik(const struct SutseFilterHandle *filter, double *out);

/**
 * One-step forecast of all d series for time n+1.
 *
 * # Safety
 * `buf` must hold `len == d` doubles.
 */
enum SutseStatus sutse_filter_one_step(const struct SutseFilterHandle *filter,
                                       double *buf,
                                       size_t len);

/**
 * Forecast series `target` at n+1 given the values of `observed_idx` at n+1.
 *
 * # Safety
 * `observed_idx` and `observed_vals` must hold `m` entries each.
 */
enum SutseStatus sutse_filter_same_step(const struct SutseFilterHandle *filter,
                                        const size_t *observed_idx,
                                        const double *observed_vals,
                                        size_t m,
                                        size_t target,
                                        double *out);

/**
 * # Safety
 * `filter` must be null or a handle not yet freed.
 */
void sutse_filter_free(struct SutseFilterHandle *filter);

/**
 * Per-series filters and the sample forecast-error covariance from row `n0` (1-based).
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum SutseStatus sutse_fast_run(const struct SutseSpecHandle *spec,
                                const struct SutseSeriesHandle *series,
                                size_t n0,
                                struct SutseFastHandle **out);

/**
 * # Safety
 * `buf` must hold `len == d` doubles.
 */
enum SutseStatus sutse_fast_one_step(const struct SutseFastHandle *fast, double *buf, size_t len);

/**
 * Copy the d × d error covariance estimate out row-major.
 *
 * # Safety
 * `buf` must hold `len == d * d` doubles.
 */
enum SutseStatus sutse_fast_error_cov(const struct SutseFastHandle *fast, double *buf, size_t len);

/**
 * # Safety
 * `observed_idx` and `observed_vals` must hold `m` entries each.
 */
enum SutseStatus sutse_fast_same_step(const struct SutseFastHandle *fast,
                                      const size_t *observed_idx,
                                      const double *observed_vals,
                                      size_t m,
                                      size_t target,
                                      double *out);

/**
 * # Safety
 * `fast` must be null or a handle not yet freed.
 */
void sutse_fast_free(struct SutseFastHandle *fast);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUTSE_H */
