#ifndef SCREENLAB_H
#define SCREENLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScreenlabStatus {
  SCREENLAB_STATUS_OK = 0,
  SCREENLAB_STATUS_NULL_POINTER = 1,
  SCREENLAB_STATUS_INVALID_ARGUMENT = 2,
  SCREENLAB_STATUS_REFUSED = 3,
  SCREENLAB_STATUS_SIZE_LIMIT = 4,
  SCREENLAB_STATUS_NON_CONVERGENCE = 5,
  SCREENLAB_STATUS_INAPPLICABLE = 6,
  SCREENLAB_STATUS_INTERNAL = 7,
  SCREENLAB_STATUS_PANIC = 8,
} ScreenlabStatus;

typedef enum ScreenlabDistFn {
  SCREENLAB_DIST_FN_PDF = 0,
  SCREENLAB_DIST_FN_CDF = 1,
  /**
   * `∫_lo^x F`
   */
  SCREENLAB_DIST_FN_CDF_INTEGRAL = 2,
  /**
   * `x + F(x)/f(x)`
   */
  SCREENLAB_DIST_FN_VIRTUAL_COST = 3,
  SCREENLAB_DIST_FN_QUANTILE = 4,
} ScreenlabDistFn;

typedef enum ScreenlabRegime {
  SCREENLAB_REGIME_CONSECUTIVE_MENU = 0,
  SCREENLAB_REGIME_ALWAYS_WORKING = 1,
} ScreenlabRegime;

/**
 * Opaque cost distribution.
 */
typedef struct ScreenlabDist ScreenlabDist;

/**
 * Opaque solve result.
 */
typedef struct ScreenlabReport ScreenlabReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *screenlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *screenlab_version(void);

/**
 * Uniform costs on `[lo, hi]`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum ScreenlabStatus screenlab_dist_uniform(double lo, double hi, struct ScreenlabDist **out);

/**
 * Normal(mu, sigma) truncated to `[lo, hi]`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum ScreenlabStatus screenlab_dist_truncnorm(double mu,
                                              double sigma,
                                              double lo,
                                              double hi,
                                              struct ScreenlabDist **out);

/**
 * Beta(a, b) rescaled to `[lo, hi]`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum ScreenlabStatus screenlab_dist_scaled_beta(double a,
                                                double b,
                                                double lo,
                                                double hi,
                                                struct ScreenlabDist **out);

/**
 * # Safety
 * `d` must be NULL or a pointer from a `screenlab_dist_*` constructor that
 * has not been freed.
 */
void screenlab_dist_free(struct ScreenlabDist *d);

/**
 * Evaluate a distribution function at `x`.
 *
 * # Safety
 * `d` must be a live distribution handle; `which` a declared
 * `ScreenlabDistFn` value; `out` valid for a write.
 */
enum ScreenlabStatus screenlab_dist_eval(const struct ScreenlabDist *d,
                                         enum ScreenlabDistFn which,
                                         double x,
                                         double *out);

/**
 * Mean cost.
 *
 * # Safety
 * `d` must be a live distribution handle; `out` valid for a write.
 */
enum ScreenlabStatus screenlab_dist_mean(const struct ScreenlabDist *d, double *out);

/**
 * Solve for the optimal mechanism with horizon `n` and value `alpha`.
 *
 * # Safety
 * `d` must be a live distribution handle; `out` valid for a pointer write.
 */
enum ScreenlabStatus screenlab_solve(const struct ScreenlabDist *d,
                                     size_t n,
                                     double alpha,
                                     struct ScreenlabReport **out);

/**
 * # Safety
 * `r` must be NULL or a report from `screenlab_solve` not yet freed.
 */
void screenlab_report_free(struct ScreenlabReport *r);

/**
 * Regime, optimal value and rent of a solved report.
 *
 * # Safety
 * `r` must be a live report handle; each out-pointer NULL or writable.
 */
enum ScreenlabStatus screenlab_report_summary(const struct ScreenlabReport *r,
                                              enum ScreenlabRegime *regime,
                                              double *v_star,
                                              double *u1_star);

/**
 * Copy the start cutoffs `c_1..c_N` into `buf` (capacity `len`). Under
 * always-working every cutoff is the top cost. `written` receives `N`.
 *
 * # Safety
 * `r` must be a live report handle; `buf` valid for `len` writes;
 * `written` valid for a write.
 */
enum ScreenlabStatus screenlab_report_cutoffs(const struct ScreenlabReport *r,
                                              double *buf,
                                              size_t len,
                                              size_t *written);

/**
 * Full report as a JSON string; release with `screenlab_string_free`.
 *
 * # Safety
 * `r` must be a live report handle; `out` valid for a pointer write.
 */
enum ScreenlabStatus screenlab_report_to_json(const struct ScreenlabReport *r, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library not yet freed.
 */
void screenlab_string_free(char *s);

/**
 * α at which the optimal regime switches to always-working.
 *
 * # Safety
 * `d` must be a live distribution handle; `out` valid for a write.
 */
enum ScreenlabStatus screenlab_alpha_hat(const struct ScreenlabDist *d, size_t n, double *out);

/**
 * Run a CLI command (`"solve"`, `"sweep"`, ...) on a TOML config file,
 * writing artifacts to `out_dir`. The CLI exit code goes to `exit_code`.
 *
 * # Safety
 * `command`, `config_path` and `out_dir` must be NUL-terminated strings;
 * `exit_code` valid for a write.
 */
enum ScreenlabStatus screenlab_run_command(const char *command,
                                           const char *config_path,
                                           const char *out_dir,
                                           int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCREENLAB_H */
