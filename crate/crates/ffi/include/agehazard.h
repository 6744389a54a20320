#ifndef AGEHAZARD_H
#define AGEHAZARD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AhStatus {
  AH_STATUS_OK = 0,
  AH_STATUS_NULL_POINTER = 1,
  AH_STATUS_INVALID_ARGUMENT = 2,
  AH_STATUS_PARSE = 3,
  AH_STATUS_VALIDATION = 4,
  AH_STATUS_NUMERICAL = 5,
  AH_STATUS_IO = 6,
  AH_STATUS_CONFIG = 7,
  AH_STATUS_PANIC = 99,
} AhStatus;

/*
 Posterior summaries of a completed analysis run.
 */
typedef struct AhAnalysis AhAnalysis;

/*
 Spline basis for one anisotropy value.
 */
typedef struct AhBasis AhBasis;

/*
 Aggregated at-risk and event counts.
 */
typedef struct AhPanel AhPanel;

/*
 Time x age grid layout; mirrors the library's grid settings.
 */
typedef struct AhGrid {
  uint32_t time_bin_days;
  uint32_t age_bin_years;
  uint32_t age_min_years;
  uint32_t age_max_years;
} AhGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *ah_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ah_version(void);

/*
 Prior variance of the mixed second difference on a grid with spacings
 `d_t` and `d_a`.

 # Safety
 `out` must be null or point to writable memory for one double.
 */
enum AhStatus ah_roughness_variance(double rho, double d_t, double d_a, double *out);

/*
 Gamma rate giving `P(|D| > bound) = alpha` for a difference of variance `v`.

 # Safety
 `out` must be null or point to writable memory for one double.
 */
enum AhStatus ah_elicit_scale(double v, double bound, double alpha, double shape, double *out);

/*
 One-sided Fisher exact p-value for `x1` of `n1` against `x2` of `n2`.

 # Safety
 `out` must be null or point to writable memory for one double.
 */
enum AhStatus ah_fisher_exact_one_sided(uint64_t x1,
                                        uint64_t n1,
                                        uint64_t x2,
                                        uint64_t n2,
                                        double *out);

/*
 Parses flow records and aggregates them over `[window_start, window_end)`.
 Dates are `M/D/YYYY` or ISO. On success `*out` owns a new panel.

 # Safety
 String arguments must be null or NUL-terminated; `grid` must be null or
 valid; `out` must be null or writable.
 */
enum AhStatus ah_panel_from_flow_text(const char *flow_text,
                                      const char *window_start,
                                      const char *window_end,
                                      const struct AhGrid *grid,
                                      struct AhPanel **out);

/*
 Number of time bins and age bins.

 # Safety
 `panel` must be null or a live panel; `p` and `r` null or writable.
 */
enum AhStatus ah_panel_dims(const struct AhPanel *panel, size_t *p, size_t *r);

/*
 Copies the row-major at-risk and event counts; both buffers hold `len = p * r`.

 # Safety
 `panel` must be null or live; `n` and `x` null or writable for `len` values.
 */
enum AhStatus ah_panel_counts(const struct AhPanel *panel, uint32_t *n, uint32_t *x, size_t len);

/*
 Binomial log-likelihood of the logits `beta` (row-major, `len = p * r`).

 # Safety
 `panel` must be null or live; `beta` null or readable for `len` values;
 `out` null or writable.
 */
enum AhStatus ah_log_likelihood(const struct AhPanel *panel,
                                const double *beta,
                                size_t len,
                                double *out);

/*
 Releases a panel; null is ignored.

 # Safety
 `panel` must be null or a panel not yet freed.
 */
void ah_panel_free(struct AhPanel *panel);

/*
 Truncated spline basis on the panel's grid for anisotropy `rho`.

 # Safety
 `panel` must be null or live; `out` null or writable.
 */
enum AhStatus ah_basis_build(const struct AhPanel *panel,
                             double rho,
                             double trace_fraction,
                             struct AhBasis **out);

/*
 Cells and retained columns of the basis.

 # Safety
 `basis` must be null or live; `cells` and `q` null or writable.
 */
enum AhStatus ah_basis_dims(const struct AhBasis *basis, size_t *cells, size_t *q);

/*
 Share of the trace of `P K P` kept by the truncation.

 # Safety
 `basis` must be null or live; `out` null or writable.
 */
enum AhStatus ah_basis_captured_fraction(const struct AhBasis *basis, double *out);

/*
 Copies the basis row-major (`cells` rows, `q` columns) into `out`.

 # Safety
 `basis` must be null or live; `out` null or writable for `len` values.
 */
enum AhStatus ah_basis_matrix(const struct AhBasis *basis, double *out, size_t len);

/*
 Retained eigenvalues, descending; `len` must equal `q`.

 # Safety
 `basis` must be null or live; `out` null or writable for `len` values.
 */
enum AhStatus ah_basis_eigenvalues(const struct AhBasis *basis, double *out, size_t len);

/*
 Releases a basis; null is ignored.

 # Safety
 `basis` must be null or a basis not yet freed.
 */
void ah_basis_free(struct AhBasis *basis);

/*
 Runs a full analysis from a JSON configuration. Relative paths in the
 configuration resolve against `base_dir` (the current directory if null).
 Output files are written as configured.

 # Safety
 `config_json` and `base_dir` must be null or NUL-terminated; `out` null or writable.
 */
enum AhStatus ah_analysis_run(const char *config_json,
                              const char *base_dir,
                              struct AhAnalysis **out);

/*
 Surface dimensions: time bins and age bins.

 # Safety
 `analysis` must be null or live; `p` and `r` null or writable.
 */
enum AhStatus ah_analysis_dims(const struct AhAnalysis *analysis, size_t *p, size_t *r);

/*
 Copies the row-major posterior median log-odds ratios and `P(OR > 1)`;
 cells without a reference group hold NaN.

 # Safety
 `analysis` must be null or live; buffers null or writable for `len` values.
 */
enum AhStatus ah_analysis_surface(const struct AhAnalysis *analysis,
                                  double *median_lor,
                                  double *prob_or_gt_1,
                                  size_t len);

/*
 Number of anisotropy values in the posterior table.

 # Safety
 `analysis` must be null or live; `out` null or writable.
 */
enum AhStatus ah_analysis_rho_count(const struct AhAnalysis *analysis, size_t *out);

/*
 One row of the anisotropy table: grid value, posterior frequency and
 marginal-likelihood ratio.

 # Safety
 `analysis` must be null or live; outputs null or writable.
 */
enum AhStatus ah_analysis_rho_row(const struct AhAnalysis *analysis,
                                  size_t index,
                                  double *rho,
                                  double *posterior,
                                  double *marginal_likelihood);

/*
 Releases an analysis; null is ignored.

 # Safety
 `analysis` must be null or an analysis not yet freed.
 */
void ah_analysis_free(struct AhAnalysis *analysis);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGEHAZARD_H */
