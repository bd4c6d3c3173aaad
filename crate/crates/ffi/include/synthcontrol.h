#ifndef SYNTHCONTROL_H
#define SYNTHCONTROL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad argument or configuration.
   */
  SC_STATUS_USAGE = 3,
  /**
   * Invalid or inconsistent input data.
   */
  SC_STATUS_DATA = 4,
  /**
   * The optimizer could not produce a fit.
   */
  SC_STATUS_OPTIMIZATION = 5,
  SC_STATUS_BUFFER_TOO_SMALL = 6,
  SC_STATUS_OUT_OF_RANGE = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  SC_STATUS_INTERNAL = 8,
} ScStatus;

/**
 * Fitted synthetic control.
 */
typedef struct ScFit ScFit;

/**
 * Weekly panel.
 */
typedef struct ScPanel ScPanel;

/**
 * Panel plus study design and optimizer settings.
 */
typedef struct ScStudy ScStudy;

/**
 * In-space placebo result for one cutoff.
 */
typedef struct ScPlaceboSummary {
  size_t treated_rank;
  size_t n_ranked;
  size_t n_discarded;
  size_t n_failed;
  double p_value;
} ScPlaceboSummary;

/**
 * Headline numbers of a fit.
 */
typedef struct ScFitSummary {
  double average_post_gap;
  double pre_mspe;
  double post_mspe;
  /**
   * Post/pre MSPE ratio; machine epsilon stands in for a zero pre-MSPE.
   */
  double mspe_ratio;
  size_t n_donors;
  size_t n_predictors;
  size_t n_weeks;
  size_t treatment_week;
  /**
   * Nonzero when the donor weights are not unique.
   */
  bool degenerate;
} ScFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/**
 * Copies the calling thread's last error message (empty after a success).
 *
 * # Safety
 * `buf` must be writable for `capacity` bytes; `needed` may be null.
 */
enum ScStatus sc_last_error_message(char *buf, size_t capacity, size_t *needed);

/**
 * Loads a long `unit,date,variable,value` CSV and buckets it into weeks
 * starting on `week_anchor` (e.g. `"sun"`), averaging within a week.
 *
 * # Safety
 * `path` and `week_anchor` must be NUL-terminated; `out` must be writable.
 */
enum ScStatus sc_panel_load_csv(const char *path, const char *week_anchor, struct ScPanel **out);

/**
 * # Safety
 * `panel` must come from [`sc_panel_load_csv`] and not be used afterwards.
 */
void sc_panel_free(struct ScPanel *panel);

/**
 * # Safety
 * `panel` must be a live handle; the out pointers must be writable.
 */
enum ScStatus sc_panel_shape(const struct ScPanel *panel,
                             size_t *n_units,
                             size_t *n_weeks,
                             size_t *n_variables);

/**
 * Name of unit `index`.
 *
 * # Safety
 * `panel` must be a live handle; `buf` writable for `capacity` bytes.
 */
enum ScStatus sc_panel_unit_name(const struct ScPanel *panel,
                                 size_t index,
                                 char *buf,
                                 size_t capacity,
                                 size_t *needed);

/**
 * Study with every other unit as donor, the pre window from the first week
 * to the week before `treatment_week` and the post window to the last week.
 * The panel is copied, so it may be freed afterwards.
 *
 * # Safety
 * `panel` must be a live handle; `predictors` must point to `n_predictors`
 * NUL-terminated strings; `out` must be writable.
 */
enum ScStatus sc_study_new(const struct ScPanel *panel,
                           const char *treated,
                           const char *outcome,
                           const char *const *predictors,
                           size_t n_predictors,
                           size_t treatment_week,
                           struct ScStudy **out);

/**
 * Study from a TOML config file, prepared exactly as the CLI does.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` must be writable.
 */
enum ScStatus sc_study_from_config(const char *config_path, struct ScStudy **out);

/**
 * # Safety
 * `study` must come from a `sc_study_*` constructor and not be used
 * afterwards.
 */
void sc_study_free(struct ScStudy *study);

/**
 * Optimizer settings: `starts` random predictor-weight starts, `refine`
 * polished candidates and the seed.
 *
 * # Safety
 * `study` must be a live handle.
 */
enum ScStatus sc_study_set_search(struct ScStudy *study,
                                  size_t starts,
                                  size_t refine,
                                  uint64_t seed);

/**
 * # Safety
 * `study` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_study_fit(const struct ScStudy *study, struct ScFit **out);

/**
 * In-space placebo. A `cutoff_multiple` of zero or less means no cutoff.
 *
 * # Safety
 * `study` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_study_placebo_space(const struct ScStudy *study,
                                     double cutoff_multiple,
                                     struct ScPlaceboSummary *out);

/**
 * # Safety
 * `fit` must come from [`sc_study_fit`] and not be used afterwards.
 */
void sc_fit_free(struct ScFit *fit);

/**
 * # Safety
 * `fit` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_fit_summary(const struct ScFit *fit, struct ScFitSummary *out);

/**
 * Donor weights in donor order (see [`sc_fit_donor_name`]).
 *
 * # Safety
 * `fit` must be a live handle; `buf` writable for `capacity` doubles.
 */
enum ScStatus sc_fit_donor_weights(const struct ScFit *fit,
                                   double *buf,
                                   size_t capacity,
                                   size_t *needed);

/**
 * # Safety
 * `fit` must be a live handle; `buf` writable for `capacity` bytes.
 */
enum ScStatus sc_fit_donor_name(const struct ScFit *fit,
                                size_t index,
                                char *buf,
                                size_t capacity,
                                size_t *needed);

/**
 * Predictor weights in predictor order.
 *
 * # Safety
 * `fit` must be a live handle; `buf` writable for `capacity` doubles.
 */
enum ScStatus sc_fit_predictor_weights(const struct ScFit *fit,
                                       double *buf,
                                       size_t capacity,
                                       size_t *needed);

/**
 * Treated minus synthetic outcome for every week of the panel.
 *
 * # Safety
 * `fit` must be a live handle; `buf` writable for `capacity` doubles.
 */
enum ScStatus sc_fit_gap(const struct ScFit *fit, double *buf, size_t capacity, size_t *needed);

/**
 * Synthetic outcome for every week of the panel.
 *
 * # Safety
 * `fit` must be a live handle; `buf` writable for `capacity` doubles.
 */
enum ScStatus sc_fit_synthetic(const struct ScFit *fit,
                               double *buf,
                               size_t capacity,
                               size_t *needed);

/**
 * Full fit serialized as JSON.
 *
 * # Safety
 * `fit` must be a live handle; `buf` writable for `capacity` bytes.
 */
enum ScStatus sc_fit_to_json(const struct ScFit *fit, char *buf, size_t capacity, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNTHCONTROL_H */
