#ifndef LANGPREF_H
#define LANGPREF_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LpPosition {
  LP_POSITION_FIRST = 0,
  LP_POSITION_MIDDLE = 1,
  LP_POSITION_LAST = 2,
} LpPosition;

typedef enum LpStatus {
  LP_STATUS_OK = 0,
  LP_STATUS_NULL_POINTER = 1,
  LP_STATUS_INVALID_UTF8 = 2,
  LP_STATUS_IO = 3,
  LP_STATUS_PARSE = 4,
  LP_STATUS_CONSTRAINT = 5,
  LP_STATUS_DOMAIN = 6,
  LP_STATUS_CONFIG = 7,
  LP_STATUS_OUT_OF_RANGE = 8,
  LP_STATUS_INTERNAL = 9,
} LpStatus;

/**
 * Opaque handle over a loaded dataset.
 */
typedef struct LpDataset LpDataset;

/**
 * Opaque handle over a fitted linear surrogate.
 */
typedef struct LpSurrogate LpSurrogate;

/**
 * Result of a paired two-sided t-test with Bonferroni correction.
 * `stars` is 0 for not significant, else 1 to 3.
 */
typedef struct LpSignificance {
  double t_stat;
  double p_raw;
  double p_adjusted;
  uint32_t stars;
  bool degenerate;
} LpSignificance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lp_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void lp_string_free(char *s);

/**
 * Loads a line-delimited dataset. `format` is `eli5_webgpt` or `miracl`.
 *
 * # Safety
 * `path` and `format` must be nul-terminated strings; `out` must be writable.
 */
enum LpStatus lp_dataset_load(const char *path, const char *format, struct LpDataset **out);

/**
 * Number of queries in the dataset; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t lp_dataset_len(const struct LpDataset *dataset);

/**
 * Renders the all-English citation probe prompt for `statement` of query
 * `index`, cited to `cited_id`.
 *
 * # Safety
 * `dataset` must be a live handle, `statement` a nul-terminated string and
 * `out` writable. Free the result with [`lp_string_free`].
 */
enum LpStatus lp_dataset_render_prompt(const struct LpDataset *dataset,
                                       size_t index,
                                       const char *statement,
                                       uint8_t cited_id,
                                       char **out);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void lp_dataset_free(struct LpDataset *dataset);

/**
 * Splits a report into single-citation statements; writes JSON
 * `{"statements": [...], "dropped": [...]}` to `out_json`.
 *
 * # Safety
 * `report` must be a nul-terminated string and `out_json` writable.
 */
enum LpStatus lp_segment_report(const char *report, size_t k_docs, char **out_json);

/**
 * `correct_target / n - correct_en / n`.
 *
 * # Safety
 * `out` must be writable.
 */
enum LpStatus lp_accuracy_gap(size_t correct_target, size_t correct_en, size_t n, double *out);

/**
 * Paired two-sided t-test of `target - en` over `n` pairs, Bonferroni
 * corrected for `family_size` comparisons.
 *
 * # Safety
 * `en` and `target` must point to `n` doubles; `out` must be writable.
 */
enum LpStatus lp_paired_t_test(const double *en,
                               const double *target,
                               size_t n,
                               size_t family_size,
                               struct LpSignificance *out);

/**
 * Smallest per-group n for a two-sided two-sample t-test.
 *
 * # Safety
 * `out` must be writable.
 */
enum LpStatus lp_required_sample_size(double effect, double alpha, double power, size_t *out);

/**
 * Position of the document at 1-based `ordinal` among `k_docs`.
 *
 * # Safety
 * `out` must be writable.
 */
enum LpStatus lp_label_position(size_t k_docs, size_t ordinal, enum LpPosition *out);

/**
 * Fits the linear surrogate. `masks` is row-major `n_samples x n_sentences`
 * with nonzero bytes meaning "sentence kept".
 *
 * # Safety
 * `masks` must hold `n_samples * n_sentences` bytes, `targets` `n_samples`
 * doubles, and `out` must be writable.
 */
enum LpStatus lp_surrogate_fit(const uint8_t *masks,
                               const double *targets,
                               size_t n_samples,
                               size_t n_sentences,
                               double lambda,
                               struct LpSurrogate **out);

/**
 * # Safety
 * `surrogate` must be null or a live handle.
 */
size_t lp_surrogate_weight_count(const struct LpSurrogate *surrogate);

/**
 * Copies up to `len` weights into `out`.
 *
 * # Safety
 * `surrogate` must be a live handle and `out` must hold `len` doubles.
 */
enum LpStatus lp_surrogate_weights(const struct LpSurrogate *surrogate, double *out, size_t len);

/**
 * Bias, residual and rank flag of a fitted surrogate.
 *
 * # Safety
 * `surrogate` must be a live handle; out-pointers may be null to skip them.
 */
enum LpStatus lp_surrogate_summary(const struct LpSurrogate *surrogate,
                                   double *bias,
                                   double *fit_residual,
                                   bool *rank_deficient);

/**
 * # Safety
 * `surrogate` must be null or a handle not yet freed.
 */
void lp_surrogate_free(struct LpSurrogate *surrogate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANGPREF_H */
