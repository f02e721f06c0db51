#ifndef TRACELAM_H
#define TRACELAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_ARGUMENT = 1,
  TL_STATUS_INVALID_UTF8 = 2,
  TL_STATUS_PARSE_ERROR = 3,
  TL_STATUS_EVAL_ERROR = 4,
  TL_STATUS_INVALID_CONFIG = 5,
  TL_STATUS_INIT_FAILURE = 6,
  TL_STATUS_RETRY_EXHAUSTED = 7,
  TL_STATUS_PANIC = 8,
} TlStatus;

/**
 * Outcome of a run against a fixed trace.
 */
typedef enum TlRunStatus {
  TL_RUN_STATUS_COMPLETED = 0,
  TL_RUN_STATUS_TRACE_MISMATCH = 1,
  TL_RUN_STATUS_FUEL_EXHAUSTED = 2,
} TlRunStatus;

/**
 * A closed core term.
 */
typedef struct TlModel TlModel;

/**
 * An unbounded stream of posterior samples.
 */
typedef struct TlSampler TlSampler;

typedef struct TlRunResult {
  enum TlRunStatus status;
  /**
   * The run ended in a value (as opposed to `fail`).
   */
  bool is_value;
  /**
   * The value if it is a constant, NaN otherwise.
   */
  double value;
  double log_weight;
  uint64_t steps;
} TlRunResult;

/**
 * A draw from a sampler.
 */
typedef struct TlSample {
  /**
   * The value if it is a constant, NaN for λ-values.
   */
  double value;
  double log_weight;
  bool accepted;
  /**
   * Number of random choices in the sample's trace.
   */
  size_t trace_len;
} TlSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *tl_last_error(void);

/**
 * Compiles a Church `(query ...)` program.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TlStatus tl_model_from_church(const char *source, struct TlModel **out);

/**
 * Parses a core term in the canonical text format.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TlStatus tl_model_from_core(const char *source, struct TlModel **out);

/**
 * # Safety
 * `model` must come from `tl_model_from_*` and not be used afterwards.
 */
void tl_model_free(struct TlModel *model);

/**
 * The model's core term as text; release with `tl_string_free`. NULL if
 * `model` is NULL.
 *
 * # Safety
 * `model` must be a live model handle or NULL.
 */
char *tl_model_core_text(const struct TlModel *model);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void tl_string_free(char *s);

/**
 * Runs the model on `trace[0..len]` with the small-step machine.
 * A `fuel` of 0 selects the default budget.
 *
 * # Safety
 * `model` must be live, `trace` must point to `len` readable doubles (or be
 * NULL with `len == 0`), and `out` must be valid.
 */
enum TlStatus tl_model_eval(const struct TlModel *model,
                            const double *trace,
                            size_t len,
                            uint64_t fuel,
                            struct TlRunResult *out);

/**
 * Starts a Metropolis-Hastings chain. The model may be freed afterwards.
 * A `fuel` of 0 selects the default budget.
 *
 * # Safety
 * `model` must be live and `out` valid.
 */
enum TlStatus tl_mh_new(const struct TlModel *model,
                        double sigma,
                        size_t burn_in,
                        size_t thin,
                        uint64_t seed,
                        uint64_t fuel,
                        struct TlSampler **out);

/**
 * Starts a rejection sampler that gives up after `max_retries` consecutive
 * rejected runs. The model may be freed afterwards.
 *
 * # Safety
 * `model` must be live and `out` valid.
 */
enum TlStatus tl_rejection_new(const struct TlModel *model,
                               uint64_t seed,
                               uint64_t max_retries,
                               struct TlSampler **out);

/**
 * Draws the next sample.
 *
 * # Safety
 * `sampler` must be live and `out` valid.
 */
enum TlStatus tl_sampler_next(struct TlSampler *sampler, struct TlSample *out);

/**
 * # Safety
 * `sampler` must come from `tl_mh_new`/`tl_rejection_new` and not be used afterwards.
 */
void tl_sampler_free(struct TlSampler *sampler);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRACELAM_H */
