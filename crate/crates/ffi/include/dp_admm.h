#ifndef DP_ADMM_H
#define DP_ADMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum DpStatus {
  DP_STATUS_OK = 0,
  DP_STATUS_NULL_POINTER = 1,
  DP_STATUS_INVALID_ARGUMENT = 2,
  DP_STATUS_IO = 3,
  DP_STATUS_PARSE = 4,
  DP_STATUS_CONFIG = 5,
  DP_STATUS_SOLVER = 6,
  DP_STATUS_REGIME = 7,
  DP_STATUS_OUT_OF_RANGE = 8,
  DP_STATUS_BUFFER_TOO_SMALL = 9,
  DP_STATUS_PANIC = 10,
  DP_STATUS_OTHER = 11,
} DpStatus;

/**
 * Mechanism selector for [`dp_run`].
 */
typedef enum DpMechanism {
  DP_MECHANISM_NON_PRIVATE = 0,
  DP_MECHANISM_DUAL = 1,
  DP_MECHANISM_PRIMAL = 2,
} DpMechanism;

/**
 * Parsed experiment configuration.
 */
typedef struct DpConfig DpConfig;

/**
 * Recorded run of one mechanism.
 */
typedef struct DpTrace DpTrace;

/**
 * Inputs of the sample-size calculators. `has_c_b = 0` uses `c_r` for `c_b`.
 */
typedef struct DpBoundInputs {
  double norm_f0;
  double alpha_acc;
  double delta;
  double c_r;
  double rho;
  double eta;
  size_t n_p;
  size_t d;
  double c1;
  double beta;
  uint8_t has_c_b;
  double c_b;
} DpBoundInputs;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *dp_last_error(void);

/**
 * Library version as a static string.
 */
const char *dp_version(void);

/**
 * Parses a TOML configuration. Relative paths inside resolve against the
 * working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum DpStatus dp_config_parse(const char *text, struct DpConfig **out);

/**
 * Loads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DpStatus dp_config_load(const char *path, struct DpConfig **out);

/**
 * # Safety
 * `cfg` must come from `dp_config_parse`/`dp_config_load` or be null.
 */
void dp_config_free(struct DpConfig *cfg);

/**
 * Runs `mechanism` at constant privacy level `alpha` (ignored for the
 * non-private mechanism) with the given seed.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum DpStatus dp_run(const struct DpConfig *cfg,
                     enum DpMechanism mechanism,
                     double alpha,
                     uint64_t seed,
                     struct DpTrace **out);

/**
 * # Safety
 * `trace` must come from `dp_run` or be null.
 */
void dp_trace_free(struct DpTrace *trace);

/**
 * Number of completed rounds, node count and dimension.
 *
 * # Safety
 * `trace` must be a live handle; out pointers must be writable.
 */
enum DpStatus dp_trace_shape(const struct DpTrace *trace,
                             size_t *rounds,
                             size_t *nodes,
                             size_t *dim);

/**
 * Consensus objective, max consensus residual and node-mean empirical loss
 * at round `t` (0 is the initial state).
 *
 * # Safety
 * `trace` must be a live handle; out pointers must be writable.
 */
enum DpStatus dp_trace_round(const struct DpTrace *trace,
                             size_t t,
                             double *objective,
                             double *residual,
                             double *mean_loss);

/**
 * Copies node `node`'s classifier at round `t` into `buf` of length `len`.
 *
 * # Safety
 * `trace` must be a live handle; `buf` must hold `len` doubles.
 */
enum DpStatus dp_trace_classifier(const struct DpTrace *trace,
                                  size_t t,
                                  size_t node,
                                  double *buf,
                                  size_t len);

/**
 * Writes the trace as CSV.
 *
 * # Safety
 * `trace` must be a live handle; `path` a NUL-terminated string.
 */
enum DpStatus dp_trace_write_csv(const struct DpTrace *trace, const char *path);

/**
 * Draws one noise vector with density proportional to `exp(−ζ‖ε‖)` from
 * the mechanism stream of (`seed`, `node`, `iteration`).
 *
 * # Safety
 * `buf` must hold `dim` doubles.
 */
enum DpStatus dp_sample_noise(size_t dim,
                              double zeta,
                              uint64_t seed,
                              uint64_t node,
                              uint64_t iteration,
                              double *buf);

/**
 * # Safety
 * `inputs` must be readable and `out` writable.
 */
enum DpStatus dp_bound_nonprivate(const struct DpBoundInputs *inputs, double *out);

/**
 * # Safety
 * `inputs` must be readable and `out` writable.
 */
enum DpStatus dp_bound_dvp(const struct DpBoundInputs *inputs, double alpha_min, double *out);

/**
 * # Safety
 * `inputs` must be readable and `out` writable.
 */
enum DpStatus dp_bound_pvp_intermediate(const struct DpBoundInputs *inputs,
                                        double alpha_min,
                                        double *out);

/**
 * # Safety
 * `inputs` must be readable and `out` writable.
 */
enum DpStatus dp_bound_pvp_full(const struct DpBoundInputs *inputs, double alpha_min, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DP_ADMM_H */
