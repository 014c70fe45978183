#ifndef MVSDE_H
#define MVSDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MvsdeStatus {
  MVSDE_STATUS_OK = 0,
  MVSDE_STATUS_NULL_POINTER = 1,
  MVSDE_STATUS_INVALID_ARGUMENT = 2,
  MVSDE_STATUS_DIMENSION_MISMATCH = 3,
  MVSDE_STATUS_CONFIG = 4,
  MVSDE_STATUS_STEP_TOO_LARGE = 5,
  MVSDE_STATUS_RESOURCE_BOUND = 6,
  MVSDE_STATUS_IO = 7,
  MVSDE_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * The experiment ran and its outputs were written, but its verdict failed.
   */
  MVSDE_STATUS_VERDICT_FAILED = 9,
  MVSDE_STATUS_PANIC = 10,
} MvsdeStatus;

/**
 * Particle ensemble handle.
 */
typedef struct MvsdeEnsemble MvsdeEnsemble;

/**
 * Coefficient model handle.
 */
typedef struct MvsdeModel MvsdeModel;

/**
 * Brownian increment tableau handle.
 */
typedef struct MvsdeTableau MvsdeTableau;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *mvsde_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mvsde_version(void);

/**
 * Creates a model of `family` (for example `"cubic-mean-field"`) with state
 * dimension `d`, noise dimension `l` and default parameters.
 *
 * # Safety
 * `family` must be a NUL-terminated string; `out` must be writable.
 */
enum MvsdeStatus mvsde_model_new(const char *family, size_t d, size_t l, struct MvsdeModel **out);

/**
 * Overrides one family parameter by name.
 *
 * # Safety
 * `model` must come from [`mvsde_model_new`]; `name` must be NUL-terminated.
 */
enum MvsdeStatus mvsde_model_set_param(struct MvsdeModel *model, const char *name, double value);

/**
 * # Safety
 * `model` must come from [`mvsde_model_new`] or be null.
 */
void mvsde_model_free(struct MvsdeModel *model);

/**
 * Evaluates the drift at `x` (length `d`) against the empirical measure of
 * `n_atoms` atoms (`atoms` has `n_atoms * d` values). With `taming_n == 0`
 * the untamed drift is returned; otherwise the drift tamed at level
 * `taming_n` with `taming` (`"finite"`, `"ergodic"`, ...).
 *
 * # Safety
 * Buffers must hold the stated number of values; `out` holds `out_len`.
 */
enum MvsdeStatus mvsde_model_drift(const struct MvsdeModel *model,
                                   double t,
                                   const double *x,
                                   const double *atoms,
                                   size_t n_atoms,
                                   uint64_t taming_n,
                                   const char *taming,
                                   double *out,
                                   size_t out_len);

/**
 * Creates the Brownian tableau for `particles` particles with `l` noise
 * components on `[0, horizon]` at `n_max` steps per unit time.
 *
 * # Safety
 * `out` must be writable.
 */
enum MvsdeStatus mvsde_tableau_new(uint64_t seed,
                                   size_t particles,
                                   size_t l,
                                   double horizon,
                                   uint64_t n_max,
                                   struct MvsdeTableau **out);

/**
 * Writes the `l` increments of `particle` over coarse step `step` at
 * `level` steps per unit time (`level` must divide `n_max`).
 *
 * # Safety
 * `tableau` must be live; `out` holds `out_len` values.
 */
enum MvsdeStatus mvsde_tableau_increments(const struct MvsdeTableau *tableau,
                                          uint64_t level,
                                          size_t particle,
                                          uint64_t step,
                                          double *out,
                                          size_t out_len);

/**
 * # Safety
 * `tableau` must come from [`mvsde_tableau_new`] or be null.
 */
void mvsde_tableau_free(struct MvsdeTableau *tableau);

/**
 * Creates an ensemble of `n` particles in dimension `d` from `states`
 * (`n * d` values, row-major).
 *
 * # Safety
 * `states` holds `n * d` values; `out` must be writable.
 */
enum MvsdeStatus mvsde_ensemble_new(size_t n,
                                    size_t d,
                                    const double *states,
                                    struct MvsdeEnsemble **out);

/**
 * Number of particles, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be live or null.
 */
size_t mvsde_ensemble_len(const struct MvsdeEnsemble *ensemble);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be live or null.
 */
size_t mvsde_ensemble_dim(const struct MvsdeEnsemble *ensemble);

/**
 * Copies the `N * d` states into `out`.
 *
 * # Safety
 * `ensemble` must be live; `out` holds `out_len` values.
 */
enum MvsdeStatus mvsde_ensemble_states(const struct MvsdeEnsemble *ensemble,
                                       double *out,
                                       size_t out_len);

/**
 * # Safety
 * `ensemble` must come from this library or be null.
 */
void mvsde_ensemble_free(struct MvsdeEnsemble *ensemble);

/**
 * Runs the tamed Euler scheme from `initial` over `[0, horizon]` at `n`
 * steps per unit time, driven by `tableau`. `taming` names the variant
 * (null means `"finite"`). On success `*out` receives the final ensemble and
 * `*diverged_at` the divergence step, or -1.
 *
 * # Safety
 * Handles must be live; `out` and `diverged_at` must be writable.
 */
enum MvsdeStatus mvsde_simulate(const struct MvsdeModel *model,
                                const struct MvsdeTableau *tableau,
                                const struct MvsdeEnsemble *initial,
                                double horizon,
                                uint64_t n,
                                const char *taming,
                                struct MvsdeEnsemble **out,
                                int64_t *diverged_at);

/**
 * Empirical W2 distance between two ensembles of equal size. `method` is
 * `"sorted_1d"`, `"exact_assignment"` or `"sliced"` (null picks
 * `"exact_assignment"`).
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum MvsdeStatus mvsde_w2(const struct MvsdeEnsemble *a,
                          const struct MvsdeEnsemble *b,
                          const char *method,
                          double *out);

/**
 * Parses a TOML config, runs its experiment and writes the outputs.
 * `out_dir` (nullable) overrides the configured output directory. Returns
 * [`MvsdeStatus::VerdictFailed`] when the run completed but failed its
 * checks.
 *
 * # Safety
 * `config` must be NUL-terminated; `out_dir` NUL-terminated or null.
 */
enum MvsdeStatus mvsde_run_config(const char *config, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVSDE_H */
