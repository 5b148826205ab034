#ifndef FORSIM_H
#define FORSIM_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum ForsimStatus {
  ForsimStatus_Ok = 0,
  ForsimStatus_NullPointer = -1,
  ForsimStatus_InvalidArgument = -2,
  ForsimStatus_ParseError = -3,
  ForsimStatus_ValidationError = -4,
  ForsimStatus_RuntimeError = -5,
} ForsimStatus;

/**
 * Opaque configuration handle.
 */
typedef struct ForsimConfig ForsimConfig;

/**
 * Opaque rollout result: the branch set of one forward simulation.
 */
typedef struct ForsimRollout ForsimRollout;

/**
 * Opaque scenario handle.
 */
typedef struct ForsimScenario ForsimScenario;

/**
 * Metric suite row with C layout; infinity marks "no conflict".
 */
typedef struct ForsimMetricReport {
  double s_sw;
  double s_wd;
  double a_sw;
  double cpk;
  double rp;
  double ttc_2d;
  double act;
  double orr;
  double uc;
} ForsimMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *forsim_last_error(void);

/**
 * Library version string (static storage).
 */
const char *forsim_version(void);

/**
 * Load and validate a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ForsimStatus forsim_scenario_load(const char *path, struct ForsimScenario **out);

/**
 * # Safety
 * `scenario` must come from [`forsim_scenario_load`] and not be freed twice.
 */
void forsim_scenario_free(struct ForsimScenario *scenario);

/**
 * Default simulation configuration.
 */
struct ForsimConfig *forsim_config_default(void);

/**
 * Configuration from a JSON document (same schema as `--config`).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ForsimStatus forsim_config_from_json(const char *json, struct ForsimConfig **out);

/**
 * # Safety
 * `config` must come from a `forsim_config_*` constructor.
 */
void forsim_config_free(struct ForsimConfig *config);

/**
 * Forward-simulate all candidate branches from the scenario's initial
 * state. `center_paradigm`: 0 max-likelihood, 1 mode-consistent,
 * 2 trajectory-aligned; `others_paradigm`: 0 constant-action,
 * 1 single-prediction, 2 stepwise-prediction.
 *
 * # Safety
 * `scenario` and `config` must be live handles; `out` must be valid.
 */
enum ForsimStatus forsim_rollout_run(const struct ForsimScenario *scenario,
                                     const struct ForsimConfig *config,
                                     int center_paradigm,
                                     int others_paradigm,
                                     uint64_t seed,
                                     struct ForsimRollout **out);

/**
 * # Safety
 * `rollout` must come from [`forsim_rollout_run`].
 */
void forsim_rollout_free(struct ForsimRollout *rollout);

/**
 * Number of branches (the candidate group size G).
 *
 * # Safety
 * `rollout` must be a live handle.
 */
uintptr_t forsim_rollout_branch_count(const struct ForsimRollout *rollout);

/**
 * Number of recorded states in one branch (horizon + 2 when it completed).
 *
 * # Safety
 * `rollout` must be a live handle.
 */
uintptr_t forsim_rollout_branch_len(const struct ForsimRollout *rollout, uintptr_t branch);

/**
 * Copy the center-agent states of one branch into `buffer` as rows of
 * `[x, y, cos_h, sin_h, vx, vy]`. `capacity` counts f64 slots.
 *
 * # Safety
 * `buffer` must point to at least `capacity` writable f64 values.
 */
enum ForsimStatus forsim_rollout_center_states(const struct ForsimRollout *rollout,
                                               uintptr_t branch,
                                               double *buffer,
                                               uintptr_t capacity);

/**
 * Discounted return of one branch under the rollout's reward config.
 *
 * # Safety
 * `rollout` must be a live handle and `out` a valid pointer.
 */
enum ForsimStatus forsim_rollout_branch_return(const struct ForsimRollout *rollout,
                                               uintptr_t branch,
                                               double *out);

/**
 * Mean pairwise distance between branch terminal positions.
 *
 * # Safety
 * `rollout` must be a live handle and `out` a valid pointer.
 */
enum ForsimStatus forsim_rollout_dispersion(const struct ForsimRollout *rollout, double *out);

/**
 * Metric suite over one branch episode.
 *
 * # Safety
 * `rollout` must be a live handle and `out` a valid pointer.
 */
enum ForsimStatus forsim_rollout_branch_metrics(const struct ForsimRollout *rollout,
                                                uintptr_t branch,
                                                struct ForsimMetricReport *out);

/**
 * Run closed-loop training on one scenario and write a checkpoint JSON.
 * Paradigm tags follow [`forsim_rollout_run`].
 *
 * # Safety
 * String arguments must be NUL-terminated; handles must be live.
 */
enum ForsimStatus forsim_train_run(const struct ForsimScenario *scenario,
                                   const struct ForsimConfig *config,
                                   int center_paradigm,
                                   int others_paradigm,
                                   uintptr_t iterations,
                                   uint64_t seed,
                                   const char *checkpoint_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORSIM_H */
