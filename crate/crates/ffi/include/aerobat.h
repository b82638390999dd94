#ifndef AEROBAT_H
#define AEROBAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define AEROBAT_OBS_DIM 28

#define AEROBAT_ACT_DIM 4

typedef enum AerobatStatus {
  AEROBAT_STATUS_OK = 0,
  AEROBAT_STATUS_NULL_POINTER = 1,
  AEROBAT_STATUS_INVALID_ARGUMENT = 2,
  AEROBAT_STATUS_CONFIG = 3,
  AEROBAT_STATUS_IO = 4,
  AEROBAT_STATUS_CHECKPOINT = 5,
  AEROBAT_STATUS_SIMULATION = 6,
  AEROBAT_STATUS_TRAINING = 7,
  AEROBAT_STATUS_EPISODE_DONE = 8,
  AEROBAT_STATUS_PANIC = 9,
} AerobatStatus;

typedef enum AerobatTermination {
  AEROBAT_TERMINATION_NONE = 0,
  AEROBAT_TERMINATION_STEP_CAP = 1,
  AEROBAT_TERMINATION_OUT_OF_BOUNDS = 2,
  AEROBAT_TERMINATION_TRACK_COMPLETE = 3,
} AerobatTermination;

/**
 * Opaque simulator instance.
 */
typedef struct AerobatEnv AerobatEnv;

/**
 * Opaque deterministic actor loaded from a checkpoint.
 */
typedef struct AerobatPolicy AerobatPolicy;

/**
 * Outcome of one policy-rate step.
 */
typedef struct AerobatStepResult {
  double reward;
  bool done;
  enum AerobatTermination termination;
  /**
   * Index of the gate the vehicle is currently flying towards.
   */
  size_t cursor;
  bool gate_passed;
  bool clamped;
} AerobatStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *aerobat_version(void);

/**
 * Message for the most recent failure on this thread, or NULL after a
 * successful call. Valid until the next call into the library.
 */
const char *aerobat_last_error(void);

/**
 * Creates a simulator. `config_path` may be NULL for built-in defaults;
 * `track_id` (may be NULL) overrides the configured track with a bundled
 * fixture.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated. `out` must be writable.
 */
enum AerobatStatus aerobat_env_new(const char *config_path,
                                   const char *track_id,
                                   uint64_t seed,
                                   struct AerobatEnv **out);

/**
 * # Safety
 * `env` must be NULL or a handle from [`aerobat_env_new`] not yet freed.
 */
void aerobat_env_free(struct AerobatEnv *env);

/**
 * Samples a start state and writes the first observation.
 *
 * # Safety
 * `env` must be a live handle; `obs_out` must hold `obs_len` doubles.
 */
enum AerobatStatus aerobat_env_reset(struct AerobatEnv *env, double *obs_out, size_t obs_len);

/**
 * Advances one policy step with a normalized action in [-1, 1]^4.
 *
 * # Safety
 * `env` must be a live handle, `action` must hold `act_len` doubles,
 * `obs_out` must hold `obs_len` doubles and `result` must be writable.
 */
enum AerobatStatus aerobat_env_step(struct AerobatEnv *env,
                                    const double *action,
                                    size_t act_len,
                                    double *obs_out,
                                    size_t obs_len,
                                    struct AerobatStepResult *result);

/**
 * Fixes the gate oscillation speed for subsequent resets. A negative or
 * NaN speed restores per-episode sampling from the configured range.
 *
 * # Safety
 * `env` must be a live handle.
 */
enum AerobatStatus aerobat_env_set_gate_speed(struct AerobatEnv *env, double speed);

/**
 * Writes the vehicle state as 13 doubles: position, quaternion (w, x, y, z),
 * world velocity, body rates.
 *
 * # Safety
 * `env` must be a live handle; `out` must hold `len` doubles.
 */
enum AerobatStatus aerobat_env_state(struct AerobatEnv *env, double *out, size_t len);

/**
 * Loads the actor from a training checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum AerobatStatus aerobat_policy_load(const char *path, struct AerobatPolicy **out);

/**
 * # Safety
 * `policy` must be NULL or a handle from [`aerobat_policy_load`] not yet freed.
 */
void aerobat_policy_free(struct AerobatPolicy *policy);

/**
 * Deterministic (mean) action for one observation.
 *
 * # Safety
 * `policy` must be a live handle; buffers must hold the stated lengths.
 */
enum AerobatStatus aerobat_policy_act(const struct AerobatPolicy *policy,
                                      const double *obs,
                                      size_t obs_len,
                                      double *action_out,
                                      size_t act_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AEROBAT_H */
