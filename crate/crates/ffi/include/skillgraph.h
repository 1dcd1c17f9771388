#ifndef SKILLGRAPH_H
#define SKILLGRAPH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Width of the global state vector.
 */
#define SG_STATE_DIM 25

/**
 * Slots of a composite action: camera, lock, move, dodge, heal/attack.
 */
#define SG_ACTION_SLOTS 5

typedef enum {
  SG_OUTCOME_ONGOING = 0,
  SG_OUTCOME_PLAYER_DEAD = 1,
  SG_OUTCOME_BOSS_DEFEATED = 2,
  SG_OUTCOME_TRUNCATED = 3,
} SgOutcome;

typedef enum {
  SG_SKILL_CAM = 0,
  SG_SKILL_LOCK = 1,
  SG_SKILL_MOVE = 2,
  SG_SKILL_DODGE = 3,
  SG_SKILL_HA = 4,
  SG_SKILL_E2E = 5,
} SgSkill;

typedef enum {
  SG_SPAWN_MID = 0,
  SG_SPAWN_LONG = 1,
  SG_SPAWN_RANDOM = 2,
} SgSpawn;

/**
 * Status codes; the non-zero values match the command-line exit codes.
 */
typedef enum {
  SG_STATUS_OK = 0,
  /**
   * Bad argument: null pointer, wrong length, out-of-range id.
   */
  SG_STATUS_USAGE = 2,
  /**
   * A file is missing or unreadable.
   */
  SG_STATUS_MISSING = 3,
  /**
   * Hash mismatch or malformed file.
   */
  SG_STATUS_INTEGRITY = 4,
  SG_STATUS_NUMERICAL = 5,
  SG_STATUS_CONFIG = 6,
  /**
   * A panic inside the library.
   */
  SG_STATUS_INTERNAL = 70,
} SgStatus;

/**
 * A trained skill acting ε-greedily from a checkpoint.
 */
typedef struct SgPolicy SgPolicy;

/**
 * A running boss fight.
 */
typedef struct SgWorld SgWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sg_version(void);

/**
 * Observation width of `skill`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `size_t`.
 */
SgStatus sg_skill_obs_dim(SgSkill skill, size_t *out);

/**
 * Number of discrete actions of `skill`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `size_t`.
 */
SgStatus sg_skill_action_count(SgSkill skill, size_t *out);

/**
 * Copies `skill`'s observation out of a global state vector.
 *
 * # Safety
 * `state` must hold `state_len` doubles and `out` room for `out_len`.
 */
SgStatus sg_project(SgSkill skill,
                    const double *state,
                    size_t state_len,
                    double *out,
                    size_t out_len);

/**
 * Starts a fight. `phase` is 1 or 2.
 *
 * # Safety
 * `out` must be null or point to writable memory for one pointer.
 */
SgStatus sg_world_new(uint8_t phase, SgSpawn spawn, uint64_t seed, SgWorld **out);

/**
 * Frees a world; null is ignored.
 *
 * # Safety
 * `world` must be null or a handle from [`sg_world_new`] not yet freed.
 */
void sg_world_free(SgWorld *world);

/**
 * Advances one tick. `actions` holds one index per slot (camera, lock, move,
 * dodge, heal/attack); the outcome after the tick goes to `outcome`.
 *
 * # Safety
 * `world` must be a live handle, `actions` must hold 5 values, and `outcome`
 * must be null or writable.
 */
SgStatus sg_world_step(SgWorld *world, const size_t *actions, SgOutcome *outcome);

/**
 * Writes the 25 global state features.
 *
 * # Safety
 * `world` must be a live handle and `out` must have room for `len` doubles.
 */
SgStatus sg_world_state(const SgWorld *world, double *out, size_t len);

/**
 * Ticks elapsed and the current outcome; either out pointer may be null.
 *
 * # Safety
 * `world` must be a live handle; non-null out pointers must be writable.
 */
SgStatus sg_world_status(const SgWorld *world, uint64_t *tick, SgOutcome *outcome);

/**
 * Loads a checkpoint file. When `sha256` is non-null the file must hash to
 * that lowercase hex digest. `eps` is the exploration rate and `seed` seeds
 * its random stream.
 *
 * # Safety
 * `path` (and `sha256` when given) must be NUL-terminated strings; `out` must
 * be writable.
 */
SgStatus sg_policy_load(const char *path,
                        const char *sha256,
                        double eps,
                        uint64_t seed,
                        SgPolicy **out);

/**
 * Frees a policy; null is ignored.
 *
 * # Safety
 * `policy` must be null or a handle from [`sg_policy_load`] not yet freed.
 */
void sg_policy_free(SgPolicy *policy);

/**
 * The skill a policy acts for.
 *
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
SgStatus sg_policy_skill(const SgPolicy *policy, SgSkill *out);

/**
 * Picks an action from a 25-feature global state; the policy projects it to
 * its own observation.
 *
 * # Safety
 * `policy` must be a live handle, `state` must hold `len` doubles, and
 * `action` must be writable.
 */
SgStatus sg_policy_act(SgPolicy *policy, const double *state, size_t len, size_t *action);

/**
 * Q-values of every action for a 25-feature global state.
 *
 * # Safety
 * `policy` must be a live handle, `state` must hold `len` doubles and `out`
 * must have room for `out_len` doubles.
 */
SgStatus sg_policy_q_values(const SgPolicy *policy,
                            const double *state,
                            size_t len,
                            double *out,
                            size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKILLGRAPH_H */
