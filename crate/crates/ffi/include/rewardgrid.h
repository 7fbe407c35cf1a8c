#ifndef REWARDGRID_H
#define REWARDGRID_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RgStatus {
  RG_STATUS_OK = 0,
  RG_STATUS_NULL_POINTER = 1,
  RG_STATUS_INVALID_ARGUMENT = 2,
  RG_STATUS_PARSE = 3,
  RG_STATUS_INVALID_CONFIG = 4,
  RG_STATUS_GAME_OVER = 5,
  RG_STATUS_INFEASIBLE = 6,
  RG_STATUS_BUFFER_TOO_SMALL = 7,
  RG_STATUS_INTERNAL = 8,
} RgStatus;

typedef enum RgMovement {
  RG_MOVEMENT_CLOCKWISE = 0,
  RG_MOVEMENT_COUNTERCLOCKWISE = 1,
  RG_MOVEMENT_RANDOM = 2,
} RgMovement;

typedef enum RgGameStatus {
  RG_GAME_STATUS_RUNNING = 0,
  RG_GAME_STATUS_WON = 1,
  RG_GAME_STATUS_CAPTURED = 2,
  RG_GAME_STATUS_STEP_LIMIT = 3,
} RgGameStatus;

/**
 * Opaque game handle.
 */
typedef struct RgGame RgGame;

/**
 * Summary of one online-planning game.
 */
typedef struct RgEpisode {
  enum RgGameStatus status;
  int64_t score;
  uint64_t steps;
  /**
   * Non-zero when a re-plan found no feasible route.
   */
  uint8_t infeasible;
  uint64_t solves;
} RgEpisode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates one of the built-in boards. `size` is 5 or 9.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum RgStatus rg_game_new_preset(uint32_t size,
                                 enum RgMovement movement_kind,
                                 uint64_t seed,
                                 struct RgGame **out);

/**
 * Creates a game from the text of an experiment spec (TOML). The `[game]`
 * table gives the board and the optional `[online]` table the planner
 * settings used by `rg_online_episode`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RgStatus rg_game_new_from_toml(const char *toml, uint64_t seed, struct RgGame **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `game` must come from `rg_game_new_*` and not be used afterwards.
 */
void rg_game_free(struct RgGame *game);

/**
 * Starts a new game and rewinds the adversary stream to the creation seed.
 *
 * # Safety
 * `game` must be a live handle.
 */
enum RgStatus rg_game_reset(struct RgGame *game);

/**
 * Plays one turn: the agent takes `action` (0 up, 1 down, 2 left, 3 right;
 * off-grid moves stay put), then the adversaries move. Either out pointer
 * may be null.
 *
 * # Safety
 * `game` must be a live handle; non-null out pointers must be writable.
 */
enum RgStatus rg_game_step(struct RgGame *game,
                           uint32_t action,
                           int64_t *out_reward,
                           enum RgGameStatus *out_status);

/**
 * Number of cells, which is also the observation length.
 *
 * # Safety
 * `game` must be a live handle or null (returns 0).
 */
size_t rg_game_cells(const struct RgGame *game);

/**
 * Copies the row-major board encoding into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum RgStatus rg_game_observation(const struct RgGame *game, double *buf, size_t len);

/**
 * Current agent cell, score, step count and status. Null out pointers are skipped.
 *
 * # Safety
 * `game` must be a live handle; non-null out pointers must be writable.
 */
enum RgStatus rg_game_state(const struct RgGame *game,
                            uint32_t *row,
                            uint32_t *col,
                            int64_t *score,
                            uint64_t *steps,
                            enum RgGameStatus *status);

/**
 * Best score reachable when no adversary interferes.
 *
 * # Safety
 * `game` must be a live handle and `out` writable.
 */
enum RgStatus rg_game_optimal_score(const struct RgGame *game, int64_t *out);

/**
 * Plays a fresh game with the online planner: `n_obs` observed adversary
 * moves, then one re-plan per turn. `phi` of zero or less keeps the handle's
 * setting. The handle's own game is not touched; the adversary stream is
 * the one of `seed`.
 *
 * # Safety
 * `game` must be a live handle and `out` writable.
 */
enum RgStatus rg_online_episode(const struct RgGame *game,
                                uint32_t n_obs,
                                double phi,
                                uint64_t seed,
                                struct RgEpisode *out);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to fit). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null with `len` 0.
 */
size_t rg_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REWARDGRID_H */
