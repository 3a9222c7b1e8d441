#ifndef RWRE_H
#define RWRE_H

/* Generated by cbindgen from rwre-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  RWRE_STATUS_OK = 0,
  RWRE_STATUS_NULL_POINTER = 1,
  RWRE_STATUS_INVALID_ARGUMENT = 2,
  RWRE_STATUS_SAMPLING_FAILED = 3,
  RWRE_STATUS_OUT_OF_RANGE = 4,
} RwreStatus;

/**
 * Opaque environment handle.
 */
typedef struct RwreEnv RwreEnv;

/**
 * Opaque regeneration record handle.
 */
typedef struct RwreRegenRecord RwreRegenRecord;

/**
 * Opaque trajectory handle.
 */
typedef struct RwreTrajectory RwreTrajectory;

/**
 * Library version as a static NUL-terminated string.
 */
const char *rwre_version(void);

/**
 * Creates a Dirichlet environment over the 2d nearest-neighbour steps.
 *
 * `alphas` must hold `2 * dimension` positive weights ordered
 * (e_1..e_d, -e_1..-e_d).
 *
 * # Safety
 * `alphas` must point to `2 * dimension` doubles; `out_env` must be valid.
 */
RwreStatus rwre_env_new_dirichlet(size_t dimension,
                                  const double *alphas,
                                  size_t alphas_len,
                                  uint64_t env_seed,
                                  RwreEnv **out_env);

/**
 * Creates an environment with the same probability vector at every site,
 * over the 2d nearest-neighbour steps.
 *
 * # Safety
 * `probs` must point to `probs_len` doubles; `out_env` must be valid.
 */
RwreStatus rwre_env_new_deterministic(size_t dimension,
                                      const double *probs,
                                      size_t probs_len,
                                      uint64_t env_seed,
                                      RwreEnv **out_env);

/**
 * Frees an environment handle.
 *
 * # Safety
 * `env` must be a handle from this library, not yet freed; null is a no-op.
 */
void rwre_env_free(RwreEnv *env);

/**
 * Writes the step-probability vector at a site into `out_probs`.
 *
 * # Safety
 * `site` must hold the environment dimension of coordinates and `out_probs`
 * room for one probability per support step.
 */
RwreStatus rwre_env_prob_at(const RwreEnv *env,
                            const int64_t *site,
                            size_t site_len,
                            double *out_probs,
                            size_t out_len);

/**
 * kappa = 2 * sum(alpha) - max_i (alpha_i + alpha_{i+d}) for 2d weights.
 *
 * # Safety
 * `alphas` must point to `alphas_len` doubles; `out_kappa` must be valid.
 */
RwreStatus rwre_kappa(size_t dimension, const double *alphas, size_t alphas_len, double *out_kappa);

/**
 * Whether sum_i |alpha_i - alpha_{i+d}| > 1 (writes 1 or 0).
 *
 * # Safety
 * `alphas` must point to `alphas_len` doubles; `out_flag` must be valid.
 */
RwreStatus rwre_t_gamma_sufficient(size_t dimension,
                                   const double *alphas,
                                   size_t alphas_len,
                                   int *out_flag);

/**
 * Simulates a walk of `n_steps` from `start`; the result is reproducible
 * from (environment seed, walk seed, start, n_steps).
 *
 * # Safety
 * `start` must hold the environment dimension of coordinates and `out_traj`
 * must be valid.
 */
RwreStatus rwre_simulate(const RwreEnv *env,
                         const int64_t *start,
                         size_t start_len,
                         size_t n_steps,
                         uint64_t walk_seed,
                         RwreTrajectory **out_traj);

/**
 * Number of steps in a trajectory (sites minus one); 0 for null.
 *
 * # Safety
 * `traj` must be a live handle from this library or null.
 */
size_t rwre_trajectory_len(const RwreTrajectory *traj);

/**
 * Copies the coordinates of site `k` into `out_site`.
 *
 * # Safety
 * `out_site` must have room for the trajectory dimension of coordinates.
 */
RwreStatus rwre_trajectory_site(const RwreTrajectory *traj,
                                size_t k,
                                int64_t *out_site,
                                size_t out_len);

/**
 * Frees a trajectory handle.
 *
 * # Safety
 * `traj` must be a handle from this library, not yet freed; null is a no-op.
 */
void rwre_trajectory_free(RwreTrajectory *traj);

/**
 * Detects directional regenerations along the first coordinate axis with the
 * given confirmation margin.
 *
 * # Safety
 * `traj` must be a live trajectory handle; `out_record` must be valid.
 */
RwreStatus rwre_detect_regenerations(const RwreTrajectory *traj,
                                     int64_t confirm_margin,
                                     RwreRegenRecord **out_record);

/**
 * Number of confirmed regeneration times in a record; 0 for null.
 *
 * # Safety
 * `record` must be a live handle from this library or null.
 */
size_t rwre_regen_len(const RwreRegenRecord *record);

/**
 * Whether the record ends in an unconfirmed candidate; 0 for null.
 *
 * # Safety
 * `record` must be a live handle from this library or null.
 */
int rwre_regen_censored_tail(const RwreRegenRecord *record);

/**
 * Copies the k-th confirmed regeneration (time, level) pair.
 *
 * # Safety
 * `out_time` and `out_level` must be valid pointers.
 */
RwreStatus rwre_regen_entry(const RwreRegenRecord *record,
                            size_t k,
                            size_t *out_time,
                            int64_t *out_level);

/**
 * Frees a regeneration record handle.
 *
 * # Safety
 * `record` must be a handle from this library, not yet freed; null is a no-op.
 */
void rwre_regen_free(RwreRegenRecord *record);

/**
 * Number of distinct sites visited by both trajectories among their first
 * `n` positions.
 *
 * # Safety
 * `a` and `b` must be live trajectory handles; `out_count` must be valid.
 */
RwreStatus rwre_count_intersections(const RwreTrajectory *a,
                                    const RwreTrajectory *b,
                                    size_t n,
                                    uint64_t *out_count);

/**
 * Hill tail-index estimate from the top `k_top` order statistics of
 * positive samples, with its asymptotic standard error.
 *
 * # Safety
 * `samples` must point to `samples_len` doubles; out pointers must be valid.
 */
RwreStatus rwre_hill_tail_index(const double *samples,
                                size_t samples_len,
                                size_t k_top,
                                double *out_index,
                                double *out_std_error);

#endif  /* RWRE_H */
