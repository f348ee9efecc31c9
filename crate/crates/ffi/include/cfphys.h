/* Generated by cbindgen; do not edit. */

#ifndef CFPHYS_H
#define CFPHYS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_SIMULATION_ERROR = 3,
  CF_STATUS_GENERATION_FAILED = 4,
  CF_STATUS_BUFFER_TOO_SMALL = 5,
  CF_STATUS_PANIC = 6,
} CfStatus;

typedef enum CfScenario {
  CF_SCENARIO_BALLS = 0,
  CF_SCENARIO_COLLISION = 1,
} CfScenario;

typedef struct CfExperiment CfExperiment;

/**
 * Bodies in the unit box; masses are per-body defaults for simulation.
 */
typedef struct CfScene CfScene;

typedef struct CfTrajectory CfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cf_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * # Safety
 * `out` must be null or valid for a pointer write.
 */
enum CfStatus cf_scene_new(struct CfScene **out);

/**
 * Adds a ball. The scene is validated (inside the box, no overlaps) when
 * it is simulated.
 *
 * # Safety
 * `scene` must be null or a live handle from [`cf_scene_new`].
 */
enum CfStatus cf_scene_add_body(struct CfScene *scene,
                                double x,
                                double y,
                                double vx,
                                double vy,
                                double radius,
                                double mass);

/**
 * # Safety
 * `scene` must be null or a live handle.
 */
size_t cf_scene_len(const struct CfScene *scene);

/**
 * # Safety
 * `scene` must be null or a live handle; it is invalid afterwards.
 */
void cf_scene_free(struct CfScene *scene);

/**
 * Simulates `duration` seconds recorded at `fps`. `masses` may be null to
 * use the masses given to [`cf_scene_add_body`]; otherwise it holds one
 * value per body.
 *
 * # Safety
 * `scene` must be a live handle, `masses` null or `n_masses` readable
 * doubles, `out` valid for a pointer write.
 */
enum CfStatus cf_simulate(const struct CfScene *scene,
                          const double *masses,
                          size_t n_masses,
                          double duration,
                          double fps,
                          struct CfTrajectory **out);

/**
 * # Safety
 * `t` must be null or a live handle.
 */
size_t cf_trajectory_n_frames(const struct CfTrajectory *t);

/**
 * # Safety
 * `t` must be null or a live handle.
 */
size_t cf_trajectory_n_bodies(const struct CfTrajectory *t);

/**
 * Writes `[x, y, vx, vy]` of one body at one frame.
 *
 * # Safety
 * `t` must be a live handle and `out` point to 4 writable doubles.
 */
enum CfStatus cf_trajectory_state(const struct CfTrajectory *t,
                                  size_t frame,
                                  size_t body,
                                  double *out);

/**
 * Sum over frames and bodies of the position gap.
 *
 * # Safety
 * `a` and `b` must be live handles, `out` a writable double.
 */
enum CfStatus cf_trajectory_distance(const struct CfTrajectory *a,
                                     const struct CfTrajectory *b,
                                     double *out);

/**
 * # Safety
 * `t` must be null or a live handle; it is invalid afterwards.
 */
void cf_trajectory_free(struct CfTrajectory *t);

/**
 * Generates one accepted experiment with the default scenario settings.
 * `n_objects` is ignored for the collision scenario.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum CfStatus cf_experiment_generate(enum CfScenario scenario,
                                     size_t n_objects,
                                     double eps,
                                     uint64_t seed,
                                     bool identifiability,
                                     bool counterfactuality,
                                     struct CfExperiment **out);

/**
 * # Safety
 * `e` must be null or a live handle.
 */
size_t cf_experiment_n_bodies(const struct CfExperiment *e);

/**
 * Copies the hidden masses (one per body of the observed scene).
 *
 * # Safety
 * `e` must be a live handle and `buf` point to `len` writable doubles.
 */
enum CfStatus cf_experiment_masses(const struct CfExperiment *e, double *buf, size_t len);

/**
 * Copies the bodies whose mass flip moves the counterfactual outcome by
 * at least the threshold; `n_out` receives their count.
 *
 * # Safety
 * `e` must be a live handle, `buf` null or `len` writable values, `n_out`
 * a writable value.
 */
enum CfStatus cf_experiment_consequential(const struct CfExperiment *e,
                                          size_t *buf,
                                          size_t len,
                                          size_t *n_out);

/**
 * Copy of the observed (`counterfactual == false`) or counterfactual
 * rollout. Free it with [`cf_trajectory_free`].
 *
 * # Safety
 * `e` must be a live handle and `out` valid for a pointer write.
 */
enum CfStatus cf_experiment_trajectory(const struct CfExperiment *e,
                                       bool counterfactual,
                                       struct CfTrajectory **out);

/**
 * # Safety
 * `e` must be null or a live handle; it is invalid afterwards.
 */
void cf_experiment_free(struct CfExperiment *e);

/**
 * Time-averaged PSNR (dB, capped) of RGB frame sequences stored as
 * `n_frames × height × width × 3` doubles in `[0, 1]`.
 *
 * # Safety
 * `pred` and `gt` must each point to `n_frames·height·width·3` doubles
 * and `out` to a writable double.
 */
enum CfStatus cf_psnr(const double *pred,
                      const double *gt,
                      size_t n_frames,
                      size_t height,
                      size_t width,
                      double *out);

/**
 * Minimum-cost assignment on a row-major `rows × cols` cost matrix.
 * `assignment[i]` receives the column of row `i`, or `SIZE_MAX` when the
 * row is left unassigned (more rows than columns).
 *
 * # Safety
 * `cost` must point to `rows·cols` doubles, `assignment` to `rows`
 * writable values and `total` to a writable double.
 */
enum CfStatus cf_min_cost_assignment(const double *cost,
                                     size_t rows,
                                     size_t cols,
                                     size_t *assignment,
                                     double *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFPHYS_H */
