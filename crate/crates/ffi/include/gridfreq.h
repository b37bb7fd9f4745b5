#ifndef GRIDFREQ_H
#define GRIDFREQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  /**
   * Bad case data, unknown name, bad option or out-of-range index.
   */
  GF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The integration produced a non-finite state.
   */
  GF_STATUS_NUMERIC_FAILURE = 3,
  /**
   * A verification or equilibrium check did not pass.
   */
  GF_STATUS_CHECK_FAILED = 4,
  GF_STATUS_IO = 5,
  GF_STATUS_PANIC = 6,
} GfStatus;

typedef enum GfMode {
  GF_MODE_CLOSED_LOOP = 0,
  GF_MODE_PURE_OPT = 1,
} GfMode;

typedef enum GfControlLaw {
  GF_CONTROL_LAW_DPPD = 0,
  /**
   * Projected subgradient dynamics without the proximal step.
   */
  GF_CONTROL_LAW_BASELINE = 1,
  GF_CONTROL_LAW_NONE = 2,
} GfControlLaw;

typedef enum GfSeries {
  /**
   * Frequency deviation per bus.
   */
  GF_SERIES_OMEGA = 0,
  /**
   * Controllable load per bus.
   */
  GF_SERIES_LOAD = 1,
  /**
   * Line flow per line.
   */
  GF_SERIES_FLOW = 2,
  /**
   * Virtual angle per bus.
   */
  GF_SERIES_VIRTUAL_ANGLE = 3,
} GfSeries;

/**
 * Loaded case with its selected scenario.
 */
typedef struct GfCase GfCase;

/**
 * Sampled result of [`gf_simulate`].
 */
typedef struct GfTrajectory GfTrajectory;

/**
 * Summary diagnostics of one trajectory.
 */
typedef struct GfMetrics {
  double kkt_total;
  double max_box_violation;
  double final_omega_inf;
  double max_omega_inf;
  double final_cost;
  bool rate_pass;
} GfMetrics;

typedef struct GfVerifyResult {
  bool passed;
  double kkt_total;
  double wall_time_s;
} GfVerifyResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gf_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *gf_last_error(void);

/**
 * Loads a bundled case by name, or a case JSON file by path.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GfStatus gf_case_load(const char *name, struct GfCase **out);

/**
 * Parses a case from JSON text.
 *
 * # Safety
 * `name` and `json` must be NUL-terminated strings and `out` a valid pointer.
 */
enum GfStatus gf_case_from_json(const char *name, const char *json, struct GfCase **out);

/**
 * Releases a case. NULL is ignored.
 *
 * # Safety
 * `case` must come from a `gf_case_*` constructor and not be used afterwards.
 */
void gf_case_free(struct GfCase *case_);

/**
 * Number of buses, or 0 for NULL.
 *
 * # Safety
 * `case` must be NULL or a live case handle.
 */
size_t gf_case_n_buses(const struct GfCase *case_);

/**
 * Number of lines, or 0 for NULL.
 *
 * # Safety
 * `case` must be NULL or a live case handle.
 */
size_t gf_case_n_lines(const struct GfCase *case_);

/**
 * Switches to a named scenario of the case file.
 *
 * # Safety
 * `case` must be a live case handle and `scenario` a NUL-terminated string.
 */
enum GfStatus gf_case_select_scenario(struct GfCase *case_, const char *scenario);

/**
 * Overrides the horizon and step. Samples are never finer than the step.
 *
 * # Safety
 * `case` must be a live case handle.
 */
enum GfStatus gf_case_set_horizon(struct GfCase *case_, double t_end, double h);

/**
 * Sets the controller mode and whether line limits are enforced.
 *
 * # Safety
 * `case` must be a live case handle.
 */
enum GfStatus gf_case_set_mode(struct GfCase *case_, enum GfMode mode, bool thermal_limits);

/**
 * Box projection of `y` for bus `bus` (0-based).
 *
 * # Safety
 * `case` must be a live case handle and `out` a valid pointer.
 */
enum GfStatus gf_prox_box(const struct GfCase *case_, size_t bus, double y, double *out);

/**
 * Shifted soft threshold of `y` for bus `bus` (0-based), using the scaled cost.
 *
 * # Safety
 * `case` must be a live case handle and `out` a valid pointer.
 */
enum GfStatus gf_prox_l1(const struct GfCase *case_, size_t bus, double y, double *out);

/**
 * Integrates the case under its current scenario.
 *
 * # Safety
 * `case` must be a live case handle and `out` a valid pointer.
 */
enum GfStatus gf_simulate(const struct GfCase *case_,
                          enum GfControlLaw law_kind,
                          struct GfTrajectory **out);

/**
 * Releases a trajectory. NULL is ignored.
 *
 * # Safety
 * `traj` must come from [`gf_simulate`] and not be used afterwards.
 */
void gf_trajectory_free(struct GfTrajectory *traj);

/**
 * Number of stored samples, or 0 for NULL.
 *
 * # Safety
 * `traj` must be NULL or a live trajectory handle.
 */
size_t gf_trajectory_len(const struct GfTrajectory *traj);

/**
 * Copies sample `k` into `time` and one per-bus or per-line series into `buf`.
 * `len` must equal the series width ([`gf_case_n_buses`] or [`gf_case_n_lines`]).
 *
 * # Safety
 * `traj` must be a live trajectory handle, `time` a valid pointer and `buf` valid for
 * `len` writes.
 */
enum GfStatus gf_trajectory_sample(const struct GfTrajectory *traj,
                                   size_t k,
                                   enum GfSeries series,
                                   double *time,
                                   double *buf,
                                   size_t len);

/**
 * Diagnostics of a trajectory produced from `case`.
 *
 * # Safety
 * `case` and `traj` must be live handles and `out` a valid pointer.
 */
enum GfStatus gf_trajectory_metrics(const struct GfCase *case_,
                                    const struct GfTrajectory *traj,
                                    struct GfMetrics *out);

/**
 * Runs the full verification of a bundled case or case file. A failed check is
 * reported through `out->passed`, not the status.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GfStatus gf_verify(const char *name, struct GfVerifyResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDFREQ_H */
