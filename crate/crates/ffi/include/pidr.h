#ifndef PIDR_H
#define PIDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PidrScheme {
  PIDR_SCHEME_EULER = 0,
  PIDR_SCHEME_RK4 = 1,
} PidrScheme;

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum PidrStatus {
  PIDR_STATUS_OK = 0,
  /**
   * Invalid argument, configuration or input data.
   */
  PIDR_STATUS_INVALID = 2,
  PIDR_STATUS_IO = 3,
  PIDR_STATUS_NUMERICAL = 4,
  PIDR_STATUS_NULL_POINTER = 5,
  PIDR_STATUS_PANIC = 6,
} PidrStatus;

/**
 * Opaque trained network.
 */
typedef struct PidrNetwork PidrNetwork;

/**
 * One IMU sample: time (s), specific force (m/s²) and angular rate
 * (rad/s) in the body frame.
 */
typedef struct PidrImuSample {
  double t;
  double specific_force[3];
  double angular_rate[3];
} PidrImuSample;

/**
 * Navigation state: geodetic position (rad, rad, m), NED velocity (m/s)
 * and roll, pitch, yaw (rad).
 */
typedef struct PidrNavState {
  double t;
  double lat;
  double lon;
  double height;
  double velocity[3];
  double euler[3];
} PidrNavState;

typedef struct PidrMetrics {
  double prmse;
  double mate;
  double tde;
  double fde;
} PidrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *pidr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pidr_version(void);

/**
 * Loads a model checkpoint written by `pidr train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PidrStatus pidr_network_load(const char *path, struct PidrNetwork **out);

/**
 * Releases a network; null is ignored.
 *
 * # Safety
 * `net` must come from [`pidr_network_load`] and not be used afterwards.
 */
void pidr_network_free(struct PidrNetwork *net);

/**
 * Number of parameters of a loaded network, or 0 for null.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t pidr_network_param_count(const struct PidrNetwork *net);

/**
 * Predicts the local-NED state `(pn, pe, pd, vn, ve, vd, roll, pitch,
 * yaw)` at `imu.t` for a trajectory spanning `[start, start + duration]`.
 * When `rate` is non-null its nine entries receive the time derivative.
 *
 * # Safety
 * `net` must be a live handle, `state` must hold 9 writable doubles and
 * `rate` must be null or hold 9 writable doubles.
 */
enum PidrStatus pidr_network_predict(const struct PidrNetwork *net,
                                     struct PidrImuSample imu,
                                     double start,
                                     double duration,
                                     double *state,
                                     double *rate);

/**
 * Integrates `n_imu` IMU samples from `init` (whose `t` is ignored) and
 * writes one state per sample into `out`.
 *
 * # Safety
 * `imu` must hold `n_imu` samples and `out` room for `n_imu` states.
 */
enum PidrStatus pidr_dead_reckon(struct PidrNavState init,
                                 const struct PidrImuSample *imu,
                                 size_t n_imu,
                                 enum PidrScheme scheme,
                                 bool mode_2d,
                                 struct PidrNavState *out);

/**
 * PRMSE, MATE, TDE and FDE of a predicted local-NED track against GT.
 * Times are in seconds and positions are `n × 3` row-major NED meters.
 *
 * # Safety
 * Each time array must hold its count of doubles and each position
 * array three times that.
 */
enum PidrStatus pidr_trajectory_metrics(const double *pred_t,
                                        const double *pred_ned,
                                        size_t n_pred,
                                        const double *gt_t,
                                        const double *gt_ned,
                                        size_t n_gt,
                                        struct PidrMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIDR_H */
