#ifndef ROUGHFLOW_H
#define ROUGHFLOW_H

/* Generated by cbindgen from crates/roughflow-ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_PARAM = 2,
  RF_STATUS_SCHEDULE = 3,
  RF_STATUS_GEOMETRY = 4,
  RF_STATUS_FLOW = 5,
  RF_STATUS_BIFURCATION = 6,
  RF_STATUS_EMPTY_ARRIVALS = 7,
  RF_STATUS_SDE = 8,
  RF_STATUS_SOLVER = 9,
  RF_STATUS_CONFIG = 10,
  RF_STATUS_IO = 11,
  RF_STATUS_UTF8 = 12,
  RF_STATUS_PANIC = 13,
} RfStatus;

/**
 * Opaque velocity field.
 */
typedef struct RfField RfField;

/**
 * Loop construction parameters.
 */
typedef struct RfLoopParams {
  double p;
  double delta;
  double alpha;
  double epsilon;
  double a0;
  uintptr_t n_max;
} RfLoopParams;

/**
 * Chess construction parameters.
 */
typedef struct RfChessParams {
  double p;
  double delta;
  double gamma;
  double a0;
  uintptr_t n_max;
} RfChessParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next call
 * that fails on the same thread; never NULL.
 */
const char *rf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

struct RfLoopParams rf_loop_params_default(void);

struct RfChessParams rf_chess_params_default(void);

/**
 * Build the level-`n` loop field.
 *
 * # Safety
 * `params` must point to a valid `RfLoopParams`; `out` must be writable.
 */
enum RfStatus rf_loop_field_new(const struct RfLoopParams *params,
                                uintptr_t n,
                                struct RfField **out);

/**
 * Build the level-`n` chess field.
 *
 * # Safety
 * `params` must point to a valid `RfChessParams`; `out` must be writable.
 */
enum RfStatus rf_chess_field_new(const struct RfChessParams *params,
                                 uintptr_t n,
                                 struct RfField **out);

/**
 * Release a field. NULL is ignored.
 *
 * # Safety
 * `field` must come from `rf_*_field_new` and not have been freed.
 */
void rf_field_free(struct RfField *field);

/**
 * Side of the periodic box and the time horizon of the field.
 *
 * # Safety
 * `field` must be a live handle; `side` and `horizon` writable.
 */
enum RfStatus rf_field_extent(const struct RfField *field, double *side, double *horizon);

/**
 * Velocity at `(t, x, y)` into `out[0..2]`.
 *
 * # Safety
 * `field` must be a live handle; `out` must hold two doubles.
 */
enum RfStatus rf_field_velocity(const struct RfField *field,
                                double t,
                                double x,
                                double y,
                                double *out);

/**
 * Exact flow map from `t0` to `t1` (backward when `t1 < t0`) into `out[0..2]`.
 *
 * # Safety
 * `field` must be a live handle; `out` must hold two doubles.
 */
enum RfStatus rf_field_flow_map(const struct RfField *field,
                                double t0,
                                double t1,
                                double x,
                                double y,
                                double *out);

/**
 * Euler-Maruyama ensemble of `dX = b dt + sqrt(2 kappa) dW`.
 *
 * `starts` holds `n_starts` interleaved `(x, y)` pairs; `per_start` paths
 * start from each. Wrapped terminal positions go to `out`, which must hold
 * `2 * n_starts * per_start` doubles, start-major.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum RfStatus rf_simulate_sde(const struct RfField *field,
                              double t0,
                              double t1,
                              const double *starts,
                              uintptr_t n_starts,
                              uintptr_t per_start,
                              double kappa,
                              uint64_t seed,
                              double *out);

/**
 * Run a named scenario into `out_dir`. `config_toml` may be NULL for the
 * defaults. `passed` receives 1 when every enforced check holds.
 *
 * # Safety
 * String arguments must be NUL-terminated; `passed` writable.
 */
enum RfStatus rf_run_scenario(const char *name,
                              const char *config_toml,
                              const char *out_dir,
                              int *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUGHFLOW_H */
