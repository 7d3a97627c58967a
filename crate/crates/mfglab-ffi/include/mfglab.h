#ifndef MFGLAB_H
#define MFGLAB_H

/* Generated by cbindgen from mfglab-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum MfglStatus {
  MFGL_STATUS_OK = 0,
  MFGL_STATUS_NULL_POINTER = 1,
  MFGL_STATUS_INVALID_ARGUMENT = 2,
  MFGL_STATUS_DIMENSION_MISMATCH = 3,
  MFGL_STATUS_NOT_CONVERGED = 4,
  MFGL_STATUS_OUTSIDE_GRID = 5,
  MFGL_STATUS_MISSING_DATA = 6,
  MFGL_STATUS_PANIC = 98,
  MFGL_STATUS_UNKNOWN = 99,
} MfglStatus;

// Opaque empirical-measure handle.
typedef struct MfglMeasure MfglMeasure;

// Opaque model handle.
typedef struct MfglModel MfglModel;

// Opaque equilibrium handle.
typedef struct MfglSolution MfglSolution;

// Solver knobs mirrored as a plain C struct. Obtain defaults from
// `mfgl_solver_config_default` and override fields as needed.
typedef struct MfglSolverConfig {
  double dt;
  size_t n_particles;
  double theta;
  size_t max_outer;
  double fp_tol;
  double inner_tol;
  double grid_half_width;
  double grid_h;
  uint64_t seed;
  uint8_t store_z;
  size_t noise_realizations;
} MfglSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message for this thread; borrowed, valid until the next
// failing call on the same thread.
const char *mfgl_last_error_message(void);

enum MfglStatus mfgl_solver_config_default(struct MfglSolverConfig *out);

// Builds a model from its JSON spec, e.g.
// `{"family":"riccati_lq","params":{"c0":1.0,"gamma":2.0},"beta":0.0}`.
//
// # Safety
// `spec_json` must be a valid NUL-terminated UTF-8 string; `out` must be
// a valid writable pointer.
enum MfglStatus mfgl_model_new_json(const char *spec_json, struct MfglModel **out);

// # Safety
// `model` must be a pointer previously returned by `mfgl_model_new_json`
// and not yet freed.
void mfgl_model_free(struct MfglModel *model);

// Builds a measure from `n` particles of dimension `dim` stored row-major
// in `points`; `weights` may be null for uniform weights.
//
// # Safety
// `points` must hold `n * dim` readable doubles and `weights`, when non
// null, `n` readable doubles; `out` must be writable.
enum MfglStatus mfgl_measure_new(size_t dim,
                                 size_t n,
                                 const double *points,
                                 const double *weights,
                                 struct MfglMeasure **out);

// # Safety
// `measure` must come from `mfgl_measure_new` and not be freed twice.
void mfgl_measure_free(struct MfglMeasure *measure);

// Exact Wasserstein distance W_p, p in {1, 2}.
//
// # Safety
// `a` and `b` must be live measure handles; `out` writable.
enum MfglStatus mfgl_wasserstein(const struct MfglMeasure *a,
                                 const struct MfglMeasure *b,
                                 uint32_t p,
                                 double *out);

// Monte-Carlo lower estimate of the displacement monotonicity constant.
//
// # Safety
// `model` must be a live model handle; `out` writable.
enum MfglStatus mfgl_estimate_c0(const struct MfglModel *model,
                                 size_t trials,
                                 size_t cloud_size,
                                 uint64_t seed,
                                 double *out);

// Deterministic particle equilibrium (beta = 0).
//
// # Safety
// `model` and `rho0` must be live handles; `cfg` readable; `out` writable.
enum MfglStatus mfgl_solve_particles(const struct MfglModel *model,
                                     const struct MfglMeasure *rho0,
                                     double horizon,
                                     const struct MfglSolverConfig *cfg,
                                     struct MfglSolution **out);

// One-dimensional grid equilibrium (beta >= 0 taken from the model spec).
//
// # Safety
// As `mfgl_solve_particles`.
enum MfglStatus mfgl_solve_grid(const struct MfglModel *model,
                                const struct MfglMeasure *rho0,
                                double horizon,
                                const struct MfglSolverConfig *cfg,
                                struct MfglSolution **out);

// # Safety
// `solution` must come from a solve call and not be freed twice.
void mfgl_solution_free(struct MfglSolution *solution);

// Number of time nodes of a solution.
//
// # Safety
// `solution` must be a live solution handle.
size_t mfgl_solution_n_times(const struct MfglSolution *solution);

// Borrowed pointer to the time grid (length `mfgl_solution_n_times`).
//
// # Safety
// `solution` must be live; the pointer is valid until it is freed.
const double *mfgl_solution_times(const struct MfglSolution *solution);

// Value function u(t, x) along the equilibrium via the Lagrangian
// representation.
//
// # Safety
// `model` and `solution` must be live handles; `x` must hold `dim`
// readable doubles; `out` writable.
enum MfglStatus mfgl_value_at(const struct MfglModel *model,
                              const struct MfglSolution *solution,
                              double t,
                              const double *x,
                              const struct MfglSolverConfig *cfg,
                              double *out);

// Ergodic constant sample lambda^T of a solved equilibrium.
//
// # Safety
// `model` and `solution` must be live handles; `out` writable.
enum MfglStatus mfgl_lambda_t(const struct MfglModel *model,
                              const struct MfglSolution *solution,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFGLAB_H */
