#ifndef CDE_INVERSE_H
#define CDE_INVERSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CdeScheme {
  CDE_SCHEME_EULER = 0,
  CDE_SCHEME_RK4 = 1,
} CdeScheme;

// Result code of every fallible call.
typedef enum CdeStatus {
  CDE_STATUS_OK = 0,
  CDE_STATUS_NULL_POINTER = 1,
  CDE_STATUS_INVALID_ARGUMENT = 2,
  CDE_STATUS_DIMENSION_MISMATCH = 3,
  // A state left the model domain.
  CDE_STATUS_DOMAIN = 4,
  // Singular diffusion or sensitivity matrix.
  CDE_STATUS_SINGULAR = 5,
  CDE_STATUS_PARSE = 6,
  // Output buffer too small.
  CDE_STATUS_BUFFER_TOO_SMALL = 7,
  CDE_STATUS_PANIC = 8,
  CDE_STATUS_OTHER = 9,
} CdeStatus;

// A vector field.
typedef struct CdeModel CdeModel;

// Observations on a uniform grid.
typedef struct CdeObservations CdeObservations;

// Slope history of one reconstruction.
typedef struct CdeTrace CdeTrace;

typedef struct CdeIntegrator {
  enum CdeScheme scheme;
  size_t substeps;
} CdeIntegrator;

typedef struct CdeNewtonOptions {
  size_t max_iterations;
  double residual_tolerance;
  double step_tolerance;
  // Seed each interval with the inverse-Itô chord slope instead of zero.
  bool inverse_ito_seed;
  double damping;
  size_t quadrature_nodes;
} CdeNewtonOptions;

typedef struct CdeSignatureOptions {
  size_t quadrature_nodes;
  size_t max_iterations;
  double slope_change_tolerance;
  size_t record_every;
  double correction_damping;
} CdeSignatureOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread ("" after a success).
// The pointer stays valid until the next call on the same thread.
const char *cde_last_error(void);

// Library version as a static NUL-terminated string.
const char *cde_version(void);

struct CdeIntegrator cde_integrator_default(void);

struct CdeNewtonOptions cde_newton_options_default(void);

struct CdeSignatureOptions cde_signature_options_default(void);

// CIR: `dY = a(b - Y) dt + σ √Y dX`.
//
// # Safety
// `out` must be null or writable.
enum CdeStatus cde_model_cir(double a, double b, double sigma, struct CdeModel **out);

// CEV: `dY = μ Y dt + σ Y^γ dX`.
//
// # Safety
// `out` must be null or writable.
enum CdeStatus cde_model_cev(double mu, double sigma, double gamma, struct CdeModel **out);

// `f(y) = diag(y)` in `dim` dimensions.
//
// # Safety
// `out` must be null or writable.
enum CdeStatus cde_model_geometric(size_t dim, struct CdeModel **out);

// Constant `d × m` diffusion, `matrix` in row-major order.
//
// # Safety
// `matrix` must point to `d * m` readable doubles.
enum CdeStatus cde_model_constant(const double *matrix, size_t d, size_t m, struct CdeModel **out);

// Model from its JSON description, e.g. `{"name": "cir", "params": {...}}`.
//
// # Safety
// `json` must be a valid NUL-terminated string.
enum CdeStatus cde_model_from_json(const char *json, struct CdeModel **out);

// # Safety
// `model` must be null or a handle from a `cde_model_*` constructor, freed once.
void cde_model_free(struct CdeModel *model);

// State dimension `d` (0 for a null handle).
//
// # Safety
// `model` must be null or a live handle.
size_t cde_model_dim_state(const struct CdeModel *model);

// Control dimension `m` (0 for a null handle).
//
// # Safety
// `model` must be null or a live handle.
size_t cde_model_dim_control(const struct CdeModel *model);

// Flow `F(δ; y0, c)` into `y_out` (length d) and, unless `g_out` is null,
// the sensitivity `G = ∂F/∂c` into `g_out` (d × m, row-major).
// A null `integ` selects the default integrator.
//
// # Safety
// `y0` and `y_out` must hold `d` doubles, `c` must hold `m`, `g_out` must be
// null or hold `d * m`.
enum CdeStatus cde_flow(const struct CdeModel *model,
                        const double *y0,
                        const double *c,
                        double delta,
                        const struct CdeIntegrator *integ,
                        double *y_out,
                        double *g_out);

// Observations `Y_0..Y_N` (`n_points = N + 1` rows of `dim` values,
// row-major) at spacing `delta`.
//
// # Safety
// `values` must hold `n_points * dim` doubles.
enum CdeStatus cde_observations_new(double delta,
                                    const double *values,
                                    size_t n_points,
                                    size_t dim,
                                    struct CdeObservations **out);

// # Safety
// `obs` must be null or a handle from [`cde_observations_new`], freed once.
void cde_observations_free(struct CdeObservations *obs);

// Per-interval Newton reconstruction with `sweeps` iterations.
// Null option pointers select the defaults.
//
// # Safety
// Handles must be live; option pointers must be null or valid.
enum CdeStatus cde_newton_reconstruct(const struct CdeModel *model,
                                      const struct CdeObservations *obs,
                                      size_t sweeps,
                                      const struct CdeNewtonOptions *options,
                                      const struct CdeIntegrator *integ,
                                      struct CdeTrace **out);

// Signature-iteration reconstruction. Null option pointers select the defaults.
//
// # Safety
// Handles must be live; option pointers must be null or valid.
enum CdeStatus cde_signature_reconstruct(const struct CdeModel *model,
                                         const struct CdeObservations *obs,
                                         const struct CdeSignatureOptions *options,
                                         const struct CdeIntegrator *integ,
                                         struct CdeTrace **out);

// # Safety
// `trace` must be null or a handle from a reconstruct call, freed once.
void cde_trace_free(struct CdeTrace *trace);

// Number of intervals `N` (0 for a null or empty trace).
//
// # Safety
// `trace` must be null or a live handle.
size_t cde_trace_num_intervals(const struct CdeTrace *trace);

// Control dimension of the recorded slopes.
//
// # Safety
// `trace` must be null or a live handle.
size_t cde_trace_dim(const struct CdeTrace *trace);

// Iterations performed.
//
// # Safety
// `trace` must be null or a live handle.
size_t cde_trace_iterations_run(const struct CdeTrace *trace);

// Whether every interval (Newton) or the whole iteration (signature) converged.
//
// # Safety
// `trace` must be null or a live handle.
bool cde_trace_converged(const struct CdeTrace *trace);

// Number of warnings attached to intervals.
//
// # Safety
// `trace` must be null or a live handle.
size_t cde_trace_num_flags(const struct CdeTrace *trace);

// Slopes after iteration `n` (the final slopes when the run stopped
// earlier) as `N` rows of `dim` values. `len` is the capacity of `out`.
//
// # Safety
// `trace` must be live and `out` must hold `len` doubles.
enum CdeStatus cde_trace_slopes(const struct CdeTrace *trace, size_t n, double *out, size_t len);

// Reconstructed control `X̂` at the knots after iteration `n`: `N + 1` rows
// of `dim` values starting at zero.
//
// # Safety
// `trace` must be live and `out` must hold `len` doubles.
enum CdeStatus cde_trace_path(const struct CdeTrace *trace, size_t n, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDE_INVERSE_H */
