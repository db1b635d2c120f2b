//! C ABI for `cde-inverse`.
//!
//! Objects are opaque handles created by `cde_*_new`-style constructors and
//! released with the matching `*_free`. Every fallible call returns a
//! [`CdeStatus`]; on failure [`cde_last_error`] describes what went wrong on
//! the calling thread. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cde_inverse::field::{ModelSpec, VectorField, DEFAULT_POSITIVITY_FLOOR};
use cde_inverse::newton::{self, InitialSlope};
use cde_inverse::ode::flow_with_sensitivity;
use cde_inverse::signature;
use cde_inverse::{
    Error, IntegratorConfig, IterationTrace, Matrix, NewtonConfig, ObservationGrid, Point, Scheme, SignatureConfig,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// A state left the model domain.
    Domain = 4,
    /// Singular diffusion or sensitivity matrix.
    Singular = 5,
    Parse = 6,
    /// Output buffer too small.
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdeScheme {
    Euler = 0,
    Rk4 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CdeIntegrator {
    pub scheme: CdeScheme,
    pub substeps: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CdeNewtonOptions {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub step_tolerance: f64,
    /// Seed each interval with the inverse-Itô chord slope instead of zero.
    pub inverse_ito_seed: bool,
    pub damping: f64,
    pub quadrature_nodes: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CdeSignatureOptions {
    pub quadrature_nodes: usize,
    pub max_iterations: usize,
    pub slope_change_tolerance: f64,
    pub record_every: usize,
    pub correction_damping: f64,
}

/// A vector field.
pub struct CdeModel(Box<dyn VectorField>);

/// Observations on a uniform grid.
pub struct CdeObservations(ObservationGrid);

/// Slope history of one reconstruction.
pub struct CdeTrace(IterationTrace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CdeStatus {
    match e {
        Error::Interval { source, .. } => status_of(source),
        Error::InvalidInput(_) | Error::NonUniformGrid { .. } | Error::OutOfRange { .. } => CdeStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => CdeStatus::DimensionMismatch,
        Error::Domain { .. } | Error::DomainExit { .. } | Error::Infeasible { .. } => CdeStatus::Domain,
        Error::SingularDiffusion { .. } | Error::SingularJacobian { .. } => CdeStatus::Singular,
        Error::Parse(_) | Error::Json(_) => CdeStatus::Parse,
        _ => CdeStatus::Other,
    }
}

struct Fail(CdeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: CdeStatus, msg: &str) -> Fail {
    Fail(status, msg.to_string())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CdeStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CdeStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CdeStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(CdeStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(CdeStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn integrator(p: *const CdeIntegrator) -> IntegratorConfig {
    match unsafe { p.as_ref() } {
        None => IntegratorConfig::default(),
        Some(i) => IntegratorConfig {
            scheme: match i.scheme {
                CdeScheme::Euler => Scheme::Euler,
                CdeScheme::Rk4 => Scheme::Rk4,
            },
            substeps: i.substeps,
            dense_output: false,
        },
    }
}

/// Message for the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn cde_integrator_default() -> CdeIntegrator {
    CdeIntegrator { scheme: CdeScheme::Rk4, substeps: IntegratorConfig::default().substeps }
}

#[no_mangle]
pub extern "C" fn cde_newton_options_default() -> CdeNewtonOptions {
    let d = NewtonConfig::default();
    CdeNewtonOptions {
        max_iterations: d.max_iterations,
        residual_tolerance: d.residual_tolerance,
        step_tolerance: d.step_tolerance,
        inverse_ito_seed: d.initial_slope_rule == InitialSlope::InverseItoSeed,
        damping: d.damping,
        quadrature_nodes: d.quadrature_nodes,
    }
}

#[no_mangle]
pub extern "C" fn cde_signature_options_default() -> CdeSignatureOptions {
    let d = SignatureConfig::default();
    CdeSignatureOptions {
        quadrature_nodes: d.quadrature_nodes,
        max_iterations: d.max_iterations,
        slope_change_tolerance: d.slope_change_tolerance,
        record_every: d.record_every,
        correction_damping: d.correction_damping,
    }
}

unsafe fn new_model(spec: ModelSpec, out: *mut *mut CdeModel) -> CdeStatus {
    guard(|| emit(out, CdeModel(spec.build()?)))
}

/// CIR: `dY = a(b - Y) dt + σ √Y dX`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cde_model_cir(a: f64, b: f64, sigma: f64, out: *mut *mut CdeModel) -> CdeStatus {
    new_model(ModelSpec::Cir { a, b, sigma, floor: DEFAULT_POSITIVITY_FLOOR }, out)
}

/// CEV: `dY = μ Y dt + σ Y^γ dX`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cde_model_cev(mu: f64, sigma: f64, gamma: f64, out: *mut *mut CdeModel) -> CdeStatus {
    new_model(ModelSpec::Cev { mu, sigma, gamma, floor: DEFAULT_POSITIVITY_FLOOR }, out)
}

/// `f(y) = diag(y)` in `dim` dimensions.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cde_model_geometric(dim: usize, out: *mut *mut CdeModel) -> CdeStatus {
    new_model(ModelSpec::Geometric { dim }, out)
}

/// Constant `d × m` diffusion, `matrix` in row-major order.
///
/// # Safety
/// `matrix` must point to `d * m` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn cde_model_constant(
    matrix: *const f64,
    d: usize,
    m: usize,
    out: *mut *mut CdeModel,
) -> CdeStatus {
    guard(|| {
        let values = slice(matrix, d * m, "matrix")?;
        let rows = values.chunks(m.max(1)).map(<[f64]>::to_vec).collect();
        let model = ModelSpec::Constant { matrix: rows }.build()?;
        emit(out, CdeModel(model))
    })
}

/// Model from its JSON description, e.g. `{"name": "cir", "params": {...}}`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cde_model_from_json(json: *const c_char, out: *mut *mut CdeModel) -> CdeStatus {
    guard(|| {
        if json.is_null() {
            return Err(fail(CdeStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| fail(CdeStatus::Parse, "json is not UTF-8"))?;
        let spec: ModelSpec = serde_json::from_str(text).map_err(Error::from)?;
        emit(out, CdeModel(spec.build()?))
    })
}

/// # Safety
/// `model` must be null or a handle from a `cde_model_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn cde_model_free(model: *mut CdeModel) {
    free(model)
}

/// State dimension `d` (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_model_dim_state(model: *const CdeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim_state())
}

/// Control dimension `m` (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_model_dim_control(model: *const CdeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim_control())
}

/// Flow `F(δ; y0, c)` into `y_out` (length d) and, unless `g_out` is null,
/// the sensitivity `G = ∂F/∂c` into `g_out` (d × m, row-major).
/// A null `integ` selects the default integrator.
///
/// # Safety
/// `y0` and `y_out` must hold `d` doubles, `c` must hold `m`, `g_out` must be
/// null or hold `d * m`.
#[no_mangle]
pub unsafe extern "C" fn cde_flow(
    model: *const CdeModel,
    y0: *const f64,
    c: *const f64,
    delta: f64,
    integ: *const CdeIntegrator,
    y_out: *mut f64,
    g_out: *mut f64,
) -> CdeStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let (d, m) = (model.dim_state(), model.dim_control());
        let y0 = Point::from_column_slice(slice(y0, d, "y0")?);
        let c = Point::from_column_slice(slice(c, m, "c")?);
        if y_out.is_null() {
            return Err(fail(CdeStatus::NullPointer, "y_out is null"));
        }
        let res = flow_with_sensitivity(&**model, &y0, &c, delta, &integrator(integ))?;
        std::slice::from_raw_parts_mut(y_out, d).copy_from_slice(res.terminal_value.as_slice());
        if !g_out.is_null() {
            let g: Matrix = res.sensitivity.expect("sensitivity requested");
            let out = std::slice::from_raw_parts_mut(g_out, d * m);
            for i in 0..d {
                for j in 0..m {
                    out[i * m + j] = g[(i, j)];
                }
            }
        }
        Ok(())
    })
}

/// Observations `Y_0..Y_N` (`n_points = N + 1` rows of `dim` values,
/// row-major) at spacing `delta`.
///
/// # Safety
/// `values` must hold `n_points * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cde_observations_new(
    delta: f64,
    values: *const f64,
    n_points: usize,
    dim: usize,
    out: *mut *mut CdeObservations,
) -> CdeStatus {
    guard(|| {
        if dim == 0 {
            return Err(fail(CdeStatus::InvalidArgument, "dim must be positive"));
        }
        let flat = slice(values, n_points * dim, "values")?;
        let points = flat.chunks(dim).map(Point::from_column_slice).collect();
        emit(out, CdeObservations(ObservationGrid::new(delta, points)?))
    })
}

/// # Safety
/// `obs` must be null or a handle from [`cde_observations_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn cde_observations_free(obs: *mut CdeObservations) {
    free(obs)
}

/// Per-interval Newton reconstruction with `sweeps` iterations.
/// Null option pointers select the defaults.
///
/// # Safety
/// Handles must be live; option pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn cde_newton_reconstruct(
    model: *const CdeModel,
    obs: *const CdeObservations,
    sweeps: usize,
    options: *const CdeNewtonOptions,
    integ: *const CdeIntegrator,
    out: *mut *mut CdeTrace,
) -> CdeStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let obs = &handle(obs, "observations")?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| cde_newton_options_default());
        let cfg = NewtonConfig {
            max_iterations: o.max_iterations,
            residual_tolerance: o.residual_tolerance,
            step_tolerance: o.step_tolerance,
            initial_slope_rule: if o.inverse_ito_seed { InitialSlope::InverseItoSeed } else { InitialSlope::Zero },
            damping: o.damping,
            quadrature_nodes: o.quadrature_nodes,
        };
        let trace = newton::reconstruct(&**model, obs, sweeps, &cfg, &integrator(integ))?;
        emit(out, CdeTrace(trace))
    })
}

/// Signature-iteration reconstruction. Null option pointers select the defaults.
///
/// # Safety
/// Handles must be live; option pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn cde_signature_reconstruct(
    model: *const CdeModel,
    obs: *const CdeObservations,
    options: *const CdeSignatureOptions,
    integ: *const CdeIntegrator,
    out: *mut *mut CdeTrace,
) -> CdeStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let obs = &handle(obs, "observations")?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| cde_signature_options_default());
        let cfg = SignatureConfig {
            quadrature_nodes: o.quadrature_nodes,
            max_iterations: o.max_iterations,
            slope_change_tolerance: o.slope_change_tolerance,
            record_every: o.record_every,
            correction_damping: o.correction_damping,
        };
        let trace = signature::reconstruct(&**model, obs, &cfg, &integrator(integ))?;
        emit(out, CdeTrace(trace))
    })
}

/// # Safety
/// `trace` must be null or a handle from a reconstruct call, freed once.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_free(trace: *mut CdeTrace) {
    free(trace)
}

/// Number of intervals `N` (0 for a null or empty trace).
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_num_intervals(trace: *const CdeTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.final_slopes().len())
}

/// Control dimension of the recorded slopes.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_dim(trace: *const CdeTrace) -> usize {
    trace.as_ref().and_then(|t| t.0.final_slopes().first().map(|c| c.len())).unwrap_or(0)
}

/// Iterations performed.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_iterations_run(trace: *const CdeTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.iterations_run)
}

/// Whether every interval (Newton) or the whole iteration (signature) converged.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_converged(trace: *const CdeTrace) -> bool {
    trace.as_ref().is_some_and(|t| t.0.converged)
}

/// Number of warnings attached to intervals.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_num_flags(trace: *const CdeTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.flags.len())
}

/// Slopes after iteration `n` (the final slopes when the run stopped
/// earlier) as `N` rows of `dim` values. `len` is the capacity of `out`.
///
/// # Safety
/// `trace` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_slopes(trace: *const CdeTrace, n: usize, out: *mut f64, len: usize) -> CdeStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.0;
        let slopes =
            t.slopes_at(n).ok_or_else(|| fail(CdeStatus::InvalidArgument, "no slopes recorded at that iteration"))?;
        let needed: usize = slopes.iter().map(|c| c.len()).sum();
        if len < needed {
            return Err(fail(CdeStatus::BufferTooSmall, &format!("need {needed} doubles, got {len}")));
        }
        if out.is_null() {
            return Err(fail(CdeStatus::NullPointer, "out is null"));
        }
        let dst = std::slice::from_raw_parts_mut(out, needed);
        for (chunk, c) in dst.chunks_mut(slopes[0].len()).zip(slopes) {
            chunk.copy_from_slice(c.as_slice());
        }
        Ok(())
    })
}

/// Reconstructed control `X̂` at the knots after iteration `n`: `N + 1` rows
/// of `dim` values starting at zero.
///
/// # Safety
/// `trace` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cde_trace_path(trace: *const CdeTrace, n: usize, out: *mut f64, len: usize) -> CdeStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.0;
        let path =
            t.path_at(n).ok_or_else(|| fail(CdeStatus::InvalidArgument, "no slopes recorded at that iteration"))?;
        let knots = path.knot_values();
        let needed = knots.len() * path.dim();
        if len < needed {
            return Err(fail(CdeStatus::BufferTooSmall, &format!("need {needed} doubles, got {len}")));
        }
        if out.is_null() {
            return Err(fail(CdeStatus::NullPointer, "out is null"));
        }
        let dst = std::slice::from_raw_parts_mut(out, needed);
        for (chunk, x) in dst.chunks_mut(path.dim()).zip(knots) {
            chunk.copy_from_slice(x.as_slice());
        }
        Ok(())
    })
}
