//! Signature iteration in path form.
//!
//! Start from the inverse-Itô integral of the linearly interpolated
//! observations. Each iteration then
//!
//! 1. propagates the current piecewise-linear control from `Y_0`,
//! 2. joins every propagated knot `Ỹ_k` to the observation `Y_k` by a
//!    straight segment and integrates `f^{-1}` along it, which gives the
//!    correction slope `r_k = M̄_k (Y_k - Ỹ_k) / δ`,
//! 3. updates `c_k ← c_k + r_k - r_{k-1}` (with `r_0 = 0`).
//!
//! The update telescopes: the control's knot `k` moves by exactly `δ·r_k`.
//! Knot errors are therefore corrected in place instead of being accumulated
//! from independent per-interval solves.
//!
//! With a known drift `g`, the inverse-Itô integrand of the initialisation
//! is `f^{-1}(dY - g dt)`. The joining segments are inserted without
//! consuming time, so the corrections carry no drift term.

use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::ode::{propagate, IntegratorConfig};
use crate::path::ObservationGrid;
use crate::trace::{IntervalFlag, IterationTrace, Method};
use crate::{Error, Matrix, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignatureConfig {
    /// Trapezoid nodes on each straight segment (>= 2).
    pub quadrature_nodes: usize,
    pub max_iterations: usize,
    /// Stop once `max_k |c(n+1)_k - c(n)_k| · δ` falls below this.
    pub slope_change_tolerance: f64,
    /// Record the slope vector every `record_every` iterations (the first
    /// and last iterations are always recorded).
    pub record_every: usize,
    /// Factor applied to the corrections `r_k`; in `(0, 1]`.
    pub correction_damping: f64,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self {
            quadrature_nodes: 64,
            max_iterations: 300,
            slope_change_tolerance: 1e-10,
            record_every: 1,
            correction_damping: 1.0,
        }
    }
}

impl SignatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quadrature_nodes < 2 {
            return Err(Error::InvalidInput("quadrature_nodes must be >= 2".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidInput("record_every must be >= 1".into()));
        }
        if !(self.slope_change_tolerance >= 0.0) {
            return Err(Error::InvalidInput("slope_change_tolerance must be nonnegative".into()));
        }
        if !(self.correction_damping > 0.0 && self.correction_damping <= 1.0) {
            return Err(Error::InvalidInput("correction_damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Segment averages along the chord `y0 → y1` by the composite trapezoid
/// rule: `∫_0^1 f(L_s)^{-1} ds` and `∫_0^1 f(L_s)^{-1} g(L_s) ds`.
fn chord_averages<F: VectorField + ?Sized>(field: &F, y0: &Point, y1: &Point, nodes: usize) -> Result<(Matrix, Point)> {
    let m = field.dim_control();
    let d = field.dim_state();
    let mut avg_inv = Matrix::zeros(m, d);
    let mut avg_drift = Point::zeros(m);
    let last = nodes - 1;
    let h = 1.0 / last as f64;
    for i in 0..nodes {
        let s = i as f64 * h;
        let y = y0 + (y1 - y0) * s;
        let inv = field.inverse_diffusion(&y)?;
        let w = if i == 0 || i == last { 0.5 * h } else { h };
        if let Some(g) = field.drift_unchecked(&y) {
            avg_drift += &inv * g * w;
        }
        avg_inv += inv * w;
    }
    Ok((avg_inv, avg_drift))
}

/// Inverse-Itô slope of the straight segment from `y_start` to `y_end`
/// traversed in time `delta`: `(1/δ) ∫ f(L)^{-1} (dL - g(L) dt)`.
pub fn chord_slope<F: VectorField + ?Sized>(
    field: &F,
    y_start: &Point,
    y_end: &Point,
    delta: f64,
    nodes: usize,
) -> Result<Point> {
    if nodes < 2 {
        return Err(Error::InvalidInput("quadrature_nodes must be >= 2".into()));
    }
    let (avg_inv, avg_drift) = chord_averages(field, y_start, y_end, nodes)?;
    Ok(avg_inv * (y_end - y_start) / delta - avg_drift)
}

/// Initial slopes `c̃(0)`: the inverse-Itô integral of the linear
/// interpolation of the observations, one chord per interval.
pub fn initialize_slopes<F: VectorField + ?Sized>(
    field: &F,
    obs: &ObservationGrid,
    quadrature_nodes: usize,
) -> Result<Vec<Point>> {
    require_square(field)?;
    let values = obs.values();
    (1..=obs.num_intervals())
        .map(|k| {
            chord_slope(field, &values[k - 1], &values[k], obs.delta(), quadrature_nodes).map_err(|e| e.at_interval(k))
        })
        .collect()
}

/// Correction slope `r_k = M̄ (y_obs - y_tilde) / δ` with
/// `M̄ = ∫_0^1 f(y_tilde + s (y_obs - y_tilde))^{-1} ds`.
pub fn tree_correction<F: VectorField + ?Sized>(
    field: &F,
    y_tilde: &Point,
    y_obs: &Point,
    delta: f64,
    quadrature_nodes: usize,
) -> Result<Point> {
    if quadrature_nodes < 2 {
        return Err(Error::InvalidInput("quadrature_nodes must be >= 2".into()));
    }
    let gap = y_obs - y_tilde;
    if gap.iter().all(|&v| v == 0.0) {
        return Ok(Point::zeros(field.dim_control()));
    }
    let (avg_inv, _) = chord_averages(field, y_tilde, y_obs, quadrature_nodes)?;
    Ok(avg_inv * gap / delta)
}

/// Output of one signature iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStep {
    /// `c̃(n+1)`.
    pub slopes: Vec<Point>,
    /// `Ỹ(n)` at the knots `0..=N`, driven by `c̃(n)`.
    pub propagated: Vec<Point>,
    /// `r_1..r_N` (already multiplied by the correction damping).
    pub corrections: Vec<Point>,
}

fn require_square<F: VectorField + ?Sized>(field: &F) -> Result<()> {
    if field.dim_state() != field.dim_control() {
        return Err(Error::InvalidInput(format!(
            "inversion needs dim_state == dim_control, got {} and {}",
            field.dim_state(),
            field.dim_control()
        )));
    }
    Ok(())
}

/// One update `c̃(n) → c̃(n+1)`.
pub fn iterate<F: VectorField + ?Sized>(
    field: &F,
    obs: &ObservationGrid,
    current: &[Point],
    cfg: &SignatureConfig,
    integ: &IntegratorConfig,
) -> Result<IterationStep> {
    let n = obs.num_intervals();
    if current.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: current.len() });
    }
    let delta = obs.delta();
    let propagated = propagate(field, obs.initial(), current, delta, integ)?.knots;
    let observed = obs.values();
    let corrections = (1..=n)
        .map(|k| {
            tree_correction(field, &propagated[k], &observed[k], delta, cfg.quadrature_nodes)
                .map(|r| r * cfg.correction_damping)
                .map_err(|e| e.at_interval(k))
        })
        .collect::<Result<Vec<_>>>()?;
    let zero = Point::zeros(field.dim_control());
    let slopes = current
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let prev = if i == 0 { &zero } else { &corrections[i - 1] };
            c + (&corrections[i] - prev)
        })
        .collect();
    Ok(IterationStep { slopes, propagated, corrections })
}

fn max_change(a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Run the signature iteration until the slope change (scaled by δ) drops
/// below tolerance or `max_iterations` is reached.
///
/// Failures after initialisation (e.g. a domain exit during propagation)
/// end the run with a flag; the trace up to that point is returned.
pub fn reconstruct<F: VectorField + ?Sized>(
    field: &F,
    obs: &ObservationGrid,
    cfg: &SignatureConfig,
    integ: &IntegratorConfig,
) -> Result<IterationTrace> {
    run(field, obs, cfg, integ, |_, _| {})
}

/// [`reconstruct`] with a callback receiving every iteration step.
pub fn reconstruct_with<F, C>(
    field: &F,
    obs: &ObservationGrid,
    cfg: &SignatureConfig,
    integ: &IntegratorConfig,
    on_step: C,
) -> Result<IterationTrace>
where
    F: VectorField + ?Sized,
    C: FnMut(usize, &IterationStep),
{
    run(field, obs, cfg, integ, on_step)
}

fn run<F, C>(
    field: &F,
    obs: &ObservationGrid,
    cfg: &SignatureConfig,
    integ: &IntegratorConfig,
    mut on_step: C,
) -> Result<IterationTrace>
where
    F: VectorField + ?Sized,
    C: FnMut(usize, &IterationStep),
{
    cfg.validate()?;
    integ.validate()?;
    require_square(field)?;
    if obs.dim() != field.dim_state() {
        return Err(Error::DimensionMismatch { expected: field.dim_state(), found: obs.dim() });
    }
    let delta = obs.delta();
    let mut trace = IterationTrace::new(Method::Signature, delta);
    let mut slopes = initialize_slopes(field, obs, cfg.quadrature_nodes)?;
    trace.record(0, &slopes);

    let mut last_propagated = None;
    for n in 1..=cfg.max_iterations {
        let step = match iterate(field, obs, &slopes, cfg, integ) {
            Ok(s) => s,
            Err(e) => {
                let interval = match &e {
                    Error::Interval { interval, .. } => *interval,
                    _ => 0,
                };
                trace.flags.push(IntervalFlag { interval, message: format!("iteration {n}: {e}") });
                break;
            }
        };
        on_step(n, &step);
        let change = max_change(&step.slopes, &slopes) * delta;
        slopes = step.slopes;
        last_propagated = Some(step.propagated);
        trace.iterations_run = n;
        let done = change < cfg.slope_change_tolerance;
        if done || n % cfg.record_every == 0 || n == cfg.max_iterations {
            trace.record(n, &slopes);
        }
        if done {
            trace.converged = true;
            break;
        }
    }
    trace.record(trace.iterations_run, &slopes);
    if let Some(p) = last_propagated {
        trace.final_residuals = p.iter().zip(obs.values()).skip(1).map(|(a, b)| (a - b).norm()).collect();
    }
    Ok(trace)
}
