//! Per-interval Newton-Raphson inversion.
//!
//! Interval `k` is solved on its own: find `c_k` with
//! `F(δ; Y_{(k-1)δ}, c_k) = Y_{kδ}` starting from the observed `Y_{(k-1)δ}`.
//! Solving the intervals independently means their slope errors add up
//! along the assembled path.

use serde::{Deserialize, Serialize};

use crate::field::{invert_checked, VectorField};
use crate::ode::{flow, flow_with_sensitivity, IntegratorConfig};
use crate::path::ObservationGrid;
use crate::trace::{IntervalFlag, IterationTrace, Method};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialSlope {
    #[default]
    Zero,
    /// Inverse-Itô integral along the chord between the two observations.
    InverseItoSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Upper bound on Newton updates in [`solve_interval`].
    pub max_iterations: usize,
    /// Stop once `|Y_target - F(δ; Y_start, c)| < residual_tolerance`.
    pub residual_tolerance: f64,
    /// Stop once `|Δc| <= step_tolerance · (1 + |c|)`.
    pub step_tolerance: f64,
    pub initial_slope_rule: InitialSlope,
    /// Multiplies every Newton step; in `(0, 1]`.
    pub damping: f64,
    /// Trapezoid nodes for the inverse-Itô seed.
    pub quadrature_nodes: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            residual_tolerance: 1e-14,
            step_tolerance: 1e-15,
            initial_slope_rule: InitialSlope::Zero,
            damping: 1.0,
            quadrature_nodes: 64,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        if !(self.residual_tolerance >= 0.0 && self.step_tolerance >= 0.0) {
            return Err(Error::InvalidInput("tolerances must be nonnegative".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.quadrature_nodes < 2 {
            return Err(Error::InvalidInput("quadrature_nodes must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Residual,
    Step,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonDiagnostics {
    /// Residual norm at each evaluated iterate `c(0), c(1), ...`.
    pub residuals: Vec<f64>,
    /// Number of Newton updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
}

struct NewtonRun {
    /// `c(1), c(2), ...` after each update.
    history: Vec<Point>,
    diagnostics: NewtonDiagnostics,
    failure: Option<Error>,
}

#[allow(clippy::too_many_arguments)]
fn newton_run<F: VectorField + ?Sized>(
    field: &F,
    y_start: &Point,
    y_target: &Point,
    delta: f64,
    c_init: &Point,
    max_updates: usize,
    cfg: &NewtonConfig,
    integ: &IntegratorConfig,
) -> NewtonRun {
    let mut c = c_init.clone();
    let mut history = Vec::new();
    let mut residuals = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    let mut failure = None;
    for i in 0..=max_updates {
        let res = match flow_with_sensitivity(field, y_start, &c, delta, integ) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let r = y_target - &res.terminal_value;
        let rnorm = r.norm();
        residuals.push(rnorm);
        if rnorm < cfg.residual_tolerance {
            stop_reason = StopReason::Residual;
            break;
        }
        if i == max_updates {
            break;
        }
        let g = res.sensitivity.expect("requested sensitivity");
        let g_inv = match invert_checked(&g, field.det_threshold()) {
            Ok(m) => m,
            Err(det) => {
                failure = Some(Error::SingularJacobian { iteration: i + 1, determinant: det });
                break;
            }
        };
        let step = g_inv * r * cfg.damping;
        c += &step;
        history.push(c.clone());
        if step.norm() <= cfg.step_tolerance * (1.0 + c.norm()) {
            stop_reason = StopReason::Step;
            break;
        }
    }
    let converged = failure.is_none() && stop_reason != StopReason::MaxIterations;
    NewtonRun {
        diagnostics: NewtonDiagnostics { residuals, iterations: history.len(), converged, stop_reason },
        history,
        failure,
    }
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

/// Solve `F(δ; y_start, c) = y_target` for `c` by (damped) Newton iteration.
///
/// Non-convergence within `max_iterations` is reported in the diagnostics;
/// a singular sensitivity matrix or a domain exit is an error.
pub fn solve_interval<F: VectorField + ?Sized>(
    field: &F,
    y_start: &Point,
    y_target: &Point,
    delta: f64,
    c_init: &Point,
    cfg: &NewtonConfig,
    integ: &IntegratorConfig,
) -> Result<(Point, NewtonDiagnostics)> {
    cfg.validate()?;
    require_square(field)?;
    field.check_domain(y_start)?;
    let run = newton_run(field, y_start, y_target, delta, c_init, cfg.max_iterations, cfg, integ);
    if let Some(e) = run.failure {
        return Err(e);
    }
    let c = run.history.last().cloned().unwrap_or_else(|| c_init.clone());
    Ok((c, run.diagnostics))
}

fn initial_slope<F: VectorField + ?Sized>(
    field: &F,
    y_start: &Point,
    y_target: &Point,
    delta: f64,
    cfg: &NewtonConfig,
) -> Result<Point> {
    match cfg.initial_slope_rule {
        InitialSlope::Zero => Ok(Point::zeros(field.dim_control())),
        InitialSlope::InverseItoSeed => {
            crate::signature::chord_slope(field, y_start, y_target, delta, cfg.quadrature_nodes)
        }
    }
}

/// Run `n_sweeps` Newton updates on every interval and record the assembled
/// slope vector after each sweep (`n = 0` is the initial guess).
///
/// Intervals are independent: each starts from the observed value at its
/// left knot and targets the observed value at its right knot. Intervals
/// that fail or do not converge are flagged and keep their last iterate.
pub fn reconstruct<F: VectorField + ?Sized>(
    field: &F,
    obs: &ObservationGrid,
    n_sweeps: usize,
    cfg: &NewtonConfig,
    integ: &IntegratorConfig,
) -> Result<IterationTrace> {
    cfg.validate()?;
    integ.validate()?;
    require_square(field)?;
    if obs.dim() != field.dim_state() {
        return Err(Error::DimensionMismatch { expected: field.dim_state(), found: obs.dim() });
    }
    let delta = obs.delta();
    let values = obs.values();
    let n = obs.num_intervals();
    for (k, y) in values.iter().enumerate() {
        field.check_domain(y).map_err(|e| e.at_interval(k.max(1)))?;
    }

    let mut trace = IterationTrace::new(Method::Newton, delta);
    let mut histories = Vec::with_capacity(n);
    let mut converged = true;
    for k in 1..=n {
        let (ys, yt) = (&values[k - 1], &values[k]);
        let c0 = match initial_slope(field, ys, yt, delta, cfg) {
            Ok(c) => c,
            Err(e) => {
                trace.flags.push(IntervalFlag { interval: k, message: format!("initial slope: {e}") });
                Point::zeros(field.dim_control())
            }
        };
        let run = newton_run(field, ys, yt, delta, &c0, n_sweeps, cfg, integ);
        if let Some(e) = &run.failure {
            trace.flags.push(IntervalFlag { interval: k, message: format!("target unreachable: {e}") });
        } else if !run.diagnostics.converged && n_sweeps > 0 {
            trace.flags.push(IntervalFlag { interval: k, message: format!("not converged after {n_sweeps} sweeps") });
        }
        converged &= run.diagnostics.converged;
        let c_final = run.history.last().unwrap_or(&c0);
        let residual =
            flow(field, ys, c_final, delta, integ).map(|r| (yt - r.terminal_value).norm()).unwrap_or(f64::INFINITY);
        trace.final_residuals.push(residual);
        histories.push((c0, run.history));
    }

    // an interval that stopped early keeps its last slope in later sweeps
    let slopes_after = |sweep: usize| -> Vec<Point> {
        histories
            .iter()
            .map(|(c0, h)| match sweep.min(h.len()) {
                0 => c0.clone(),
                s => h[s - 1].clone(),
            })
            .collect()
    };
    let last_change = histories.iter().map(|(_, h)| h.len()).max().unwrap_or(0);
    for sweep in 0..=n_sweeps.min(last_change) {
        trace.record(sweep, &slopes_after(sweep));
    }
    trace.iterations_run = n_sweeps;
    trace.converged = converged;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_cir, make_constant, make_geometric};
    use crate::ode::propagate;
    use crate::path::generate_random_control;
    use crate::Matrix;

    fn p(v: f64) -> Point {
        Point::from_element(1, v)
    }

    #[test]
    fn observation_outside_domain_is_rejected() {
        let cir = make_cir(0.1, 0.05, 0.05);
        let obs = ObservationGrid::from_scalars(0.1, &[0.04, 0.0, 0.03]).unwrap();
        let err = reconstruct(&cir, &obs, 5, &NewtonConfig::default(), &IntegratorConfig::default()).unwrap_err();
        assert!(err.is_domain(), "{err}");
    }

    #[test]
    fn affine_target_converges_in_one_step() {
        let id = make_constant(Matrix::identity(1, 1));
        let cfg = NewtonConfig::default();
        let (c, diag) =
            solve_interval(&id, &p(0.3), &p(1.1), 0.2, &p(0.0), &cfg, &IntegratorConfig::default()).unwrap();
        assert!((c[0] - 4.0).abs() < 1e-13);
        assert_eq!(diag.iterations, 1);
        assert!(diag.converged);
    }

    #[test]
    fn geometric_first_step_and_limit() {
        let geo = make_geometric();
        let target = p(0.1f64.exp());
        let integ = IntegratorConfig::rk4(100);
        let one = NewtonConfig { max_iterations: 1, ..NewtonConfig::default() };
        let (c1, _) = solve_interval(&geo, &p(1.0), &target, 1.0, &p(0.0), &one, &integ).unwrap();
        // F(c) = e^c, G(c) = e^c: c(1) = 0 + (e^0.1 - 1) / 1
        assert!((c1[0] - (0.1f64.exp() - 1.0)).abs() < 1e-9, "{}", c1[0]);
        let (c, diag) = solve_interval(&geo, &p(1.0), &target, 1.0, &p(0.0), &NewtonConfig::default(), &integ).unwrap();
        assert!((c[0] - 0.1).abs() < 1e-10);
        assert!(diag.converged);
    }

    #[test]
    fn quadratic_convergence_near_solution() {
        let geo = make_geometric();
        let integ = IntegratorConfig::rk4(100);
        let target = p(1.7f64.exp());
        let cfg = NewtonConfig { residual_tolerance: 0.0, step_tolerance: 0.0, ..Default::default() };
        let run = newton_run(&geo, &p(1.0), &target, 1.0, &p(0.0), 8, &cfg, &integ);
        let r = &run.diagnostics.residuals;
        let start = r.iter().position(|&x| x < 1e-3).unwrap();
        let mut checked = 0;
        for w in r[start..].windows(2).filter(|w| w[1] > 1e-12) {
            let ratio = w[1].ln() / w[0].ln();
            assert!((ratio - 2.0).abs() < 0.5, "log ratio {ratio} in {r:?}");
            checked += 1;
        }
        assert!(checked >= 1, "{r:?}");
    }

    #[test]
    fn cir_round_trip() {
        let cir = make_cir(0.1, 0.05, 0.05);
        let integ = IntegratorConfig::default();
        let target = flow(&cir, &p(0.04), &p(0.7), 0.1, &integ).unwrap().terminal_value;
        let (c, _) = solve_interval(&cir, &p(0.04), &target, 0.1, &p(0.0), &NewtonConfig::default(), &integ).unwrap();
        assert!((c[0] - 0.7).abs() < 1e-8, "{}", c[0]);
    }

    #[test]
    fn singular_sensitivity_is_an_error() {
        let flat = make_constant(Matrix::zeros(1, 1));
        let err = solve_interval(
            &flat,
            &p(0.0),
            &p(1.0),
            0.1,
            &p(0.0),
            &NewtonConfig::default(),
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { iteration: 1, .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(NewtonConfig { damping: 0.0, ..Default::default() }.validate().is_err());
        assert!(NewtonConfig { damping: 1.5, ..Default::default() }.validate().is_err());
        assert!(NewtonConfig { residual_tolerance: -1.0, ..Default::default() }.validate().is_err());
        assert!(NewtonConfig::default().validate().is_ok());
    }

    fn simulate_geometric(n: usize, seed: u64) -> (Vec<Point>, ObservationGrid) {
        let control = generate_random_control(0.1, n, seed, Some(3.0)).unwrap();
        let slopes = control.slopes().unwrap();
        let ys = propagate(&make_geometric(), &p(1.0), &slopes, 0.1, &IntegratorConfig::default()).unwrap();
        (slopes, ObservationGrid::new(0.1, ys.knots).unwrap())
    }

    #[test]
    fn constant_field_exact_after_one_sweep() {
        let id = make_constant(Matrix::identity(1, 1));
        let obs = ObservationGrid::from_scalars(0.5, &[0.0, 1.0, 0.5, 2.0]).unwrap();
        let trace = reconstruct(&id, &obs, 1, &NewtonConfig::default(), &IntegratorConfig::default()).unwrap();
        let expected = [2.0, -1.0, 3.0];
        for (c, e) in trace.slopes_at(1).unwrap().iter().zip(expected) {
            assert!((c[0] - e).abs() < 1e-13);
        }
        assert!(trace.converged);
    }

    #[test]
    fn geometric_reconstruction_matches_log_ratios() {
        let (_, obs) = simulate_geometric(20, 3);
        let trace =
            reconstruct(&make_geometric(), &obs, 20, &NewtonConfig::default(), &IntegratorConfig::default()).unwrap();
        let ys = obs.values();
        for (k, c) in trace.slopes_at(20).unwrap().iter().enumerate() {
            let exact = (ys[k + 1][0] / ys[k][0]).ln() / 0.1;
            assert!((c[0] - exact).abs() < 1e-10, "k={k}: {} vs {exact}", c[0]);
        }
        assert!(trace.flags.is_empty());
    }

    #[test]
    fn interval_order_does_not_matter() {
        let (_, obs) = simulate_geometric(8, 11);
        let cfg = NewtonConfig::default();
        let integ = IntegratorConfig::default();
        let trace = reconstruct(&make_geometric(), &obs, 5, &cfg, &integ).unwrap();
        let ys = obs.values();
        for k in (1..=8).rev() {
            let run = newton_run(&make_geometric(), &ys[k - 1], &ys[k], 0.1, &p(0.0), 5, &cfg, &integ);
            let c = run.history.last().unwrap();
            assert_eq!(c[0].to_bits(), trace.slopes_at(5).unwrap()[k - 1][0].to_bits());
        }
    }

    #[test]
    fn unreachable_target_is_flagged() {
        let cir = make_cir(0.1, 0.05, 0.05);
        // second observation is far below anything reachable within the domain
        let obs = ObservationGrid::from_scalars(0.1, &[0.04, 0.0401, 1e-11]).unwrap();
        let trace = reconstruct(&cir, &obs, 30, &NewtonConfig::default(), &IntegratorConfig::default()).unwrap();
        assert!(!trace.converged);
        assert!(trace.flags.iter().any(|f| f.interval == 2));
        assert_eq!(trace.slopes_at(30).unwrap().len(), 2);
    }
}
