//! Seeded round-trip experiments: draw a random control, simulate the
//! observations, invert them with each method and write the artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::field::{ModelSpec, VectorField};
use crate::metrics::{path_error, ErrorReport, ErrorSummary};
use crate::newton::{self, NewtonConfig};
use crate::ode::{propagate, IntegratorConfig};
use crate::path::{ObservationGrid, PiecewiseLinearPath};
use crate::signature::{self, SignatureConfig};
use crate::trace::{IntervalFlag, IterationTrace, Method};
use crate::{Error, Point, Result};

/// Reseeding budget when a drawn control drives the model out of its domain.
pub const MAX_ATTEMPTS: usize = 100;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_METHOD_FAILURE: i32 = 3;

fn default_methods() -> Vec<Method> {
    vec![Method::Newton, Method::Signature]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    pub model: ModelSpec,
    pub delta: f64,
    pub n_intervals: usize,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Truncate drawn slopes to `[-clip, clip]`; unclipped when absent.
    #[serde(default)]
    pub control_clip: Option<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Iterations at which reconstructions are snapshotted (ascending).
    pub iteration_counts: Vec<usize>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub newton: NewtonConfig,
    /// Newton sweeps; defaults to the largest snapshot iteration.
    #[serde(default)]
    pub newton_sweeps: Option<usize>,
    /// `max_iterations` defaults to the largest snapshot iteration when the
    /// field is left out of the config.
    #[serde(default)]
    pub signature: Option<SignatureConfig>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {}", self.delta)));
        }
        if self.n_intervals == 0 {
            return Err(Error::InvalidInput("n_intervals must be >= 1".into()));
        }
        if self.iteration_counts.is_empty() {
            return Err(Error::InvalidInput("iteration_counts must not be empty".into()));
        }
        if self.iteration_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("iteration_counts must be strictly ascending".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods requested".into()));
        }
        if let Some(c) = self.control_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidInput("control_clip must be positive".into()));
            }
        }
        let model = self.model.build()?;
        if self.y0.len() != model.dim_state() {
            return Err(Error::DimensionMismatch { expected: model.dim_state(), found: self.y0.len() });
        }
        self.integrator.validate()?;
        self.newton.validate()?;
        self.signature_config().validate()
    }

    pub fn max_iterations(&self) -> usize {
        *self.iteration_counts.last().unwrap_or(&0)
    }

    pub fn sweeps(&self) -> usize {
        self.newton_sweeps.unwrap_or_else(|| self.max_iterations())
    }

    pub fn signature_config(&self) -> SignatureConfig {
        self.signature
            .unwrap_or(SignatureConfig { max_iterations: self.max_iterations(), ..SignatureConfig::default() })
    }

    /// This experiment with every default written out.
    pub fn resolved(&self) -> Self {
        let mut s = self.clone();
        s.newton_sweeps = Some(self.sweeps());
        s.signature = Some(self.signature_config());
        s
    }

    pub fn y0_point(&self) -> Point {
        Point::from_column_slice(&self.y0)
    }
}

/// Random control with `dim` coordinates, slopes `tan(u)` with `u` uniform.
/// Angles are drawn interval by interval, so a longer control with the same
/// seed extends a shorter one.
pub fn random_control(delta: f64, n: usize, seed: u64, clip: Option<f64>, dim: usize) -> Result<PiecewiseLinearPath> {
    if dim == 1 {
        return crate::path::generate_random_control(delta, n, seed, clip);
    }
    let flat = crate::path::generate_random_control(delta, n * dim, seed, clip)?.slopes()?;
    let slopes: Vec<Point> = flat.chunks(dim).map(|ch| Point::from_iterator(dim, ch.iter().map(|c| c[0]))).collect();
    PiecewiseLinearPath::from_slopes(Point::zeros(dim), delta, &slopes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub control: PiecewiseLinearPath,
    pub observations: ObservationGrid,
    pub seed_used: u64,
    pub attempts: usize,
}

/// Draw a control and propagate it through the model. Controls that leave
/// the model domain are redrawn with seed+1, up to [`MAX_ATTEMPTS`] times.
pub fn simulate(spec: &ExperimentSpec) -> Result<Simulation> {
    spec.validate()?;
    let model = spec.model.build()?;
    simulate_with(&*model, spec)
}

fn simulate_with(model: &dyn VectorField, spec: &ExperimentSpec) -> Result<Simulation> {
    let y0 = spec.y0_point();
    for attempt in 0..MAX_ATTEMPTS {
        let seed = spec.seed.wrapping_add(attempt as u64);
        let control = random_control(spec.delta, spec.n_intervals, seed, spec.control_clip, model.dim_control())?;
        match propagate(model, &y0, &control.slopes()?, spec.delta, &spec.integrator) {
            Ok(p) => {
                return Ok(Simulation {
                    control,
                    observations: ObservationGrid::new(spec.delta, p.knots)?,
                    seed_used: seed,
                    attempts: attempt + 1,
                })
            }
            Err(e) if e.is_domain() => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible { attempts: MAX_ATTEMPTS, first_seed: spec.seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub path: PiecewiseLinearPath,
    pub report: Option<ErrorReport>,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub trace: Option<IterationTrace>,
    pub snapshots: Vec<Snapshot>,
    pub failure: Option<String>,
    pub runtime_secs: f64,
}

/// Run every requested method on the observations; snapshot the
/// reconstructions and, when the true control is known, their errors.
pub fn invert(
    spec: &ExperimentSpec,
    obs: &ObservationGrid,
    truth: Option<&PiecewiseLinearPath>,
) -> Result<BTreeMap<Method, MethodOutcome>> {
    spec.validate()?;
    let model = spec.model.build()?;
    if (obs.delta() - spec.delta).abs() > 1e-12 * spec.delta || obs.num_intervals() != spec.n_intervals {
        return Err(Error::InvalidInput(format!(
            "observations (delta {}, N {}) do not match the experiment grid (delta {}, N {})",
            obs.delta(),
            obs.num_intervals(),
            spec.delta,
            spec.n_intervals
        )));
    }
    let mut out = BTreeMap::new();
    for &method in &spec.methods {
        let start = Instant::now();
        let result = match method {
            Method::Newton => newton::reconstruct(&*model, obs, spec.sweeps(), &spec.newton, &spec.integrator),
            Method::Signature => signature::reconstruct(&*model, obs, &spec.signature_config(), &spec.integrator),
        };
        let runtime_secs = start.elapsed().as_secs_f64();
        let outcome = match result.and_then(|mut trace| {
            if let Some(t) = truth {
                trace.attach_errors(t)?;
            }
            let snapshots = snapshots(&trace, &spec.iteration_counts, truth)?;
            Ok((trace, snapshots))
        }) {
            Ok((trace, snapshots)) => {
                MethodOutcome { method, trace: Some(trace), snapshots, failure: None, runtime_secs }
            }
            Err(e) => {
                MethodOutcome { method, trace: None, snapshots: vec![], failure: Some(e.to_string()), runtime_secs }
            }
        };
        out.insert(method, outcome);
    }
    Ok(out)
}

fn snapshots(trace: &IterationTrace, counts: &[usize], truth: Option<&PiecewiseLinearPath>) -> Result<Vec<Snapshot>> {
    counts
        .iter()
        .map(|&n| {
            let path = trace
                .path_at(n)
                .ok_or_else(|| Error::InvalidInput(format!("no reconstruction recorded at iteration {n}")))?;
            let report = truth.map(|t| path_error(t, &path)).transpose()?;
            Ok(Snapshot { iteration: n, path, report })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotSummary {
    pub iteration: usize,
    #[serde(flatten)]
    pub error: Option<ErrorSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub iterations_run: usize,
    pub converged: bool,
    pub max_final_residual: Option<f64>,
    pub flags: Vec<IntervalFlag>,
    pub snapshots: Vec<SnapshotSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ExperimentSpec,
    pub seed_requested: u64,
    pub seed_used: Option<u64>,
    pub attempts: Option<usize>,
    pub methods: BTreeMap<Method, MethodSummary>,
}

pub fn summarize(outcomes: &BTreeMap<Method, MethodOutcome>) -> BTreeMap<Method, MethodSummary> {
    outcomes
        .iter()
        .map(|(&m, o)| {
            let trace = o.trace.as_ref();
            let summary = MethodSummary {
                status: if o.failure.is_some() { "failed" } else { "ok" },
                failure: o.failure.clone(),
                iterations_run: trace.map_or(0, |t| t.iterations_run),
                converged: trace.is_some_and(|t| t.converged),
                max_final_residual: trace.and_then(|t| t.final_residuals.iter().copied().reduce(f64::max)),
                flags: trace.map(|t| t.flags.clone()).unwrap_or_default(),
                snapshots: o
                    .snapshots
                    .iter()
                    .map(|s| SnapshotSummary {
                        iteration: s.iteration,
                        error: s.report.as_ref().map(ErrorReport::summary),
                    })
                    .collect(),
            };
            (m, summary)
        })
        .collect()
}

/// Where [`write_outcomes`] put things.
pub fn method_dir(out: &Path, method: Method) -> PathBuf {
    out.join(method.as_str())
}

/// Per method: `reconstruction_n{K}.csv` and, when errors are known,
/// `error_curve_n{K}.csv`.
pub fn write_outcomes(out: &Path, outcomes: &BTreeMap<Method, MethodOutcome>) -> Result<()> {
    for (&m, o) in outcomes {
        let dir = method_dir(out, m);
        fs::create_dir_all(&dir)?;
        for s in &o.snapshots {
            fs::write(dir.join(format!("reconstruction_n{}.csv", s.iteration)), s.path.to_csv())?;
            if let Some(r) = &s.report {
                fs::write(dir.join(format!("error_curve_n{}.csv", s.iteration)), r.to_csv())?;
            }
        }
    }
    Ok(())
}

pub fn write_runtimes(out: &Path, outcomes: &BTreeMap<Method, MethodOutcome>, total_secs: f64) -> Result<()> {
    let methods: BTreeMap<Method, f64> = outcomes.iter().map(|(&m, o)| (m, o.runtime_secs)).collect();
    let json = serde_json::json!({ "methods_secs": methods, "total_secs": total_secs });
    fs::write(out.join("runtime.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    Ok(())
}

#[derive(Debug)]
pub struct ExperimentRun {
    pub exit_code: i32,
    pub simulation: Option<Simulation>,
    pub outcomes: BTreeMap<Method, MethodOutcome>,
}

/// Full pipeline: simulate, invert, write artifacts into `out`.
///
/// Writes `control_true.csv`, `observations.csv`, per-method snapshot CSVs,
/// `summary.json` (deterministic) and `runtime.json` (wall-clock timings).
/// Exit code 2 when no feasible control was found, 3 when a method failed.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentRun> {
    spec.validate()?;
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let resolved = spec.resolved();
    let sim = match simulate(spec) {
        Ok(s) => s,
        Err(e @ Error::Infeasible { .. }) => {
            let summary = Summary {
                config: resolved,
                seed_requested: spec.seed,
                seed_used: None,
                attempts: Some(MAX_ATTEMPTS),
                methods: BTreeMap::new(),
            };
            let mut json = serde_json::to_value(&summary)?;
            json["error"] = serde_json::Value::String(e.to_string());
            fs::write(out.join("summary.json"), serde_json::to_string_pretty(&json)? + "\n")?;
            return Ok(ExperimentRun { exit_code: EXIT_INFEASIBLE, simulation: None, outcomes: BTreeMap::new() });
        }
        Err(e) => return Err(e),
    };
    fs::write(out.join("control_true.csv"), sim.control.to_csv())?;
    fs::write(out.join("observations.csv"), sim.observations.to_csv())?;

    let outcomes = invert(spec, &sim.observations, Some(&sim.control))?;
    write_outcomes(out, &outcomes)?;
    let summary = Summary {
        config: resolved,
        seed_requested: spec.seed,
        seed_used: Some(sim.seed_used),
        attempts: Some(sim.attempts),
        methods: summarize(&outcomes),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write_runtimes(out, &outcomes, start.elapsed().as_secs_f64())?;

    let exit_code = if outcomes.values().any(|o| o.failure.is_some()) { EXIT_METHOD_FAILURE } else { EXIT_OK };
    Ok(ExperimentRun { exit_code, simulation: Some(sim), outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric_spec() -> ExperimentSpec {
        ExperimentSpec::from_json(
            r#"{"model": {"name": "geometric", "params": {}}, "delta": 0.1, "n_intervals": 10, "y0": [1.0],
                "seed": 5, "iteration_counts": [1, 5, 20]}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_are_materialized() {
        let r = geometric_spec().resolved();
        assert_eq!(r.newton_sweeps, Some(20));
        assert_eq!(r.signature.unwrap().max_iterations, 20);
        assert_eq!(r.methods, vec![Method::Newton, Method::Signature]);
        assert_eq!(r.integrator, IntegratorConfig::default());
    }

    #[test]
    fn spec_validation() {
        let mut s = geometric_spec();
        s.iteration_counts = vec![3, 1];
        assert!(s.validate().is_err());
        let mut s = geometric_spec();
        s.y0 = vec![1.0, 2.0];
        assert!(s.validate().is_err());
        assert!(ExperimentSpec::from_json(r#"{"model": {"name": "geometric", "params": {}}, "delta": 0.1}"#).is_err());
    }

    #[test]
    fn geometric_observations_stay_positive() {
        for seed in 0..5 {
            let s = ExperimentSpec { seed, control_clip: None, ..geometric_spec() };
            let sim = simulate(&s).unwrap();
            assert_eq!(sim.attempts, 1);
            assert!(sim.observations.values().iter().all(|y| y[0] > 0.0));
        }
    }

    #[test]
    fn constant_field_observations_are_cumulative_sums() {
        let s = ExperimentSpec::from_json(
            r#"{"model": {"name": "constant", "params": {"matrix": [[1.0]]}}, "delta": 0.1,
                "n_intervals": 6, "y0": [0.5], "seed": 9, "iteration_counts": [1]}"#,
        )
        .unwrap();
        let sim = simulate(&s).unwrap();
        for (y, x) in sim.observations.values().iter().zip(sim.control.knot_values()) {
            assert!((y[0] - (0.5 + x[0])).abs() < 1e-9 * (1.0 + x[0].abs()));
        }
        let out = invert(&s, &sim.observations, Some(&sim.control)).unwrap();
        for o in out.values() {
            assert!(o.snapshots[0].report.as_ref().unwrap().sup_error < 1e-9);
        }
    }

    #[test]
    fn infeasible_spec_is_reported() {
        // a floor above the initial value makes every draw fail
        let s = ExperimentSpec::from_json(
            r#"{"model": {"name": "cir", "params": {"a": 0.1, "b": 0.05, "sigma": 0.05, "floor": 0.05}},
                "delta": 0.1, "n_intervals": 50, "y0": [0.04], "seed": 1, "iteration_counts": [1]}"#,
        )
        .unwrap();
        assert!(matches!(simulate(&s), Err(Error::Infeasible { attempts: 100, .. })));
        let dir = tempfile::tempdir().unwrap();
        let run = run_experiment(&s, dir.path()).unwrap();
        assert_eq!(run.exit_code, EXIT_INFEASIBLE);
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn observation_grid_must_match() {
        let s = geometric_spec();
        let obs = ObservationGrid::from_scalars(0.2, &[1.0; 11]).unwrap();
        assert!(invert(&s, &obs, None).is_err());
    }

    #[test]
    fn multi_dimensional_controls_extend_scalar_draws() {
        let a = random_control(0.1, 3, 4, None, 2).unwrap();
        let b = crate::path::generate_random_control(0.1, 6, 4, None).unwrap();
        let flat: Vec<f64> = a.slopes().unwrap().iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).collect();
        let scalar: Vec<f64> = b.slopes().unwrap().iter().map(|c| c[0]).collect();
        assert_eq!(flat, scalar);
    }
}
