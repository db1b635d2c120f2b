use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cde_inverse::experiment::{
    self, run_experiment, summarize, write_outcomes, write_runtimes, ExperimentSpec, Summary, EXIT_INFEASIBLE,
    EXIT_METHOD_FAILURE, EXIT_OK,
};
use cde_inverse::metrics::path_error;
use cde_inverse::{Error, Method, ObservationGrid, PiecewiseLinearPath, Scheme};

/// Reconstruct piecewise-linear CDE controls from discrete observations.
#[derive(Debug, Parser)]
#[command(name = "cde-inverse", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the control seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Integration scheme: euler or rk4.
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    /// Integrator substeps per interval.
    #[arg(long, global = true)]
    substeps: Option<usize>,
    /// Inversion methods (comma separated): newton, signature.
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<Method>,
    /// Snapshot iteration counts (comma separated, ascending).
    #[arg(long, global = true, value_delimiter = ',')]
    iterations: Vec<usize>,
    /// Quadrature nodes per straight segment for the inverse Ito map.
    #[arg(long, global = true)]
    quad_nodes: Option<usize>,
    /// Newton sweeps over all intervals.
    #[arg(long, global = true)]
    sweeps: Option<usize>,
    /// Newton residual tolerance.
    #[arg(long, global = true)]
    newton_tol: Option<f64>,
    /// Newton step damping in (0, 1].
    #[arg(long, global = true)]
    damping: Option<f64>,
    /// Signature stopping tolerance on max |dc| * delta.
    #[arg(long, global = true)]
    sig_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a seeded control and write control_true.csv and observations.csv.
    Simulate,
    /// Invert an observation CSV with the configured methods.
    Invert {
        #[arg(long, value_name = "PATH")]
        observations: PathBuf,
        /// True control CSV; enables error curves.
        #[arg(long, value_name = "PATH")]
        truth: Option<PathBuf>,
    },
    /// Simulate, invert and write every artifact.
    Experiment,
    /// Error report between two control CSVs on the same grid.
    Compare {
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        #[arg(long, value_name = "PATH")]
        approx: PathBuf,
    },
}

impl Global {
    fn load_spec(&self) -> cde_inverse::Result<ExperimentSpec> {
        let path = self.config.as_deref().ok_or_else(|| Error::InvalidInput("--config is required".into()))?;
        let text = fs::read_to_string(path)?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
        self.apply(&mut spec);
        spec.validate()?;
        Ok(spec)
    }

    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(s) = self.scheme {
            spec.integrator.scheme = s;
        }
        if let Some(n) = self.substeps {
            spec.integrator.substeps = n;
        }
        if !self.method.is_empty() {
            spec.methods = self.method.clone();
        }
        if !self.iterations.is_empty() {
            spec.iteration_counts = self.iterations.clone();
            if let Some(sig) = spec.signature.as_mut() {
                sig.max_iterations = sig.max_iterations.max(*self.iterations.last().unwrap());
            }
        }
        if let Some(n) = self.sweeps {
            spec.newton_sweeps = Some(n);
        }
        if let Some(t) = self.newton_tol {
            spec.newton.residual_tolerance = t;
        }
        if let Some(d) = self.damping {
            spec.newton.damping = d;
        }
        if self.quad_nodes.is_some() || self.sig_tol.is_some() {
            let mut sig = spec.signature_config();
            if let Some(q) = self.quad_nodes {
                sig.quadrature_nodes = q;
                spec.newton.quadrature_nodes = q;
            }
            if let Some(t) = self.sig_tol {
                sig.slope_change_tolerance = t;
            }
            spec.signature = Some(sig);
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> cde_inverse::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: &Cli) -> cde_inverse::Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => {
            let spec = g.load_spec()?;
            fs::create_dir_all(&g.out)?;
            let sim = match experiment::simulate(&spec) {
                Ok(s) => s,
                Err(e @ Error::Infeasible { .. }) => {
                    eprintln!("error: {e}");
                    return Ok(EXIT_INFEASIBLE);
                }
                Err(e) => return Err(e),
            };
            fs::write(g.out.join("control_true.csv"), sim.control.to_csv())?;
            fs::write(g.out.join("observations.csv"), sim.observations.to_csv())?;
            let info = serde_json::json!({
                "config": spec.resolved(),
                "seed_requested": spec.seed,
                "seed_used": sim.seed_used,
                "attempts": sim.attempts,
            });
            write_json(&g.out.join("simulation.json"), &info)?;
            println!("seed {} after {} attempt(s); wrote {}", sim.seed_used, sim.attempts, g.out.display());
            Ok(EXIT_OK)
        }
        Command::Invert { observations, truth } => {
            let spec = g.load_spec()?;
            let obs = ObservationGrid::from_csv(&fs::read_to_string(observations)?)?;
            let truth = truth.as_ref().map(|p| PiecewiseLinearPath::from_csv(&fs::read_to_string(p)?)).transpose()?;
            let start = Instant::now();
            let outcomes = experiment::invert(&spec, &obs, truth.as_ref())?;
            fs::create_dir_all(&g.out)?;
            write_outcomes(&g.out, &outcomes)?;
            let summary = Summary {
                config: spec.resolved(),
                seed_requested: spec.seed,
                seed_used: None,
                attempts: None,
                methods: summarize(&outcomes),
            };
            write_json(&g.out.join("summary.json"), &summary)?;
            write_runtimes(&g.out, &outcomes, start.elapsed().as_secs_f64())?;
            report(&summary.methods);
            let failed = outcomes.values().any(|o| o.failure.is_some());
            Ok(if failed { EXIT_METHOD_FAILURE } else { EXIT_OK })
        }
        Command::Experiment => {
            let spec = g.load_spec()?;
            let run = run_experiment(&spec, &g.out)?;
            if run.exit_code == EXIT_INFEASIBLE {
                eprintln!("error: no feasible control within {} seeds from {}", experiment::MAX_ATTEMPTS, spec.seed);
            } else {
                report(&summarize(&run.outcomes));
            }
            Ok(run.exit_code)
        }
        Command::Compare { truth, approx } => {
            let t = PiecewiseLinearPath::from_csv(&fs::read_to_string(truth)?)?;
            let a = PiecewiseLinearPath::from_csv(&fs::read_to_string(approx)?)?;
            let r = path_error(&t, &a)?;
            fs::create_dir_all(&g.out)?;
            fs::write(g.out.join("error_curve.csv"), r.to_csv())?;
            println!("{}", serde_json::to_string_pretty(&r.summary())?);
            Ok(EXIT_OK)
        }
    }
}

fn report(methods: &BTreeMap<Method, experiment::MethodSummary>) {
    for (m, s) in methods {
        if let Some(f) = &s.failure {
            println!("{m}: failed: {f}");
            continue;
        }
        let errs: Vec<String> = s
            .snapshots
            .iter()
            .map(|snap| match &snap.error {
                Some(e) => format!("n={} sup={:.3e}", snap.iteration, e.sup_error),
                None => format!("n={}", snap.iteration),
            })
            .collect();
        println!("{m}: {} iterations, converged={}; {}", s.iterations_run, s.converged, errs.join(", "));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
