//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS/FAIL line; exits nonzero on failure.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cde_inverse::experiment::{run_experiment, simulate, ExperimentSpec, Simulation};
use cde_inverse::field::{make_cev, make_cir, make_constant, make_geometric, Linear};
use cde_inverse::metrics::{path_error, slope_error, uniformity_ratio};
use cde_inverse::ode::{flow, flow_with_sensitivity, propagate};
use cde_inverse::path::generate_random_control;
use cde_inverse::signature::{initialize_slopes, reconstruct_with};
use cde_inverse::{
    newton, IntegratorConfig, IterationTrace, Matrix, NewtonConfig, ObservationGrid, PiecewiseLinearPath, Point,
    SignatureConfig, VectorField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CIR_PRESET: &str = include_str!("../presets/cir.json");
const CEV_PRESET: &str = include_str!("../presets/cev_desk.json");
const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: &str, title: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> (bool, String) {
    let start = Instant::now();
    let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(body))
        .unwrap_or_else(|_| Outcome { pass: false, detail: "panicked".into() });
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    let timing = if in_time {
        format!("{:.2}s", elapsed.as_secs_f64())
    } else {
        format!("{:.2}s exceeds {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    };
    (pass, format!("criterion {id} {}: {title} [{timing}] {}", if pass { "PASS" } else { "FAIL" }, out.detail))
}

/// Max over iterations and knots of `|δ Σ_{j≤k} Δc_j − δ r_k| / (1e-12 k)`.
#[derive(Default, Clone, Copy)]
struct Telescoping {
    worst: f64,
    steps: usize,
}

impl Telescoping {
    fn merge(self, o: Telescoping) -> Telescoping {
        Telescoping { worst: self.worst.max(o.worst), steps: self.steps + o.steps }
    }
}

fn signature_traced(
    field: &dyn VectorField,
    obs: &ObservationGrid,
    cfg: &SignatureConfig,
    integ: &IntegratorConfig,
) -> (IterationTrace, Telescoping) {
    let delta = obs.delta();
    let mut prev = initialize_slopes(field, obs, cfg.quadrature_nodes).unwrap();
    let mut tele = Telescoping::default();
    let trace = reconstruct_with(field, obs, cfg, integ, |_, step| {
        let mut acc = Point::zeros(field.dim_control());
        for (k, ((new, old), r)) in step.slopes.iter().zip(&prev).zip(&step.corrections).enumerate() {
            acc += (new - old) * delta;
            let gap = (&acc - r * delta).amax();
            tele.worst = tele.worst.max(gap / (1e-12 * (k + 1) as f64));
        }
        tele.steps += 1;
        prev = step.slopes.clone();
    })
    .unwrap();
    (trace, tele)
}

struct SeedRun {
    sim: Simulation,
    newton: IterationTrace,
    signature: IterationTrace,
    tele: Telescoping,
}

fn run_seed(spec: &ExperimentSpec) -> SeedRun {
    let sim = simulate(spec).unwrap();
    let field = spec.model.build().unwrap();
    let newton =
        newton::reconstruct(&*field, &sim.observations, spec.sweeps(), &spec.newton, &spec.integrator).unwrap();
    let (signature, tele) = signature_traced(&*field, &sim.observations, &spec.signature_config(), &spec.integrator);
    SeedRun { sim, newton, signature, tele }
}

fn run_seeds(base: &ExperimentSpec, n_intervals: Option<usize>) -> Vec<SeedRun> {
    std::thread::scope(|s| {
        let handles: Vec<_> = SEEDS
            .map(|seed| {
                let mut spec = base.clone();
                spec.seed = seed;
                if let Some(n) = n_intervals {
                    spec.n_intervals = n;
                }
                s.spawn(move || run_seed(&spec))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn sup_at(trace: &IterationTrace, truth: &PiecewiseLinearPath, n: usize) -> f64 {
    trace.error_at(truth, n).unwrap().unwrap().sup_error
}

fn ratio_at(trace: &IterationTrace, truth: &PiecewiseLinearPath, n: usize) -> f64 {
    uniformity_ratio(&trace.error_at(truth, n).unwrap().unwrap()).unwrap()
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(" "))
}

/// Checks (a) and (b) shared by the CIR and CEV reproductions.
fn comparative(runs: &[SeedRun], early: usize, late: usize) -> (Outcome, Telescoping) {
    let mut converging = 0;
    let (mut sig_ratios, mut nr_ratios) = (Vec::new(), Vec::new());
    let mut tele = Telescoping::default();
    for r in runs {
        let truth = &r.sim.control;
        if sup_at(&r.signature, truth, late) < sup_at(&r.signature, truth, early) {
            converging += 1;
        }
        sig_ratios.push(ratio_at(&r.signature, truth, late));
        nr_ratios.push(ratio_at(&r.newton, truth, late));
        tele = tele.merge(r.tele);
    }
    let sig_uniform = sig_ratios.iter().filter(|&&x| x <= 3.0).count();
    let nr_growing = nr_ratios.iter().filter(|&&x| x >= 2.0).count();
    let pass = converging >= 9 && sig_uniform >= 8 && nr_growing >= 8;
    let detail = format!(
        "(a) signature e(n={late}) < e(n={early}) in {converging}/10; (b) signature ratio <= 3 in {sig_uniform}/10 {}, \
         newton ratio >= 2 in {nr_growing}/10 {}",
        fmt_list(&sig_ratios),
        fmt_list(&nr_ratios)
    );
    (Outcome { pass, detail }, tele)
}

fn geometric_oracle_run() -> (Outcome, Telescoping) {
    let field = make_geometric();
    let delta = 0.1;
    let integ = IntegratorConfig::rk4(50);
    let control = generate_random_control(delta, 20, 11, Some(3.0)).unwrap();
    let obs = ObservationGrid::new(
        delta,
        propagate(&field, &Point::from_element(1, 1.0), &control.slopes().unwrap(), delta, &integ).unwrap().knots,
    )
    .unwrap();
    let ys = obs.values();
    let oracle: Vec<Point> = ys.windows(2).map(|w| Point::from_element(1, (w[1][0] / w[0][0]).ln() / delta)).collect();
    let oracle_path = PiecewiseLinearPath::from_slopes(Point::zeros(1), delta, &oracle).unwrap();

    let cfg = SignatureConfig { quadrature_nodes: 64, max_iterations: 5, ..SignatureConfig::default() };
    let (sig, tele) = signature_traced(&field, &obs, &cfg, &integ);
    let sig_err = sup_at(&sig, &oracle_path, 5);

    let nr = newton::reconstruct(&field, &obs, 50, &NewtonConfig::default(), &integ).unwrap();
    let nr_slope_err = nr.slopes_at(50).unwrap().iter().zip(&oracle).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);

    let pass = sig_err < 1e-6 && nr_slope_err < 1e-10;
    let detail =
        format!("signature sup error {sig_err:.2e} (< 1e-6), newton max slope error {nr_slope_err:.2e} (< 1e-10)");
    (Outcome { pass, detail }, tele)
}

fn sensitivity_probes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let integ = IntegratorConfig::default();
    let h = 1e-5;
    let cir = make_cir(0.1, 0.05, 0.05);
    let cev = make_cev(0.05, 0.15, 1.5);
    let cases: [(&dyn VectorField, f64, (f64, f64)); 2] = [(&cir, 0.1, (0.01, 0.2)), (&cev, 0.01, (0.3, 3.0))];
    let mut worst: f64 = 0.0;
    for (field, delta, (lo, hi)) in cases {
        for _ in 0..20 {
            let y = Point::from_element(1, rng.random_range(lo..hi));
            let c = rng.random_range(-3.0..3.0);
            let g = flow_with_sensitivity(field, &y, &Point::from_element(1, c), delta, &integ)
                .unwrap()
                .sensitivity
                .unwrap()[(0, 0)];
            let fp = flow(field, &y, &Point::from_element(1, c + h), delta, &integ).unwrap().terminal_value[0];
            let fm = flow(field, &y, &Point::from_element(1, c - h), delta, &integ).unwrap().terminal_value[0];
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((g - fd).abs() / fd.abs());
        }
    }
    Outcome { pass: worst < 1e-4, detail: format!("max relative error {worst:.2e} over 40 probes (< 1e-4)") }
}

fn uniform_in_n(base: &ExperimentSpec) -> Outcome {
    let long = run_seeds(base, None);
    let short: Vec<SeedRun> = std::thread::scope(|s| {
        let handles: Vec<_> = long
            .iter()
            .map(|r| {
                let mut spec = base.clone();
                spec.seed = r.sim.seed_used;
                spec.n_intervals = base.n_intervals / 2;
                s.spawn(move || run_seed(&spec))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let n = base.max_iterations();
    let (mut sig_growth, mut nr_growth) = (Vec::new(), Vec::new());
    for (l, s) in long.iter().zip(&short) {
        assert_eq!(&l.sim.observations.values()[..=s.sim.observations.num_intervals()], s.sim.observations.values());
        sig_growth.push(sup_at(&l.signature, &l.sim.control, n) / sup_at(&s.signature, &s.sim.control, n));
        nr_growth.push(sup_at(&l.newton, &l.sim.control, n) / sup_at(&s.newton, &s.sim.control, n));
    }
    let sig_ok = sig_growth.iter().filter(|&&x| x <= 2.0).count();
    let nr_ok = nr_growth.iter().filter(|&&x| x >= 1.5).count();
    Outcome {
        pass: sig_ok >= 8 && nr_ok >= 8,
        detail: format!(
            "signature growth <= 2 in {sig_ok}/10 {}, newton growth >= 1.5 in {nr_ok}/10 {}",
            fmt_list(&sig_growth),
            fmt_list(&nr_growth)
        ),
    }
}

fn metric_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut dense_gap, mut slope_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        // Grid sizes dividing 9999 put every knot on the dense sample grid.
        let n = [1, 3, 9, 11, 33, 99][rng.random_range(0..6)];
        let delta = rng.random_range(0.01..0.5);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Point> {
            (0..n).map(|_| Point::from_element(1, rng.random_range(-5.0..5.0))).collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let pa = PiecewiseLinearPath::from_slopes(Point::zeros(1), delta, &a).unwrap();
        let pb = PiecewiseLinearPath::from_slopes(Point::zeros(1), delta, &b).unwrap();
        let report = path_error(&pa, &pb).unwrap();
        let t_end = pa.final_time();
        let dense = (0..10_000)
            .map(|i| {
                let t = (t_end * i as f64 / 9_999.0).min(t_end);
                (pa.evaluate(t).unwrap() - pb.evaluate(t).unwrap()).amax()
            })
            .fold(0.0, f64::max);
        let gap = (report.sup_error - dense).abs();
        dense_gap = dense_gap.max(gap);
        slope_gap = slope_gap.max((slope_error(&a, &b, delta).unwrap() - report.sup_error).abs());
    }
    Outcome {
        pass: dense_gap <= 1e-12 && slope_gap <= 1e-12,
        detail: format!(
            "knot-max vs dense gap {dense_gap:.1e}, slope_error vs path_error gap {slope_gap:.1e} (<= 1e-12)"
        ),
    }
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let mut names: Vec<_> = fs::read_dir(&presets).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for preset in &names {
        let spec = ExperimentSpec::load(preset).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_experiment(&spec, d.path()).unwrap();
        }
        let (fa, fb) = (files_under(dirs[0].path()), files_under(dirs[1].path()));
        if fa != fb {
            mismatches.push(format!("{}: file sets differ", preset.display()));
            continue;
        }
        for f in fa.iter().filter(|f| f.as_os_str() != "runtime.json") {
            compared += 1;
            if fs::read(dirs[0].path().join(f)).unwrap() != fs::read(dirs[1].path().join(f)).unwrap() {
                mismatches.push(f.display().to_string());
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty() && compared > 0,
        detail: format!("{} presets, {compared} files compared, mismatches: {mismatches:?}", names.len()),
    }
}

fn degenerate_guards() -> Outcome {
    let integ = IntegratorConfig::default();
    let delta = 0.1;
    let m = Matrix::from_row_slice(2, 2, &[2.0, 0.5, -0.3, 1.5]);
    let field = make_constant(m.clone());
    let slopes: Vec<Point> = (0..8).map(|k| Point::from_vec(vec![k as f64 - 3.0, 1.5 - 0.25 * k as f64])).collect();
    let truth = PiecewiseLinearPath::from_slopes(Point::zeros(2), delta, &slopes).unwrap();
    let obs = ObservationGrid::new(delta, propagate(&field, &Point::zeros(2), &slopes, delta, &integ).unwrap().knots)
        .unwrap();
    let nr = newton::reconstruct(&field, &obs, 1, &NewtonConfig::default(), &integ).unwrap();
    let sig_cfg = SignatureConfig { max_iterations: 1, ..SignatureConfig::default() };
    let (sig, _) = signature_traced(&field, &obs, &sig_cfg, &integ);
    let nr_err = sup_at(&nr, &truth, 1);
    let sig_err = sup_at(&sig, &truth, 1);
    let constant_ok = nr_err < 1e-12 && sig_err < 1e-12;

    let rank = Linear.validate(&[Point::from_element(1, 0.0), Point::from_element(1, 1.0)]);
    let rank_ok = !rank.passed;

    let cir = make_cir(0.1, 0.05, 0.05);
    let at_floor = ObservationGrid::from_scalars(delta, &[0.04, cir.floor, 0.03]).unwrap();
    let sig_floor = reconstruct_with(&cir, &at_floor, &SignatureConfig::default(), &integ, |_, _| {});
    let nr_floor = newton::reconstruct(&cir, &at_floor, 10, &NewtonConfig::default(), &integ);
    let floor_ok = matches!(&sig_floor, Err(e) if e.is_domain()) && matches!(&nr_floor, Err(e) if e.is_domain());

    Outcome {
        pass: constant_ok && rank_ok && floor_ok,
        detail: format!(
            "constant field one-step errors newton {nr_err:.1e} signature {sig_err:.1e}; rank failure rejected: {rank_ok}; \
             floor observation -> domain error: {floor_ok}"
        ),
    }
}

fn main() -> ExitCode {
    let cir = ExperimentSpec::from_json(CIR_PRESET).unwrap();
    let cev = ExperimentSpec::from_json(CEV_PRESET).unwrap();
    let mut results = Vec::new();
    let mut tele = Telescoping::default();

    results.push(check("1", "geometric closed-form oracle", Duration::from_secs(5), || {
        let (o, t) = geometric_oracle_run();
        tele = tele.merge(t);
        o
    }));
    results.push(check(
        "2",
        "sensitivity vs central differences (CIR, CEV)",
        Duration::from_secs(2),
        sensitivity_probes,
    ));
    let mut cir_runs = Vec::new();
    let c4 = check("4", "CIR comparative reproduction, 10 seeds", Duration::from_secs(600), || {
        cir_runs = run_seeds(&cir, None);
        let (o, t) = comparative(&cir_runs, 3, 300);
        tele = tele.merge(t);
        o
    });
    results.push(check("3", "telescoping identity on criterion 1 and 4 runs", Duration::from_secs(1), || Outcome {
        pass: tele.steps > 0 && tele.worst <= 1.0,
        detail: format!("{} iterations, worst |lhs - rhs| / (1e-12 k) = {:.3}", tele.steps, tele.worst),
    }));
    results.push(c4);
    results.push(check("5", "uniform-in-N behaviour, N=25 vs N=50", Duration::from_secs(600), || uniform_in_n(&cir)));
    results.push(check("6", "CEV desk-scale reproduction, 10 seeds", Duration::from_secs(600), || {
        comparative(&run_seeds(&cev, None), 10, 100).0
    }));
    results.push(check("7", "metric consistency", Duration::from_secs(60), metric_consistency));
    results.push(check("8", "bitwise determinism of bundled presets", Duration::from_secs(600), determinism));
    results.push(check("9", "degenerate guards", Duration::from_secs(10), degenerate_guards));

    results.sort_by(|a, b| a.1.cmp(&b.1));
    for (_, line) in &results {
        println!("{line}");
    }
    let failed = results.iter().filter(|r| !r.0).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
