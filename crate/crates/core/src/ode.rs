//! Fixed-step integration of the interval flow
//! `Ỹ' = g(Ỹ) + f(Ỹ)·c` and of its sensitivity `Z̃ = ∂Ỹ/∂c`, which solves
//! `Z̃' = A(Ỹ;c)·Z̃ + f(Ỹ)` with `Z̃(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::{Error, Matrix, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            _ => Err(Error::InvalidInput(format!("unknown scheme {s:?} (expected euler or rk4)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    /// Steps of size `δ / substeps` per interval.
    pub substeps: usize,
    pub dense_output: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Rk4, substeps: 50, dense_output: false }
    }
}

impl IntegratorConfig {
    pub fn rk4(substeps: usize) -> Self {
        Self { scheme: Scheme::Rk4, substeps, dense_output: false }
    }

    pub fn euler(substeps: usize) -> Self {
        Self { scheme: Scheme::Euler, substeps, dense_output: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one interval solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    /// `F(δ; y, c)`.
    pub terminal_value: Point,
    /// `G(δ; y, c) = ∂F/∂c` (`d×m`), when requested.
    pub sensitivity: Option<Matrix>,
    /// `(t, Ỹ_t)` at every substep, including `t = 0`, when requested.
    pub dense_output: Option<Vec<(f64, Point)>>,
}

/// Forward Itô map evaluated on the knots of a piecewise-linear control.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub knots: Vec<Point>,
    pub dense_output: Option<Vec<(f64, Point)>>,
}

fn check_inputs<F: VectorField + ?Sized>(
    field: &F,
    y0: &Point,
    c: &Point,
    delta: f64,
    cfg: &IntegratorConfig,
) -> Result<()> {
    cfg.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {delta}")));
    }
    if c.len() != field.dim_control() {
        return Err(Error::DimensionMismatch { expected: field.dim_control(), found: c.len() });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite slope {:?}", c.as_slice())));
    }
    field.check_domain(y0)
}

fn exit_at(time: f64) -> impl Fn(Error) -> Error {
    move |e| Error::DomainExit { time, source: Box::new(e) }
}

/// Right-hand side of the sensitivity equation.
fn sensitivity_rhs<F: VectorField + ?Sized>(field: &F, y: &Point, z: &Matrix, c: &Point) -> Result<Matrix> {
    Ok(field.coefficient_matrix(y, c)? * z + field.diffusion(y)?)
}

fn integrate<F: VectorField + ?Sized>(
    field: &F,
    y0: &Point,
    c: &Point,
    delta: f64,
    cfg: &IntegratorConfig,
    with_sensitivity: bool,
) -> Result<FlowResult> {
    check_inputs(field, y0, c, delta, cfg)?;
    let n = cfg.substeps;
    let h = delta / n as f64;
    let half = 0.5 * h;
    let sixth = h / 6.0;

    let mut y = y0.clone();
    let mut z = with_sensitivity.then(|| Matrix::zeros(field.dim_state(), field.dim_control()));
    let mut dense = cfg.dense_output.then(|| vec![(0.0, y.clone())]);

    for i in 0..n {
        let t = i as f64 * h;
        match cfg.scheme {
            Scheme::Euler => {
                let k1 = field.apply(&y, c).map_err(exit_at(t))?;
                if let Some(z) = z.as_mut() {
                    let l1 = sensitivity_rhs(field, &y, z, c).map_err(exit_at(t))?;
                    *z += l1 * h;
                }
                y += k1 * h;
            }
            Scheme::Rk4 => {
                let k1 = field.apply(&y, c).map_err(exit_at(t))?;
                let y2 = &y + &k1 * half;
                let k2 = field.apply(&y2, c).map_err(exit_at(t + half))?;
                let y3 = &y + &k2 * half;
                let k3 = field.apply(&y3, c).map_err(exit_at(t + half))?;
                let y4 = &y + &k3 * h;
                let k4 = field.apply(&y4, c).map_err(exit_at(t + h))?;
                if let Some(z) = z.as_mut() {
                    let l1 = sensitivity_rhs(field, &y, z, c).map_err(exit_at(t))?;
                    let z2 = &*z + &l1 * half;
                    let l2 = sensitivity_rhs(field, &y2, &z2, c).map_err(exit_at(t + half))?;
                    let z3 = &*z + &l2 * half;
                    let l3 = sensitivity_rhs(field, &y3, &z3, c).map_err(exit_at(t + half))?;
                    let z4 = &*z + &l3 * h;
                    let l4 = sensitivity_rhs(field, &y4, &z4, c).map_err(exit_at(t + h))?;
                    *z += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * sixth;
                }
                y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * sixth;
            }
        }
        let t_next = (i + 1) as f64 * h;
        field.check_domain(&y).map_err(exit_at(t_next))?;
        if let Some(d) = dense.as_mut() {
            d.push((t_next, y.clone()));
        }
    }
    Ok(FlowResult { terminal_value: y, sensitivity: z, dense_output: dense })
}

/// Approximate `F(δ; y0, c)`.
pub fn flow<F: VectorField + ?Sized>(
    field: &F,
    y0: &Point,
    c: &Point,
    delta: f64,
    cfg: &IntegratorConfig,
) -> Result<FlowResult> {
    integrate(field, y0, c, delta, cfg, false)
}

/// Approximate `F(δ; y0, c)` and `G(δ; y0, c)` from the coupled system.
pub fn flow_with_sensitivity<F: VectorField + ?Sized>(
    field: &F,
    y0: &Point,
    c: &Point,
    delta: f64,
    cfg: &IntegratorConfig,
) -> Result<FlowResult> {
    integrate(field, y0, c, delta, cfg, true)
}

/// Chain interval flows: `Ỹ_0 = y0`, `Ỹ_k = F(δ; Ỹ_{k-1}, c_k)`.
pub fn propagate<F: VectorField + ?Sized>(
    field: &F,
    y0: &Point,
    slopes: &[Point],
    delta: f64,
    cfg: &IntegratorConfig,
) -> Result<Propagation> {
    let mut knots = Vec::with_capacity(slopes.len() + 1);
    knots.push(y0.clone());
    let mut dense = cfg.dense_output.then(|| vec![(0.0, y0.clone())]);
    for (i, c) in slopes.iter().enumerate() {
        let res = flow(field, &knots[i], c, delta, cfg).map_err(|e| e.at_interval(i + 1))?;
        if let (Some(all), Some(local)) = (dense.as_mut(), res.dense_output) {
            let t0 = i as f64 * delta;
            all.extend(local.into_iter().skip(1).map(|(t, y)| (t0 + t, y)));
        }
        knots.push(res.terminal_value);
    }
    Ok(Propagation { knots, dense_output: dense })
}
