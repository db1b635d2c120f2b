//! Vector-field models `y ↦ (g(y), f(y))` for `dY = g(Y) dt + f(Y) dX`.
//!
//! `f(y)` is the `d×m` diffusion matrix acting on the unknown control, `g` an
//! optional known drift (the time-driven coordinate of the control). The
//! inverters assume `d = m` and `f(y)` invertible on the domain.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Point, Result};

pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-12;
pub const DEFAULT_DET_THRESHOLD: f64 = 1e-12;

/// A controlled vector field together with its spatial derivatives.
pub trait VectorField: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn dim_state(&self) -> usize;
    fn dim_control(&self) -> usize;

    /// Whether `y` lies in the domain where the model is defined.
    fn in_domain(&self, y: &Point) -> bool;

    /// `f(y)`, a `d×m` matrix. Only called on domain points.
    fn diffusion_unchecked(&self, y: &Point) -> Matrix;

    /// `∂f(y)/∂y` as `m` matrices of size `d×d`: entry `j` is the Jacobian
    /// of the `j`-th column of `f`.
    fn diffusion_gradient_unchecked(&self, y: &Point) -> Vec<Matrix>;

    /// Known drift `g(y)`, if any.
    fn drift_unchecked(&self, _y: &Point) -> Option<Point> {
        None
    }

    fn drift_jacobian_unchecked(&self, _y: &Point) -> Option<Matrix> {
        None
    }

    fn has_drift(&self) -> bool {
        false
    }

    /// Relative determinant threshold below which `f(y)` counts as singular.
    fn det_threshold(&self) -> f64 {
        DEFAULT_DET_THRESHOLD
    }

    fn check_domain(&self, y: &Point) -> Result<()> {
        if y.len() != self.dim_state() {
            return Err(Error::DimensionMismatch { expected: self.dim_state(), found: y.len() });
        }
        if y.iter().all(|v| v.is_finite()) && self.in_domain(y) {
            Ok(())
        } else {
            Err(Error::Domain { model: self.name().to_string(), value: y.as_slice().to_vec() })
        }
    }

    fn diffusion(&self, y: &Point) -> Result<Matrix> {
        self.check_domain(y)?;
        Ok(self.diffusion_unchecked(y))
    }

    fn diffusion_gradient(&self, y: &Point) -> Result<Vec<Matrix>> {
        self.check_domain(y)?;
        Ok(self.diffusion_gradient_unchecked(y))
    }

    fn drift(&self, y: &Point) -> Result<Option<Point>> {
        self.check_domain(y)?;
        Ok(self.drift_unchecked(y))
    }

    /// Velocity `g(y) + f(y)·c` of the interval flow with slope `c`.
    fn apply(&self, y: &Point, c: &Point) -> Result<Point> {
        self.check_domain(y)?;
        if c.len() != self.dim_control() {
            return Err(Error::DimensionMismatch { expected: self.dim_control(), found: c.len() });
        }
        let mut v = self.diffusion_unchecked(y) * c;
        if let Some(g) = self.drift_unchecked(y) {
            v += g;
        }
        Ok(v)
    }

    /// `A(y;c) = Σ_j c_j ∂f_{·j}/∂y + ∂g/∂y`, the Jacobian of `apply(·, c)`.
    fn coefficient_matrix(&self, y: &Point, c: &Point) -> Result<Matrix> {
        self.check_domain(y)?;
        let d = self.dim_state();
        let mut a = Matrix::zeros(d, d);
        for (j, grad) in self.diffusion_gradient_unchecked(y).iter().enumerate() {
            a += grad * c[j];
        }
        if let Some(jg) = self.drift_jacobian_unchecked(y) {
            a += jg;
        }
        Ok(a)
    }

    /// `f(y)^{-1}`; fails when `f(y)` is (numerically) singular.
    fn inverse_diffusion(&self, y: &Point) -> Result<Matrix> {
        let f = self.diffusion(y)?;
        invert_checked(&f, self.det_threshold()).map_err(|det| Error::SingularDiffusion { determinant: det })
    }

    /// `f(y)^{-1} g(y)`, the drift expressed in control units (zero without drift).
    fn drift_in_control_units(&self, y: &Point) -> Result<Point> {
        let inv = self.inverse_diffusion(y)?;
        Ok(match self.drift_unchecked(y) {
            Some(g) => inv * g,
            None => Point::zeros(self.dim_control()),
        })
    }

    /// Check the invertibility condition on a set of probe points.
    fn validate(&self, probes: &[Point]) -> ValidationReport {
        let d = self.dim_state();
        let m = self.dim_control();
        let points = probes
            .iter()
            .map(|y| {
                if self.check_domain(y).is_err() {
                    return ProbeResult {
                        point: y.as_slice().to_vec(),
                        in_domain: false,
                        rank: 0,
                        condition_number: f64::INFINITY,
                        ok: false,
                    };
                }
                let f = self.diffusion_unchecked(y);
                let svd = f.clone().svd(false, false);
                let sv = &svd.singular_values;
                let smax = sv.max();
                let tol = smax.max(1.0) * 1e-12 * d.max(m) as f64;
                let rank = sv.iter().filter(|&&s| s > tol).count();
                let smin = sv.min();
                ProbeResult {
                    point: y.as_slice().to_vec(),
                    in_domain: true,
                    rank,
                    condition_number: if smin > 0.0 { smax / smin } else { f64::INFINITY },
                    ok: rank == d && d == m,
                }
            })
            .collect::<Vec<_>>();
        ValidationReport { model: self.name().to_string(), passed: points.iter().all(|p| p.ok), points }
    }
}

/// Inverse of a square matrix, or `Err(|det|)` if the determinant is below
/// `rel_threshold · max(1, max|entry|)^n`.
pub(crate) fn invert_checked(f: &Matrix, rel_threshold: f64) -> std::result::Result<Matrix, f64> {
    if !f.is_square() {
        return Err(0.0);
    }
    let n = f.nrows();
    if n == 1 {
        let v = f[(0, 0)];
        let scale = v.abs().max(1.0);
        if !(v.abs() > rel_threshold * scale) || !v.is_finite() {
            return Err(v.abs());
        }
        return Ok(Matrix::from_element(1, 1, 1.0 / v));
    }
    let lu = f.clone().lu();
    let det = lu.determinant();
    let scale = f.amax().max(1.0).powi(n as i32);
    if !(det.abs() > rel_threshold * scale) || !det.is_finite() {
        return Err(det.abs());
    }
    lu.try_inverse().ok_or(det.abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub point: Vec<f64>,
    pub in_domain: bool,
    pub rank: usize,
    pub condition_number: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub passed: bool,
    pub points: Vec<ProbeResult>,
}

/// Cox-Ingersoll-Ross: `dY = a(b - Y) dt + σ √Y dX`, domain `Y > floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub floor: f64,
}

impl VectorField for Cir {
    fn name(&self) -> &str {
        "cir"
    }
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_control(&self) -> usize {
        1
    }
    fn in_domain(&self, y: &Point) -> bool {
        y[0] > self.floor
    }
    fn diffusion_unchecked(&self, y: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.sigma * y[0].sqrt())
    }
    fn diffusion_gradient_unchecked(&self, y: &Point) -> Vec<Matrix> {
        vec![Matrix::from_element(1, 1, 0.5 * self.sigma / y[0].sqrt())]
    }
    fn drift_unchecked(&self, y: &Point) -> Option<Point> {
        Some(Point::from_element(1, self.a * (self.b - y[0])))
    }
    fn drift_jacobian_unchecked(&self, _y: &Point) -> Option<Matrix> {
        Some(Matrix::from_element(1, 1, -self.a))
    }
    fn has_drift(&self) -> bool {
        true
    }
}

/// Constant elasticity of variance: `dY = μY dt + σ Y^γ dX`, domain `Y > floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cev {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub floor: f64,
}

impl VectorField for Cev {
    fn name(&self) -> &str {
        "cev"
    }
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_control(&self) -> usize {
        1
    }
    fn in_domain(&self, y: &Point) -> bool {
        y[0] > self.floor
    }
    fn diffusion_unchecked(&self, y: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.sigma * y[0].powf(self.gamma))
    }
    fn diffusion_gradient_unchecked(&self, y: &Point) -> Vec<Matrix> {
        vec![Matrix::from_element(1, 1, self.sigma * self.gamma * y[0].powf(self.gamma - 1.0))]
    }
    fn drift_unchecked(&self, y: &Point) -> Option<Point> {
        Some(Point::from_element(1, self.mu * y[0]))
    }
    fn drift_jacobian_unchecked(&self, _y: &Point) -> Option<Matrix> {
        Some(Matrix::from_element(1, 1, self.mu))
    }
    fn has_drift(&self) -> bool {
        true
    }
}

/// `f(y) = diag(y)`, no drift, domain `y > 0` componentwise. Flows are
/// `y·exp(cδ)`, which makes it the closed-form test model.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometric {
    pub dim: usize,
}

impl VectorField for Geometric {
    fn name(&self) -> &str {
        "geometric"
    }
    fn dim_state(&self) -> usize {
        self.dim
    }
    fn dim_control(&self) -> usize {
        self.dim
    }
    fn in_domain(&self, y: &Point) -> bool {
        y.iter().all(|&v| v > 0.0)
    }
    fn diffusion_unchecked(&self, y: &Point) -> Matrix {
        Matrix::from_diagonal(y)
    }
    fn diffusion_gradient_unchecked(&self, _y: &Point) -> Vec<Matrix> {
        (0..self.dim)
            .map(|j| {
                let mut m = Matrix::zeros(self.dim, self.dim);
                m[(j, j)] = 1.0;
                m
            })
            .collect()
    }
}

/// Constant diffusion `f ≡ F`, no drift, whole space as domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub matrix: Matrix,
}

impl VectorField for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn dim_state(&self) -> usize {
        self.matrix.nrows()
    }
    fn dim_control(&self) -> usize {
        self.matrix.ncols()
    }
    fn in_domain(&self, _y: &Point) -> bool {
        true
    }
    fn diffusion_unchecked(&self, _y: &Point) -> Matrix {
        self.matrix.clone()
    }
    fn diffusion_gradient_unchecked(&self, _y: &Point) -> Vec<Matrix> {
        vec![Matrix::zeros(self.dim_state(), self.dim_state()); self.dim_control()]
    }
}

/// Scalar field `f(y) = y` used as a probe for rank failure at the origin;
/// domain is all of R.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear;

impl VectorField for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_control(&self) -> usize {
        1
    }
    fn in_domain(&self, _y: &Point) -> bool {
        true
    }
    fn diffusion_unchecked(&self, y: &Point) -> Matrix {
        Matrix::from_element(1, 1, y[0])
    }
    fn diffusion_gradient_unchecked(&self, _y: &Point) -> Vec<Matrix> {
        vec![Matrix::from_element(1, 1, 1.0)]
    }
}

pub fn make_cir(a: f64, b: f64, sigma: f64) -> Cir {
    Cir { a, b, sigma, floor: DEFAULT_POSITIVITY_FLOOR }
}

pub fn make_cev(mu: f64, sigma: f64, gamma: f64) -> Cev {
    Cev { mu, sigma, gamma, floor: DEFAULT_POSITIVITY_FLOOR }
}

pub fn make_geometric() -> Geometric {
    Geometric { dim: 1 }
}

pub fn make_constant(matrix: Matrix) -> Constant {
    Constant { matrix }
}

fn default_floor() -> f64 {
    DEFAULT_POSITIVITY_FLOOR
}

fn default_dim() -> usize {
    1
}

/// Model selection in experiment configs: `{"name": "cir", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "lowercase")]
pub enum ModelSpec {
    Cir {
        a: f64,
        b: f64,
        sigma: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Cev {
        mu: f64,
        sigma: f64,
        gamma: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Geometric {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Row-major matrix rows.
    Constant { matrix: Vec<Vec<f64>> },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn VectorField>> {
        Ok(match *self {
            ModelSpec::Cir { a, b, sigma, floor } => Box::new(Cir { a, b, sigma, floor }),
            ModelSpec::Cev { mu, sigma, gamma, floor } => Box::new(Cev { mu, sigma, gamma, floor }),
            ModelSpec::Geometric { dim } => {
                if dim == 0 {
                    return Err(Error::InvalidInput("geometric model needs dim >= 1".into()));
                }
                Box::new(Geometric { dim })
            }
            ModelSpec::Constant { ref matrix } => {
                let rows = matrix.len();
                let cols = matrix.first().map_or(0, Vec::len);
                if rows == 0 || cols == 0 || matrix.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidInput("constant model needs a non-empty rectangular matrix".into()));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Box::new(Constant { matrix: Matrix::from_row_slice(rows, cols, &flat) })
            }
        })
    }
}
