//! Piecewise-linear paths and observation grids.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Point, Result};

/// Relative tolerance used when checking that knot times are equally spaced.
const SPACING_RTOL: f64 = 1e-9;

/// A continuous path that is linear between consecutive knots.
///
/// Knots are stored explicitly so non-homogeneous partitions stay
/// representable; [`PiecewiseLinearPath::slopes`] requires equal spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    knot_times: Vec<f64>,
    knot_values: Vec<Point>,
    dim: usize,
    // Set by `from_slopes`, so that `slopes()` returns the generating slopes
    // bit for bit instead of re-deriving them from rounded knot differences.
    generating_slopes: Option<Vec<Point>>,
}

/// The partition `{0, δ, ..., Nδ}` and the observed response on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    delta: f64,
    values: Vec<Point>,
    dim: usize,
}

fn check_finite(p: &Point, what: &str) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries: {:?}", p.as_slice())))
    }
}

/// Knot times `k·δ` for `k = 0..=n`, each computed by a single multiplication.
pub fn grid_times(delta: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 * delta).collect()
}

impl PiecewiseLinearPath {
    pub fn new(knot_times: Vec<f64>, knot_values: Vec<Point>) -> Result<Self> {
        if knot_times.is_empty() {
            return Err(Error::InvalidInput("path needs at least one knot".into()));
        }
        if knot_times.len() != knot_values.len() {
            return Err(Error::InvalidInput(format!(
                "{} knot times but {} knot values",
                knot_times.len(),
                knot_values.len()
            )));
        }
        if knot_times[0] != 0.0 {
            return Err(Error::InvalidInput(format!("first knot time is {}, expected 0", knot_times[0])));
        }
        if let Some(i) = knot_times.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidInput(format!("knot times not strictly increasing at index {}", i + 1)));
        }
        let dim = knot_values[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("path dimension must be positive".into()));
        }
        for v in &knot_values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            check_finite(v, "knot value")?;
        }
        Ok(Self { knot_times, knot_values, dim, generating_slopes: None })
    }

    /// Path starting at `start` whose k-th segment on `[(k-1)δ, kδ]` has slope `slopes[k-1]`.
    pub fn from_slopes(start: Point, delta: f64, slopes: &[Point]) -> Result<Self> {
        if slopes.is_empty() {
            return Err(Error::InvalidInput("slope sequence is empty".into()));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {delta}")));
        }
        check_finite(&start, "start point")?;
        let dim = start.len();
        let mut values = Vec::with_capacity(slopes.len() + 1);
        values.push(start);
        for c in slopes {
            if c.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: c.len() });
            }
            check_finite(c, "slope")?;
            let next = values.last().unwrap() + c * delta;
            values.push(next);
        }
        let mut path = Self::new(grid_times(delta, slopes.len()), values)?;
        path.generating_slopes = Some(slopes.to_vec());
        Ok(path)
    }

    /// The piecewise-linear interpolation of the observations.
    pub fn interpolate_observations(obs: &ObservationGrid) -> Self {
        Self::new(obs.times(), obs.values.clone()).expect("observation grid invariants hold")
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn knot_values(&self) -> &[Point] {
        &self.knot_values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_segments(&self) -> usize {
        self.knot_times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.knot_times.last().unwrap()
    }

    pub fn evaluate(&self, t: f64) -> Result<Point> {
        let end = self.final_time();
        if !(0.0..=end).contains(&t) {
            return Err(Error::OutOfRange { t, end });
        }
        // first knot strictly after t
        let i = self.knot_times.partition_point(|&s| s <= t);
        if i == 0 {
            unreachable!("t >= 0 = knot_times[0]");
        }
        let left = i - 1;
        if self.knot_times[left] == t || i == self.knot_times.len() {
            return Ok(self.knot_values[left].clone());
        }
        let (t0, t1) = (self.knot_times[left], self.knot_times[i]);
        let w = (t - t0) / (t1 - t0);
        let (v0, v1) = (&self.knot_values[left], &self.knot_values[i]);
        Ok(v0 + (v1 - v0) * w)
    }

    /// Common spacing of the knots, or an error if they are not equally spaced.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.knot_times.len() < 2 {
            return Err(Error::InvalidInput("path has a single knot".into()));
        }
        let delta = self.knot_times[1];
        for (k, &t) in self.knot_times.iter().enumerate() {
            if (t - k as f64 * delta).abs() > SPACING_RTOL * delta * (k.max(1) as f64) {
                return Err(Error::NonUniformGrid { index: k });
            }
        }
        Ok(delta)
    }

    /// Segment slopes `c_k = (x_k - x_{k-1}) / δ` of an equally spaced path.
    pub fn slopes(&self) -> Result<Vec<Point>> {
        let delta = self.uniform_step()?;
        if let Some(s) = &self.generating_slopes {
            return Ok(s.clone());
        }
        Ok(self.knot_values.windows(2).map(|w| (&w[1] - &w[0]) / delta).collect())
    }

    /// Exact sup-norm distance between two paths on the same time interval.
    ///
    /// The difference of two piecewise-linear paths is linear between
    /// consecutive points of the merged knot set, so its norm is maximised
    /// at one of those points.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sup_distance_with_time(other)?.0)
    }

    /// Like [`sup_distance`](Self::sup_distance), also returning the first time
    /// at which the maximum is attained.
    pub fn sup_distance_with_time(&self, other: &Self) -> Result<(f64, f64)> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let (ta, tb) = (self.final_time(), other.final_time());
        if (ta - tb).abs() > 1e-12 * ta.abs().max(tb.abs()).max(1.0) {
            return Err(Error::InvalidInput(format!("paths end at different times ({ta} vs {tb})")));
        }
        let mut times: Vec<f64> = self.knot_times.iter().chain(other.knot_times.iter()).map(|&t| t.min(ta)).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut best = (0.0_f64, 0.0_f64);
        for t in times {
            let d = (self.evaluate(t)? - other.evaluate(t.min(tb))?).norm();
            if d > best.0 {
                best = (d, t);
            }
        }
        Ok(best)
    }

    /// Write `t,x1,...,xm` CSV rows.
    pub fn to_csv(&self) -> String {
        crate::io::points_to_csv("x", &self.knot_times, &self.knot_values)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (times, values) = crate::io::points_from_csv(text)?;
        Self::new(times, values)
    }
}

impl ObservationGrid {
    pub fn new(delta: f64, values: Vec<Point>) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {delta}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidInput("need at least two observations (N >= 1)".into()));
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("observation dimension must be positive".into()));
        }
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            check_finite(v, "observation")?;
        }
        Ok(Self { delta, values, dim })
    }

    /// Scalar observations, one per knot.
    pub fn from_scalars(delta: f64, values: &[f64]) -> Result<Self> {
        Self::new(delta, values.iter().map(|&v| Point::from_element(1, v)).collect())
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of intervals `N`.
    pub fn num_intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        self.num_intervals() as f64 * self.delta
    }

    pub fn initial(&self) -> &Point {
        &self.values[0]
    }

    pub fn times(&self) -> Vec<f64> {
        grid_times(self.delta, self.num_intervals())
    }

    pub fn to_csv(&self) -> String {
        crate::io::points_to_csv("y", &self.times(), &self.values)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (times, values) = crate::io::points_from_csv(text)?;
        let path = PiecewiseLinearPath::new(times, values)?;
        let delta = path.uniform_step()?;
        Self::new(delta, path.knot_values)
    }
}

/// Slopes `tan(u_k)`, optionally truncated to `[-clip, clip]`.
pub fn slopes_from_uniforms(angles: &[f64], clip: Option<f64>) -> Vec<Point> {
    angles
        .iter()
        .map(|&u| {
            let mut c = u.tan();
            if let Some(b) = clip {
                c = c.clamp(-b, b);
            }
            Point::from_element(1, c)
        })
        .collect()
}

/// Scalar random control starting at 0 with slopes `tan(u_k)`,
/// `u_k` i.i.d. uniform on `(-π/2, π/2)`. The slopes are standard Cauchy.
pub fn generate_random_control(
    delta: f64,
    n_intervals: usize,
    seed: u64,
    clip: Option<f64>,
) -> Result<PiecewiseLinearPath> {
    if n_intervals == 0 {
        return Err(Error::InvalidInput("need at least one interval".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles: Vec<f64> = (0..n_intervals)
        .map(|_| loop {
            // open interval: v = 0 would give u = -π/2
            let v: f64 = rng.random();
            if v > 0.0 {
                break (2.0 * v - 1.0) * FRAC_PI_2;
            }
        })
        .collect();
    PiecewiseLinearPath::from_slopes(Point::zeros(1), delta, &slopes_from_uniforms(&angles, clip))
}
