use serde::{Deserialize, Serialize};

use crate::metrics::{path_error, ErrorReport};
use crate::path::PiecewiseLinearPath;
use crate::{Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Newton,
    Signature,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::Signature => "signature",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(Method::Newton),
            "signature" => Ok(Method::Signature),
            _ => Err(crate::Error::InvalidInput(format!("unknown method {s:?} (expected newton or signature)"))),
        }
    }
}

/// Warning attached to one interval (1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalFlag {
    pub interval: usize,
    pub message: String,
}

/// Slope vectors recorded over the iterations of either inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub method: Method,
    pub delta: f64,
    /// Iteration index `n` of each entry in `slope_history` (ascending).
    pub iterations: Vec<usize>,
    pub slope_history: Vec<Vec<Point>>,
    /// Sup path error per recorded iteration, once a true control is attached.
    pub error_history: Option<Vec<f64>>,
    pub flags: Vec<IntervalFlag>,
    /// Total iterations performed.
    pub iterations_run: usize,
    pub converged: bool,
    /// Final per-knot residual: `|Y_k - F(δ; Y_{k-1}, c_k)|` for Newton,
    /// `|Y_k - Ỹ_k|` of the last propagation for the signature method.
    pub final_residuals: Vec<f64>,
}

impl IterationTrace {
    pub(crate) fn new(method: Method, delta: f64) -> Self {
        Self {
            method,
            delta,
            iterations: Vec::new(),
            slope_history: Vec::new(),
            error_history: None,
            flags: Vec::new(),
            iterations_run: 0,
            converged: false,
            final_residuals: Vec::new(),
        }
    }

    pub(crate) fn record(&mut self, n: usize, slopes: &[Point]) {
        if self.iterations.last() == Some(&n) {
            *self.slope_history.last_mut().unwrap() = slopes.to_vec();
        } else {
            self.iterations.push(n);
            self.slope_history.push(slopes.to_vec());
        }
    }

    pub fn final_slopes(&self) -> &[Point] {
        self.slope_history.last().map_or(&[], Vec::as_slice)
    }

    /// Slopes after iteration `n`: the latest record at or before `n`.
    /// Runs that stopped early keep their final slopes for all later `n`.
    pub fn slopes_at(&self, n: usize) -> Option<&[Point]> {
        let i = self.iterations.partition_point(|&k| k <= n);
        (i > 0).then(|| self.slope_history[i - 1].as_slice())
    }

    pub fn path_at(&self, n: usize) -> Option<PiecewiseLinearPath> {
        let slopes = self.slopes_at(n)?;
        let dim = slopes.first()?.len();
        PiecewiseLinearPath::from_slopes(Point::zeros(dim), self.delta, slopes).ok()
    }

    pub fn final_path(&self) -> Option<PiecewiseLinearPath> {
        self.path_at(usize::MAX)
    }

    pub fn error_at(&self, truth: &PiecewiseLinearPath, n: usize) -> Option<Result<ErrorReport>> {
        self.path_at(n).map(|p| path_error(truth, &p))
    }

    /// Fill `error_history` with the sup error of every recorded iteration.
    pub fn attach_errors(&mut self, truth: &PiecewiseLinearPath) -> Result<()> {
        let mut errs = Vec::with_capacity(self.iterations.len());
        for &n in &self.iterations {
            let p = self.path_at(n).expect("recorded slopes are non-empty");
            errs.push(path_error(truth, &p)?.sup_error);
        }
        self.error_history = Some(errs);
        Ok(())
    }
}
