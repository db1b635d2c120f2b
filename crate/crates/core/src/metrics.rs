//! Error functionals comparing a reconstruction to the true control.

use serde::Serialize;

use crate::io::fmt_f64;
use crate::path::PiecewiseLinearPath;
use crate::{Error, Point, Result};

/// Pointwise comparison of a reconstructed path with the true one on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    /// `sup_t |X_t - X(n)_t|`, attained at a knot.
    pub sup_error: f64,
    pub knot_times: Vec<f64>,
    /// `|X_{kδ} - X(n)_{kδ}|` for `k = 0..=N`.
    pub knot_errors: Vec<f64>,
    /// `|c_k - c(n)_k|` for `k = 1..=N`.
    pub per_interval_slope_errors: Vec<f64>,
    /// First knot time where `sup_error` is attained.
    pub argmax_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub sup_error: f64,
    pub argmax_time: f64,
    /// `None` stands for +∞ (error only in the second half).
    pub uniformity_ratio: Option<f64>,
}

pub fn path_error(true_path: &PiecewiseLinearPath, approx: &PiecewiseLinearPath) -> Result<ErrorReport> {
    if true_path.dim() != approx.dim() {
        return Err(Error::DimensionMismatch { expected: true_path.dim(), found: approx.dim() });
    }
    let (ta, tb) = (true_path.knot_times(), approx.knot_times());
    let same_grid = ta.len() == tb.len() && ta.iter().zip(tb).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
    if !same_grid {
        return Err(Error::InvalidInput("paths are not defined on the same grid".into()));
    }
    let knot_errors: Vec<f64> =
        true_path.knot_values().iter().zip(approx.knot_values()).map(|(a, b)| (a - b).norm()).collect();
    let per_interval_slope_errors = true_path
        .knot_values()
        .windows(2)
        .zip(approx.knot_values().windows(2))
        .zip(ta.windows(2))
        .map(|((a, b), t)| {
            let dt = t[1] - t[0];
            ((&a[1] - &a[0]) / dt - (&b[1] - &b[0]) / dt).norm()
        })
        .collect::<Vec<_>>();
    // exact generating slopes where available
    let per_interval_slope_errors = match (true_path.slopes(), approx.slopes()) {
        (Ok(ca), Ok(cb)) => ca.iter().zip(&cb).map(|(x, y)| (x - y).norm()).collect(),
        _ => per_interval_slope_errors,
    };
    let (mut sup_error, mut arg) = (0.0, 0usize);
    for (k, &e) in knot_errors.iter().enumerate() {
        if e > sup_error {
            sup_error = e;
            arg = k;
        }
    }
    Ok(ErrorReport { sup_error, knot_times: ta.to_vec(), knot_errors, per_interval_slope_errors, argmax_time: ta[arg] })
}

/// `max_k |Σ_{j≤k} (c_j - c(n)_j)| δ`.
pub fn slope_error(true_slopes: &[Point], approx_slopes: &[Point], delta: f64) -> Result<f64> {
    if true_slopes.len() != approx_slopes.len() {
        return Err(Error::DimensionMismatch { expected: true_slopes.len(), found: approx_slopes.len() });
    }
    let Some(first) = true_slopes.first() else {
        return Ok(0.0);
    };
    let mut acc = Point::zeros(first.len());
    let mut worst = 0.0_f64;
    for (a, b) in true_slopes.iter().zip(approx_slopes) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
        }
        // accumulate knot positions the same way `from_slopes` does
        acc += a * delta - b * delta;
        worst = worst.max(acc.norm());
    }
    Ok(worst)
}

/// Max knot error over the second half of `[0, T]` divided by the max over the
/// first half. Knots with `t <= T/2` belong to the first half.
///
/// Returns `f64::INFINITY` when only the second half has nonzero error and `1`
/// when both halves are error free.
pub fn uniformity_ratio(report: &ErrorReport) -> Result<f64> {
    if report.knot_errors.is_empty() {
        return Err(Error::InvalidInput("empty error report".into()));
    }
    let half = 0.5 * report.knot_times.last().copied().unwrap_or(0.0);
    let (mut first, mut second) = (0.0_f64, 0.0_f64);
    for (&t, &e) in report.knot_times.iter().zip(&report.knot_errors) {
        if t <= half {
            first = first.max(e);
        } else {
            second = second.max(e);
        }
    }
    Ok(match (first > 0.0, second > 0.0) {
        (true, _) => second / first,
        (false, true) => f64::INFINITY,
        (false, false) => 1.0,
    })
}

impl ErrorReport {
    /// Rows `k,t,knot_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t,knot_error\n");
        for (k, (t, e)) in self.knot_times.iter().zip(&self.knot_errors).enumerate() {
            out.push_str(&format!("{k},{},{}\n", fmt_f64(*t), fmt_f64(*e)));
        }
        out
    }

    pub fn summary(&self) -> ErrorSummary {
        let ratio = uniformity_ratio(self).unwrap_or(1.0);
        ErrorSummary {
            sup_error: self.sup_error,
            argmax_time: self.argmax_time,
            uniformity_ratio: ratio.is_finite().then_some(ratio),
        }
    }

    /// Reads back `(knot_times, knot_errors)` from [`to_csv`](Self::to_csv) output.
    pub fn curve_from_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "k,t,knot_error" => {}
            other => return Err(Error::Parse(format!("unexpected error-curve header {other:?}"))),
        }
        let mut ts = Vec::new();
        let mut es = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = crate::io::parse_row(line, i + 2)?;
            if row.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 fields", i + 2)));
            }
            ts.push(row[1]);
            es.push(row[2]);
        }
        Ok((ts, es))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<Point> {
        v.iter().map(|&x| Point::from_element(1, x)).collect()
    }

    fn path(slopes: &[f64], delta: f64) -> PiecewiseLinearPath {
        PiecewiseLinearPath::from_slopes(Point::zeros(1), delta, &scalars(slopes)).unwrap()
    }

    #[test]
    fn identical_paths_have_zero_error() {
        let p = path(&[1.0, -2.0, 0.5], 0.1);
        let r = path_error(&p, &p).unwrap();
        assert_eq!(r.sup_error, 0.0);
        assert!(r.knot_errors.iter().chain(&r.per_interval_slope_errors).all(|&e| e == 0.0));
        assert_eq!(uniformity_ratio(&r).unwrap(), 1.0);
    }

    #[test]
    fn single_slope_error_is_cancelled() {
        // η = (1, -1, 0, 0), δ = 0.1
        let truth = path(&[0.0; 4], 0.1);
        let approx = path(&[-1.0, 1.0, 0.0, 0.0], 0.1);
        let r = path_error(&truth, &approx).unwrap();
        let expected = [0.0, 0.1, 0.0, 0.0, 0.0];
        for (a, b) in r.knot_errors.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((r.sup_error - 0.1).abs() < 1e-15);
        assert!((r.argmax_time - 0.1).abs() < 1e-15);
        assert_eq!(r.per_interval_slope_errors, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn slope_error_examples() {
        let c = scalars(&[0.3, -0.2]);
        assert_eq!(slope_error(&c, &c, 0.1).unwrap(), 0.0);
        let e = slope_error(&scalars(&[1.0, 1.0]), &scalars(&[0.0, 0.0]), 0.5).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        assert!(slope_error(&c, &scalars(&[1.0]), 0.1).is_err());
    }

    #[test]
    fn uniformity_examples() {
        let report = |errs: Vec<f64>| {
            let n = errs.len();
            ErrorReport {
                sup_error: errs.iter().copied().fold(0.0, f64::max),
                knot_times: (0..n).map(|k| k as f64).collect(),
                knot_errors: errs,
                per_interval_slope_errors: vec![],
                argmax_time: 0.0,
            }
        };
        assert_eq!(uniformity_ratio(&report(vec![0.3; 11])).unwrap(), 1.0);
        let n = 1000;
        let linear = uniformity_ratio(&report((0..=n).map(|k| k as f64).collect())).unwrap();
        assert!((linear - 2.0).abs() < 0.01, "{linear}");
        assert_eq!(uniformity_ratio(&report(vec![0.0; 5])).unwrap(), 1.0);
        assert_eq!(uniformity_ratio(&report(vec![0.0, 0.0, 0.0, 1.0])).unwrap(), f64::INFINITY);
        assert!(uniformity_ratio(&report(vec![])).is_err());
    }

    #[test]
    fn grid_mismatch_rejected() {
        assert!(path_error(&path(&[1.0, 2.0], 0.1), &path(&[1.0, 2.0], 0.2)).is_err());
        assert!(path_error(&path(&[1.0, 2.0], 0.1), &path(&[1.0], 0.1)).is_err());
    }

    #[test]
    fn error_curve_round_trip() {
        let r = path_error(&path(&[1.0, 2.0, 3.0], 0.1), &path(&[1.5, 2.0, 2.0], 0.1)).unwrap();
        let (t, e) = ErrorReport::curve_from_csv(&r.to_csv()).unwrap();
        assert_eq!(t, r.knot_times);
        assert_eq!(e, r.knot_errors);
    }
}
