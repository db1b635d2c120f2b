//! CSV helpers. Every number is written with 17 significant digits so that
//! values round-trip exactly.

use std::fmt::Write as _;

use crate::{Error, Point, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `t,{prefix}1,...,{prefix}m` followed by one row per point.
pub fn points_to_csv(prefix: &str, times: &[f64], values: &[Point]) -> String {
    let dim = values.first().map_or(0, |v| v.len());
    let mut out = String::from("t");
    for i in 1..=dim {
        let _ = write!(out, ",{prefix}{i}");
    }
    out.push('\n');
    for (t, v) in times.iter().zip(values) {
        out.push_str(&fmt_f64(*t));
        for x in v.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

/// Parse the format written by [`points_to_csv`] (any column prefix).
pub fn points_from_csv(text: &str) -> Result<(Vec<f64>, Vec<Point>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::Parse(format!("expected header t,x1,...; got {header:?}")));
    }
    let dim = cols.len() - 1;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields = parse_row(line, row + 2)?;
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!("line {}: expected {} fields, got {}", row + 2, dim + 1, fields.len())));
        }
        times.push(fields[0]);
        values.push(Point::from_column_slice(&fields[1..]));
    }
    Ok((times, values))
}

pub(crate) fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {lineno}: {s:?}: {e}"))))
        .collect()
}
