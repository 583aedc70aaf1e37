use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::csvio::{self, fmt_f64};
use crate::riskcore::var_rank;

pub const DEFAULT_BINS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` uniform edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl Histogram {
    /// Columns: bin_lo,bin_hi,count
    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        csvio::write_rows(
            path,
            &["bin_lo", "bin_hi", "count"],
            self.counts.iter().enumerate().map(|(i, c)| [fmt_f64(self.edges[i]), fmt_f64(self.edges[i + 1]), c.to_string()]),
        )
    }

    pub fn read_csv(path: &Path) -> io::Result<Self> {
        let (header, rows) = csvio::read_rows(path)?;
        let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        if header != ["bin_lo", "bin_hi", "count"] || rows.is_empty() {
            return Err(bad(format!("not a histogram csv: {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        let mut edges = vec![num(&rows[0][0])?];
        let mut counts = Vec::with_capacity(rows.len());
        for r in &rows {
            edges.push(num(&r[1])?);
            counts.push(r[2].parse::<usize>().map_err(|e| bad(e.to_string()))?);
        }
        Ok(Self { total: counts.iter().sum(), edges, counts })
    }
}

/// Uniform bins over `range`; values outside fall into the end bins.
pub fn histogram(losses: &[f64], n_bins: usize, (lo, hi): (f64, f64)) -> Result<Histogram, EvalError> {
    if n_bins == 0 {
        return Err(EvalError::Histogram("need at least one bin".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(EvalError::Histogram(format!("range [{lo}, {hi}] is empty or not finite")));
    }
    if let Some(v) = losses.iter().find(|v| v.is_nan()) {
        return Err(EvalError::Histogram(format!("cannot bin {v}")));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    edges[n_bins] = hi;
    let mut counts = vec![0; n_bins];
    for &v in losses {
        let i = ((v - lo) / width).floor();
        let i = if i < 0.0 { 0 } else { (i as usize).min(n_bins - 1) };
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts, total: losses.len() })
}

/// `[0, p99]` of the pooled losses; widened to `[0, max]` or `[0, 1]` when
/// the percentile is not positive.
pub fn default_range(pooled: &[f64]) -> Result<(f64, f64), EvalError> {
    if pooled.is_empty() {
        return Err(EvalError::Histogram("no losses".into()));
    }
    let mut s = pooled.to_vec();
    s.sort_by(f64::total_cmp);
    let p99 = s[var_rank(0.99, s.len()) - 1];
    let max = s[s.len() - 1];
    let hi = if p99 > 0.0 {
        p99
    } else if max > 0.0 {
        max
    } else {
        1.0
    };
    Ok((0.0, hi))
}

/// Fraction of `losses` strictly above `threshold`.
pub fn mass_above(losses: &[f64], threshold: f64) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    losses.iter().filter(|&&l| l > threshold).count() as f64 / losses.len() as f64
}
