use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{default_range, histogram, EvalError, Histogram, MetricsReport};
use crate::csvio::{self, fmt_f64};
use crate::riskcore::PrincipleKind;

/// One evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Group key, e.g. the principle name or a swept value.
    pub label: String,
    pub principle: PrincipleKind,
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub principle: PrincipleKind,
    pub seed: u64,
    pub alpha_eval: f64,
    pub average: f64,
    pub worst: f64,
    pub cvar: f64,
    /// Label of the run the deltas are taken against.
    pub baseline: String,
    pub delta_average: f64,
    pub delta_worst: f64,
    pub delta_cvar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// One histogram per run, all over the same range.
    pub histograms: Vec<Histogram>,
}

const HEADER: [&str; 12] = [
    "label",
    "principle",
    "seed",
    "alpha_eval",
    "average",
    "worst",
    "cvar",
    "baseline",
    "delta_average",
    "delta_worst",
    "delta_cvar",
    "n_tasks",
];

/// Deltas are against the expected-risk run with the same seed, or, when
/// there is none, against the same-seed run of the first label.
pub fn compare_runs(runs: &[RunResult], n_bins: usize) -> Result<Comparison, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::Compare(format!("need at least 2 runs, got {}", runs.len())));
    }
    let alpha = runs[0].report.alpha_eval;
    if let Some(r) = runs.iter().find(|r| r.report.alpha_eval != alpha) {
        return Err(EvalError::Compare(format!("alpha_eval {} of `{}` differs from {alpha}", r.report.alpha_eval, r.label)));
    }
    let first_label = &runs[0].label;
    let rows = runs
        .iter()
        .map(|r| {
            let base = runs
                .iter()
                .find(|b| b.seed == r.seed && b.principle == PrincipleKind::ExpectedRisk)
                .or_else(|| runs.iter().find(|b| b.seed == r.seed && &b.label == first_label))
                .unwrap_or(&runs[0]);
            ComparisonRow {
                label: r.label.clone(),
                principle: r.principle,
                seed: r.seed,
                alpha_eval: alpha,
                average: r.report.average,
                worst: r.report.worst,
                cvar: r.report.cvar,
                baseline: base.label.clone(),
                delta_average: r.report.average - base.report.average,
                delta_worst: r.report.worst - base.report.worst,
                delta_cvar: r.report.cvar - base.report.cvar,
            }
        })
        .collect();
    let pooled: Vec<f64> = runs.iter().flat_map(|r| r.report.per_task_losses.iter().copied()).collect();
    let range = default_range(&pooled)?;
    let histograms = runs.iter().map(|r| histogram(&r.report.per_task_losses, n_bins, range)).collect::<Result<_, _>>()?;
    Ok(Comparison { rows, histograms })
}

fn file_label(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

impl Comparison {
    /// Writes `comparison.csv` and one `hist_<label>_seed<seed>.csv` per run;
    /// returns the written paths.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let table = dir.join("comparison.csv");
        csvio::write_rows(
            &table,
            &HEADER,
            self.rows.iter().zip(&self.histograms).map(|(r, h)| {
                [
                    r.label.clone(),
                    r.principle.as_str().to_owned(),
                    r.seed.to_string(),
                    fmt_f64(r.alpha_eval),
                    fmt_f64(r.average),
                    fmt_f64(r.worst),
                    fmt_f64(r.cvar),
                    r.baseline.clone(),
                    fmt_f64(r.delta_average),
                    fmt_f64(r.delta_worst),
                    fmt_f64(r.delta_cvar),
                    h.total.to_string(),
                ]
            }),
        )?;
        let mut written = vec![table];
        for (r, h) in self.rows.iter().zip(&self.histograms) {
            let p = dir.join(format!("hist_{}_seed{}.csv", file_label(&r.label), r.seed));
            h.write_csv(&p)?;
            written.push(p);
        }
        Ok(written)
    }

    pub fn read_table(path: &Path) -> io::Result<Vec<ComparisonRow>> {
        let (header, rows) = csvio::read_rows(path)?;
        let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        if header != HEADER {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        rows.iter()
            .map(|r| {
                let f = |i: usize| r[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", HEADER[i])));
                let principle = serde_json::from_value(serde_json::Value::String(r[1].clone())).map_err(|e| bad(e.to_string()))?;
                Ok(ComparisonRow {
                    label: r[0].clone(),
                    principle,
                    seed: r[2].parse().map_err(|e| bad(format!("seed: {e}")))?,
                    alpha_eval: f(3)?,
                    average: f(4)?,
                    worst: f(5)?,
                    cvar: f(6)?,
                    baseline: r[7].clone(),
                    delta_average: f(8)?,
                    delta_worst: f(9)?,
                    delta_cvar: f(10)?,
                })
            })
            .collect()
    }
}
