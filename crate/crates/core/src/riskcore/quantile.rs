use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_alpha, var_rank, RiskError};
use crate::csvio::{self, fmt_f64};

/// Distributions with a closed-form quantile function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticDistribution {
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
}

impl AnalyticDistribution {
    pub fn validate(&self) -> Result<(), RiskError> {
        let ok = match *self {
            AnalyticDistribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            AnalyticDistribution::Exponential { rate } => rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(RiskError::Distribution(format!("invalid parameters {self:?}")))
        }
    }

    /// Inverse CDF at `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            AnalyticDistribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            AnalyticDistribution::Exponential { rate } => -(1.0 - u).ln() / rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTrendRow {
    pub alpha: f64,
    pub batch_size: usize,
    pub trials: usize,
    pub true_quantile: f64,
    pub mean_abs_error: f64,
    /// Standard error of `mean_abs_error` across trials.
    pub std_error: f64,
}

/// Mean |ξ̂ − ξ*| of the order-statistic quantile estimate for every
/// (α, B) pair, α-major.
pub fn quantile_error_trend<R: Rng + ?Sized>(
    dist: &AnalyticDistribution,
    alphas: &[f64],
    batch_sizes: &[usize],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<QuantileTrendRow>, RiskError> {
    dist.validate()?;
    if trials == 0 || batch_sizes.contains(&0) {
        return Err(RiskError::EmptyBatch);
    }
    let mut rows = Vec::with_capacity(alphas.len() * batch_sizes.len());
    let mut buf = Vec::new();
    for &alpha in alphas {
        check_alpha(alpha)?;
        let truth = dist.quantile(alpha);
        for &b in batch_sizes {
            let rank = var_rank(alpha, b);
            let mut errs = Vec::with_capacity(trials);
            for _ in 0..trials {
                buf.clear();
                buf.extend((0..b).map(|_| dist.sample(rng)));
                let (_, xi_hat, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
                errs.push((*xi_hat - truth).abs());
            }
            let n = trials as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var = if trials > 1 { errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            rows.push(QuantileTrendRow {
                alpha,
                batch_size: b,
                trials,
                true_quantile: truth,
                mean_abs_error: mean,
                std_error: (var / n).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// For each α, successive batch sizes (in table order) must not increase the
/// error by more than two combined standard errors.
pub fn trend_is_nonincreasing(rows: &[QuantileTrendRow]) -> bool {
    rows.windows(2).filter(|w| w[0].alpha == w[1].alpha).all(|w| {
        let slack = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].mean_abs_error <= w[0].mean_abs_error + slack
    })
}

/// Columns: alpha,batch_size,trials,true_quantile,mean_abs_error,std_error
pub fn write_trend_csv(path: &Path, rows: &[QuantileTrendRow]) -> io::Result<()> {
    csvio::write_rows(
        path,
        &["alpha", "batch_size", "trials", "true_quantile", "mean_abs_error", "std_error"],
        rows.iter().map(|r| {
            [
                fmt_f64(r.alpha),
                r.batch_size.to_string(),
                r.trials.to_string(),
                fmt_f64(r.true_quantile),
                fmt_f64(r.mean_abs_error),
                fmt_f64(r.std_error),
            ]
        }),
    )
}
