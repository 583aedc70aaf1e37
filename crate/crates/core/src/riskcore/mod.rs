//! Tail-risk estimation over a batch of per-task losses.
//!
//! VaR is the ⌈αB⌉-th order statistic (the smallest loss whose empirical CDF
//! reaches α). The tail used for CVaR and for screening is the
//! `k = max(1, ⌊(1−α)B⌋)` largest losses, ties broken towards the smaller
//! task index.

mod principle;
mod quantile;
mod sandwich;

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use principle::{PrincipleConfig, PrincipleKind};
pub use quantile::{quantile_error_trend, trend_is_nonincreasing, write_trend_csv, AnalyticDistribution, QuantileTrendRow};
pub use sandwich::{sandwich_check, sandwich_check_with, DiscreteDistribution, SandwichReport};

/// Absorbs representation error in products like `0.7 * 10` before
/// rounding to an integer count.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("risk batch is empty")]
    EmptyBatch,
    #[error("alpha must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("loss for task {task_index} is not finite")]
    NonFiniteLoss { task_index: usize },
    #[error("task index {0} appears twice")]
    DuplicateTask(usize),
    #[error("probabilities sum to {0}, expected 1")]
    Probabilities(f64),
    #[error("invalid distribution: {0}")]
    Distribution(String),
}

pub fn check_alpha(alpha: f64) -> Result<(), RiskError> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(RiskError::InvalidAlpha(alpha))
    }
}

/// `max(1, ⌊(1−α)·B⌋)`
pub fn tail_size(alpha: f64, batch_size: usize) -> usize {
    (((1.0 - alpha) * batch_size as f64 + COUNT_EPS).floor() as usize).clamp(1, batch_size.max(1))
}

/// 1-based rank `max(1, ⌈α·B⌉)` of the VaR order statistic.
pub fn var_rank(alpha: f64, batch_size: usize) -> usize {
    ((alpha * batch_size as f64 - COUNT_EPS).ceil().max(1.0) as usize).min(batch_size.max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub task_index: usize,
    pub loss: f64,
}

/// Per-task losses of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskBatch {
    entries: Vec<RiskEntry>,
}

impl RiskBatch {
    pub fn new(entries: Vec<RiskEntry>) -> Result<Self, RiskError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.loss.is_finite() {
                return Err(RiskError::NonFiniteLoss { task_index: e.task_index });
            }
            if !seen.insert(e.task_index) {
                return Err(RiskError::DuplicateTask(e.task_index));
            }
        }
        Ok(Self { entries })
    }

    /// Task indices `0..n` in order.
    pub fn from_losses(losses: &[f64]) -> Result<Self, RiskError> {
        Self::new(losses.iter().enumerate().map(|(task_index, &loss)| RiskEntry { task_index, loss }).collect())
    }

    pub fn entries(&self) -> &[RiskEntry] {
        &self.entries
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().map(|e| e.loss).sum::<f64>() / self.entries.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.loss).fold(f64::NEG_INFINITY, f64::max)
    }

    fn non_empty(&self) -> Result<(), RiskError> {
        if self.entries.is_empty() {
            Err(RiskError::EmptyBatch)
        } else {
            Ok(())
        }
    }

    /// Positions sorted by (loss descending, task index ascending).
    fn descending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&self.entries[i], &self.entries[j]);
            b.loss.total_cmp(&a.loss).then(a.task_index.cmp(&b.task_index))
        });
        order
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarEstimate {
    pub xi_hat: f64,
    pub alpha: f64,
    pub batch_size: usize,
}

pub fn estimate_var(batch: &RiskBatch, alpha: f64) -> Result<VarEstimate, RiskError> {
    batch.non_empty()?;
    check_alpha(alpha)?;
    let mut losses = batch.losses();
    losses.sort_by(f64::total_cmp);
    let rank = var_rank(alpha, losses.len());
    Ok(VarEstimate { xi_hat: losses[rank - 1], alpha, batch_size: losses.len() })
}

/// The screened tail of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TailSelection {
    /// Task indices, worst first.
    pub selected: Vec<usize>,
    /// Positions of the selected entries in the batch, worst first.
    pub positions: Vec<usize>,
    pub k: usize,
    pub var: VarEstimate,
}

pub fn screen_tail(batch: &RiskBatch, alpha: f64) -> Result<TailSelection, RiskError> {
    let var = estimate_var(batch, alpha)?;
    let k = tail_size(alpha, batch.len());
    let positions: Vec<usize> = batch.descending_order().into_iter().take(k).collect();
    let selected = positions.iter().map(|&p| batch.entries[p].task_index).collect();
    Ok(TailSelection { selected, positions, k, var })
}

/// Mean of the screened tail.
pub fn cvar_estimate(batch: &RiskBatch, alpha: f64) -> Result<f64, RiskError> {
    let tail = screen_tail(batch, alpha)?;
    // Summation in batch order, so k = B reproduces the plain mean bit for bit.
    let mut pos = tail.positions;
    pos.sort_unstable();
    let sum: f64 = pos.iter().map(|&p| batch.entries[p].loss).sum();
    Ok(sum / tail.k as f64)
}

/// ξ + (1/((1−α)·B))·Σ max(ℓᵢ − ξ, 0)
pub fn surrogate_value(batch: &RiskBatch, xi: f64, alpha: f64) -> Result<f64, RiskError> {
    batch.non_empty()?;
    check_alpha(alpha)?;
    let hinge: f64 = batch.entries.iter().map(|e| (e.loss - xi).max(0.0)).sum();
    Ok(xi + hinge / ((1.0 - alpha) * batch.len() as f64))
}

/// max{(2−α)/(1−α), α/(1−α)}
pub fn kappa(alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    Ok(((2.0 - alpha) / (1.0 - alpha)).max(alpha / (1.0 - alpha)))
}

/// Softmax of losses/temperature, computed after subtracting the maximum.
pub fn group_dro_weights(batch: &RiskBatch, temperature: f64) -> Result<Vec<f64>, RiskError> {
    batch.non_empty()?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(RiskError::InvalidTemperature(temperature));
    }
    let max = batch.max();
    let exps: Vec<f64> = batch.entries.iter().map(|e| ((e.loss - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Right-continuous step function `F̂(ξ) = #{ℓᵢ ≤ ξ}/B`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn eval(&self, xi: f64) -> f64 {
        let count = self.sorted.partition_point(|&v| v.total_cmp(&xi) != Ordering::Greater);
        count as f64 / self.sorted.len() as f64
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

pub fn empirical_cdf(batch: &RiskBatch) -> Result<EmpiricalCdf, RiskError> {
    batch.non_empty()?;
    let mut sorted = batch.losses();
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[f64]) -> RiskBatch {
        RiskBatch::from_losses(v).unwrap()
    }

    #[test]
    fn var_examples() {
        assert_eq!(estimate_var(&b(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap().xi_hat, 2.0);
        assert_eq!(estimate_var(&b(&[7.0]), 0.9).unwrap().xi_hat, 7.0);
        assert_eq!(estimate_var(&b(&[4.0, 3.0, 2.0, 1.0]), 0.0).unwrap().xi_hat, 1.0);
        assert_eq!(estimate_var(&RiskBatch::from_losses(&[]).unwrap(), 0.5), Err(RiskError::EmptyBatch));
        assert!(estimate_var(&b(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn counts_absorb_representation_error() {
        // (1 − 0.9)·100 = 9.999999999999998 in f64
        assert_eq!(tail_size(0.9, 100), 10);
        assert_eq!(tail_size(0.7, 490), 147);
        // 0.7·10 = 7.000000000000001 in f64
        assert_eq!(var_rank(0.7, 10), 7);
        assert_eq!(tail_size(0.99, 25), 1);
    }

    #[test]
    fn screen_examples() {
        let t = screen_tail(&b(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap();
        assert_eq!(t.k, 2);
        assert_eq!(t.selected, vec![3, 2]);
        assert_eq!(screen_tail(&b(&[1.0, 2.0, 3.0, 4.0]), 0.0).unwrap().k, 4);
        let ties = RiskBatch::new(vec![
            RiskEntry { task_index: 9, loss: 5.0 },
            RiskEntry { task_index: 4, loss: 5.0 },
            RiskEntry { task_index: 6, loss: 5.0 },
        ])
        .unwrap();
        let t = screen_tail(&ties, 0.9).unwrap();
        assert_eq!((t.k, t.selected.clone()), (1, vec![4]));
    }

    #[test]
    fn cvar_examples() {
        assert_eq!(cvar_estimate(&b(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap(), 3.5);
        assert_eq!(cvar_estimate(&b(&[1.0, 2.0, 3.0, 4.0]), 0.0).unwrap(), 2.5);
        assert_eq!(cvar_estimate(&b(&[7.0]), 0.95).unwrap(), 7.0);
    }

    #[test]
    fn surrogate_examples() {
        let x = b(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(surrogate_value(&x, 2.0, 0.5).unwrap(), 3.5);
        assert_eq!(surrogate_value(&x, 10.0, 0.5).unwrap(), 10.0);
        assert_eq!(surrogate_value(&x, 0.0, 0.0).unwrap(), 2.5);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(0.5).unwrap(), 3.0);
        assert_eq!(kappa(0.0).unwrap(), 2.0);
        assert!((kappa(0.7).unwrap() - 13.0 / 3.0).abs() < 1e-12);
        assert!(kappa(1.0).is_err());
    }

    #[test]
    fn dro_examples() {
        assert_eq!(group_dro_weights(&b(&[0.0, 0.0]), 1.0).unwrap(), vec![0.5, 0.5]);
        let w = group_dro_weights(&b(&[2f64.ln(), 0.0]), 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        for t in [0.1, 1.0, 30.0] {
            for wi in group_dro_weights(&b(&[1.0, 1.0, 1.0]), t).unwrap() {
                assert!((wi - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(group_dro_weights(&b(&[1.0]), 0.0).is_err());
        // Huge losses stay finite.
        let w = group_dro_weights(&b(&[1e6, 0.0]), 1e-3).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn ecdf_examples() {
        let f = empirical_cdf(&b(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(f.eval(2.5), 0.5);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(4.0), 1.0);
        assert_eq!(f.eval(2.0), 0.5);
    }

    #[test]
    fn batch_validation() {
        assert_eq!(RiskBatch::from_losses(&[1.0, f64::NAN]), Err(RiskError::NonFiniteLoss { task_index: 1 }));
        let dup = vec![RiskEntry { task_index: 1, loss: 0.0 }, RiskEntry { task_index: 1, loss: 1.0 }];
        assert_eq!(RiskBatch::new(dup), Err(RiskError::DuplicateTask(1)));
    }

    fn losses_strategy() -> impl Strategy<Value = Vec<f64>> {
        // Integer-valued losses make ties common.
        prop_oneof![
            prop::collection::vec(0.0f64..100.0, 1..200),
            prop::collection::vec((0u8..8).prop_map(f64::from), 1..200),
        ]
    }

    proptest! {
        #[test]
        fn screening_matches_full_sort_oracle(losses in losses_strategy(), alpha in 0.0f64..0.999) {
            let batch = b(&losses);
            let t = screen_tail(&batch, alpha).unwrap();
            let mut oracle: Vec<(f64, usize)> = losses.iter().copied().zip(0..).collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let k = ((1.0 - alpha) * losses.len() as f64 + 1e-9).floor().max(1.0) as usize;
            let expect: Vec<usize> = oracle.iter().take(k).map(|p| p.1).collect();
            prop_assert_eq!(t.selected, expect);
        }

        #[test]
        fn degenerate_alpha_special_cases(losses in losses_strategy()) {
            let batch = b(&losses);
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            prop_assert_eq!(cvar_estimate(&batch, 0.0).unwrap(), mean);
            let alpha_k1 = 1.0 - 0.5 / losses.len() as f64;
            prop_assert_eq!(cvar_estimate(&batch, alpha_k1).unwrap(), batch.max());
        }

        #[test]
        fn surrogate_at_var_vs_cvar(losses in losses_strategy(), alpha in 0.0f64..0.99) {
            let batch = b(&losses);
            let xi = estimate_var(&batch, alpha).unwrap().xi_hat;
            let phi = surrogate_value(&batch, xi, alpha).unwrap();
            let cvar = cvar_estimate(&batch, alpha).unwrap();
            // φ(ξ̂) is the minimum of φ, i.e. the fractional-tail CVaR, and the
            // truncated top-k mean can only sit above it.
            prop_assert!(phi <= cvar + 1e-9 * (1.0 + cvar.abs()));
        }

        #[test]
        fn surrogate_equals_cvar_when_atoms_align(losses in losses_strategy(), k_frac in 1usize..10) {
            let n = losses.len();
            let k = (k_frac * n / 10).max(1);
            let alpha = 1.0 - k as f64 / n as f64;
            prop_assume!(alpha < 1.0);
            let batch = b(&losses);
            let xi = estimate_var(&batch, alpha).unwrap().xi_hat;
            let phi = surrogate_value(&batch, xi, alpha).unwrap();
            let cvar = cvar_estimate(&batch, alpha).unwrap();
            prop_assert!((phi - cvar).abs() <= 1e-9 * (1.0 + cvar.abs()), "phi {} cvar {}", phi, cvar);
        }

        #[test]
        fn surrogate_minimum_sits_at_var(losses in losses_strategy(), alpha in 0.0f64..0.99) {
            let batch = b(&losses);
            let xi_hat = estimate_var(&batch, alpha).unwrap().xi_hat;
            let mut sorted = losses.clone();
            sorted.sort_by(f64::total_cmp);
            let (lo, hi) = (sorted[0] - 1.0, sorted[sorted.len() - 1] + 1.0);
            let grid: Vec<f64> = (0..=4000).map(|i| lo + (hi - lo) * i as f64 / 4000.0).chain(sorted.iter().copied()).collect();
            let phis: Vec<f64> = grid.iter().map(|&x| surrogate_value(&batch, x, alpha).unwrap()).collect();
            let min = phis.iter().copied().fold(f64::INFINITY, f64::min);
            let at_hat = surrogate_value(&batch, xi_hat, alpha).unwrap();
            prop_assert!(at_hat <= min + 1e-9 * (1.0 + min.abs()));
            // the grid argmin lies within one inter-atom gap of ξ̂
            let arg = grid[phis.iter().position(|&p| p == min).unwrap()];
            let pos = sorted.partition_point(|&v| v < xi_hat);
            let below = if pos > 0 { sorted[pos - 1] } else { lo };
            let above = sorted.iter().copied().find(|&v| v > xi_hat).unwrap_or(hi);
            prop_assert!(arg >= below - 1e-9 && arg <= above + 1e-9, "arg {} not in [{}, {}]", arg, below, above);
        }

        #[test]
        fn dro_weights_are_shift_invariant_and_monotone(losses in prop::collection::vec(0.0f64..10.0, 1..50), shift in -100.0f64..100.0, t in 0.05f64..10.0) {
            let w = group_dro_weights(&b(&losses), t).unwrap();
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            let ws = group_dro_weights(&b(&shifted), t).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, c) in w.iter().zip(&ws) {
                prop_assert!((a - c).abs() < 1e-12);
            }
            for i in 0..losses.len() {
                for j in 0..losses.len() {
                    if losses[i] <= losses[j] {
                        prop_assert!(w[i] <= w[j] + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn quadratic_surrogate_is_midpoint_convex(
            centers in prop::collection::vec(-5.0f64..5.0, 2..20),
            t1 in -6.0f64..6.0, t2 in -6.0f64..6.0, alpha in 0.0f64..0.95,
        ) {
            let f = |theta: f64| {
                let losses: Vec<f64> = centers.iter().map(|c| (theta - c).powi(2)).collect();
                let batch = b(&losses);
                let hi = losses.iter().copied().fold(0.0, f64::max);
                // grid plus the atoms themselves, where the minimum lives
                (0..=400).map(|i| hi * i as f64 / 400.0).chain(losses.iter().copied())
                    .map(|xi| surrogate_value(&batch, xi, alpha).unwrap())
                    .fold(f64::INFINITY, f64::min)
            };
            let mid = f(0.5 * (t1 + t2));
            prop_assert!(mid <= 0.5 * (f(t1) + f(t2)) + 1e-9);
        }
    }
}
