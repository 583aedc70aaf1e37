use serde::{Deserialize, Serialize};

use super::{check_alpha, kappa, RiskError};

const PROB_TOL: f64 = 1e-12;

/// Finite distribution given as (value, probability) atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    /// Sorted by value.
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, RiskError> {
        if atoms.is_empty() {
            return Err(RiskError::Distribution("no atoms".into()));
        }
        if atoms.iter().any(|&(v, p)| !v.is_finite() || !(p >= 0.0)) {
            return Err(RiskError::Distribution("atoms need finite values and non-negative probabilities".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(RiskError::Probabilities(total));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    pub fn uniform(values: &[f64]) -> Result<Self, RiskError> {
        let p = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&v| (v, p)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Smallest atom whose cumulative probability reaches α.
    pub fn value_at_risk(&self, alpha: f64) -> Result<f64, RiskError> {
        check_alpha(alpha)?;
        let mut cum = 0.0;
        for &(v, p) in &self.atoms {
            cum += p;
            if cum >= alpha - PROB_TOL {
                return Ok(v);
            }
        }
        Ok(self.atoms.last().expect("non-empty").0)
    }

    /// φ(ξ) = ξ + E[(X − ξ)⁺]/(1−α)
    pub fn surrogate(&self, xi: f64, alpha: f64) -> Result<f64, RiskError> {
        check_alpha(alpha)?;
        let hinge: f64 = self.atoms.iter().map(|&(v, p)| p * (v - xi).max(0.0)).sum();
        Ok(xi + hinge / (1.0 - alpha))
    }

    /// Exact CVaR, i.e. φ at the exact VaR.
    pub fn cvar(&self, alpha: f64) -> Result<f64, RiskError> {
        self.surrogate(self.value_at_risk(alpha)?, alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub alpha: f64,
    pub xi_hat: f64,
    pub exact_var: f64,
    pub phi: f64,
    pub exact_cvar: f64,
    pub delta: f64,
    pub kappa: f64,
    /// φ − κ·δ
    pub lower_bound: f64,
    pub holds: bool,
}

/// Checks `φ(ξ̂) − κ·δ < CVaR ≤ φ(ξ̂)` with δ = |ξ̂ − VaR|. At δ = 0 the
/// lower side is satisfied by equality.
pub fn sandwich_check(population: &DiscreteDistribution, xi_hat: f64, alpha: f64) -> Result<SandwichReport, RiskError> {
    sandwich_check_with(population, xi_hat, alpha, kappa)
}

/// As [`sandwich_check`] with a caller-supplied κ.
pub fn sandwich_check_with(
    population: &DiscreteDistribution,
    xi_hat: f64,
    alpha: f64,
    kappa_fn: impl Fn(f64) -> Result<f64, RiskError>,
) -> Result<SandwichReport, RiskError> {
    let exact_var = population.value_at_risk(alpha)?;
    let exact_cvar = population.cvar(alpha)?;
    let phi = population.surrogate(xi_hat, alpha)?;
    let delta = (xi_hat - exact_var).abs();
    let k = kappa_fn(alpha)?;
    let lower_bound = phi - k * delta;
    let tol = 1e-12 * (1.0 + exact_cvar.abs());
    let upper_ok = exact_cvar <= phi + tol;
    let lower_ok = lower_bound < exact_cvar || (delta == 0.0 && (phi - exact_cvar).abs() <= tol);
    Ok(SandwichReport { alpha, xi_hat, exact_var, phi, exact_cvar, delta, kappa: k, lower_bound, holds: upper_ok && lower_ok })
}
