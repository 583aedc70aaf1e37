use serde::{Deserialize, Serialize};

use super::{check_alpha, group_dro_weights, screen_tail, RiskBatch, RiskError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipleKind {
    /// Plain average over the batch.
    ExpectedRisk,
    /// Only the single worst task of the batch.
    WorstInBatch,
    /// Order-statistic VaR, then the mean of the screened tail.
    CvarTwoStage,
    /// Softmax-of-loss task weights.
    GroupDro,
}

impl PrincipleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PrincipleKind::ExpectedRisk => "expected_risk",
            PrincipleKind::WorstInBatch => "worst_in_batch",
            PrincipleKind::CvarTwoStage => "cvar_two_stage",
            PrincipleKind::GroupDro => "group_dro",
        }
    }
}

fn default_alpha() -> f64 {
    0.7
}
fn default_temperature() -> f64 {
    1.0
}

/// Risk principle. `alpha` drives screening for the CVaR principle and the
/// logged VaR/surrogate diagnostics for every principle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipleConfig {
    pub kind: PrincipleKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl PrincipleConfig {
    pub fn expected_risk() -> Self {
        Self { kind: PrincipleKind::ExpectedRisk, alpha: default_alpha(), temperature: default_temperature() }
    }

    pub fn worst_in_batch() -> Self {
        Self { kind: PrincipleKind::WorstInBatch, ..Self::expected_risk() }
    }

    pub fn cvar(alpha: f64) -> Self {
        Self { kind: PrincipleKind::CvarTwoStage, alpha, ..Self::expected_risk() }
    }

    pub fn group_dro(temperature: f64) -> Self {
        Self { kind: PrincipleKind::GroupDro, temperature, ..Self::expected_risk() }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        check_alpha(self.alpha)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(RiskError::InvalidTemperature(self.temperature));
        }
        Ok(())
    }

    /// One weight per batch entry (same order). Weights are constants with
    /// respect to the parameters.
    pub fn task_weights(&self, batch: &RiskBatch) -> Result<Vec<f64>, RiskError> {
        if batch.is_empty() {
            return Err(RiskError::EmptyBatch);
        }
        self.validate()?;
        let n = batch.len();
        Ok(match self.kind {
            PrincipleKind::ExpectedRisk => vec![1.0 / n as f64; n],
            PrincipleKind::WorstInBatch => {
                let tail = screen_tail(batch, 1.0 - 0.5 / n as f64)?;
                let mut w = vec![0.0; n];
                w[tail.positions[0]] = 1.0;
                w
            }
            PrincipleKind::CvarTwoStage => {
                let tail = screen_tail(batch, self.alpha)?;
                let mut w = vec![0.0; n];
                for &p in &tail.positions {
                    w[p] = 1.0 / tail.k as f64;
                }
                w
            }
            PrincipleKind::GroupDro => group_dro_weights(batch, self.temperature)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_per_principle() {
        let b = RiskBatch::from_losses(&[1.0, 4.0, 3.0, 2.0]).unwrap();
        assert_eq!(PrincipleConfig::expected_risk().task_weights(&b).unwrap(), vec![0.25; 4]);
        assert_eq!(PrincipleConfig::worst_in_batch().task_weights(&b).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(PrincipleConfig::cvar(0.5).task_weights(&b).unwrap(), vec![0.0, 0.5, 0.5, 0.0]);
        let w = PrincipleConfig::group_dro(1.0).task_weights(&b).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[1] > w[2] && w[2] > w[3] && w[3] > w[0]);
    }

    #[test]
    fn cvar_at_zero_matches_expected_risk_weights() {
        let b = RiskBatch::from_losses(&[0.3, 0.1, 0.9, 0.5, 0.7]).unwrap();
        assert_eq!(
            PrincipleConfig::cvar(0.0).task_weights(&b).unwrap(),
            PrincipleConfig::expected_risk().task_weights(&b).unwrap()
        );
    }

    #[test]
    fn toml_shape() {
        let p: PrincipleConfig = toml::from_str("kind = \"cvar_two_stage\"\nalpha = 0.5").unwrap();
        assert_eq!(p, PrincipleConfig::cvar(0.5));
        assert!(toml::from_str::<PrincipleConfig>("kind = \"cvar_two_stage\"\nalfa = 0.5").is_err());
    }
}
