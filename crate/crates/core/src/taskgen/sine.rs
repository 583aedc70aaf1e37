use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Point, TaskData, TaskError};

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, 2.0 * PI);
pub const X_RANGE: (f64, f64) = (-5.0, 5.0);

/// f(x) = a·sin(x − b)
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineTask {
    pub fn new(amplitude: f64, phase: f64) -> Result<Self, TaskError> {
        let ok = (AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1).contains(&amplitude)
            && (PHASE_RANGE.0..=PHASE_RANGE.1).contains(&phase);
        if !ok {
            return Err(TaskError::OutOfRange(format!("sine task a={amplitude}, b={phase}")));
        }
        Ok(Self { amplitude, phase })
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.amplitude * (x - self.phase).sin()
    }

    pub fn points_at(&self, xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| Point::new(x, self.value(x))).collect()
    }
}

fn default_p_hard() -> f64 {
    0.1
}
fn default_easy() -> (f64, f64) {
    (0.1, 1.05)
}
fn default_hard() -> (f64, f64) {
    (4.95, 5.0)
}
fn default_phase() -> (f64, f64) {
    (0.0, PI)
}

/// Training distribution: mostly easy low-amplitude tasks plus a small
/// fraction of hard high-amplitude ones, phases over half a period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineDistConfig {
    #[serde(default = "default_p_hard")]
    pub p_hard: f64,
    #[serde(default = "default_easy")]
    pub easy_amplitude: (f64, f64),
    #[serde(default = "default_hard")]
    pub hard_amplitude: (f64, f64),
    #[serde(default = "default_phase")]
    pub phase: (f64, f64),
}

impl Default for SineDistConfig {
    fn default() -> Self {
        Self { p_hard: default_p_hard(), easy_amplitude: default_easy(), hard_amplitude: default_hard(), phase: default_phase() }
    }
}

impl SineDistConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        if !(0.0..=1.0).contains(&self.p_hard) {
            return Err(TaskError::Config(format!("p_hard must lie in [0, 1], got {}", self.p_hard)));
        }
        for (name, (lo, hi), full) in [
            ("easy_amplitude", self.easy_amplitude, AMPLITUDE_RANGE),
            ("hard_amplitude", self.hard_amplitude, AMPLITUDE_RANGE),
            ("phase", self.phase, PHASE_RANGE),
        ] {
            if !(lo <= hi && lo >= full.0 && hi <= full.1) {
                return Err(TaskError::Config(format!("{name} range [{lo}, {hi}] must lie inside [{}, {}]", full.0, full.1)));
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_train_task<R: Rng + ?Sized>(rng: &mut R, cfg: &SineDistConfig) -> SineTask {
    let hard = rng.random::<f64>() < cfg.p_hard;
    let amplitude = uniform(rng, if hard { cfg.hard_amplitude } else { cfg.easy_amplitude });
    let phase = uniform(rng, cfg.phase);
    SineTask { amplitude, phase }
}

fn default_n_a() -> usize {
    49
}
fn default_n_b() -> usize {
    10
}

pub const TEST_GRID_SIZE: usize = 490;

/// Evenly spaced evaluation grid over the full amplitude and phase ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestGridConfig {
    #[serde(default = "default_n_a")]
    pub n_amplitudes: usize,
    #[serde(default = "default_n_b")]
    pub n_phases: usize,
}

impl Default for TestGridConfig {
    fn default() -> Self {
        Self { n_amplitudes: default_n_a(), n_phases: default_n_b() }
    }
}

impl TestGridConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.n_amplitudes * self.n_phases != TEST_GRID_SIZE || self.n_amplitudes < 2 || self.n_phases < 2 {
            return Err(TaskError::Config(format!(
                "test grid {}x{} must have {TEST_GRID_SIZE} tasks with at least 2 points per axis",
                self.n_amplitudes, self.n_phases
            )));
        }
        Ok(())
    }

    pub fn amplitude_axis(&self) -> Vec<f64> {
        linspace(AMPLITUDE_RANGE, self.n_amplitudes)
    }

    pub fn phase_axis(&self) -> Vec<f64> {
        linspace(PHASE_RANGE, self.n_phases)
    }
}

/// `n` evenly spaced points with both endpoints exact.
pub fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Amplitude-major: task `i·n_phases + j` is (a_i, b_j).
pub fn build_test_grid(cfg: &TestGridConfig) -> Result<Vec<SineTask>, TaskError> {
    cfg.validate()?;
    let phases = cfg.phase_axis();
    Ok(cfg
        .amplitude_axis()
        .into_iter()
        .flat_map(|a| phases.iter().map(move |&b| SineTask { amplitude: a, phase: b }))
        .collect())
}

/// K context and M target inputs i.i.d. uniform on [−5, 5], exact sine outputs.
pub fn sample_task_data<R: Rng + ?Sized>(task: &SineTask, k: usize, m: usize, rng: &mut R) -> Result<TaskData, TaskError> {
    if k == 0 || m == 0 {
        return Err(TaskError::Config(format!("need at least one context and one target point, got K={k}, M={m}")));
    }
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(X_RANGE.0..=X_RANGE.1)).collect() };
    let cx = draw(k);
    let tx = draw(m);
    Ok(TaskData { context: task.points_at(&cx), target: task.points_at(&tx) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn degenerate_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let easy = SineDistConfig { p_hard: 0.0, ..Default::default() };
        let hard = SineDistConfig { p_hard: 1.0, ..Default::default() };
        for _ in 0..2000 {
            let t = sample_train_task(&mut rng, &easy);
            assert!((0.1..=1.05).contains(&t.amplitude));
            assert!((0.0..=PI).contains(&t.phase));
            let t = sample_train_task(&mut rng, &hard);
            assert!((4.95..=5.0).contains(&t.amplitude));
        }
    }

    #[test]
    fn hard_fraction_concentrates() {
        // Binomial(1e5, 0.1): sd ≈ 9.5e-4, so ±0.01 is > 10 sd.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = SineDistConfig::default();
        let n = 100_000;
        let hard = (0..n).filter(|_| sample_train_task(&mut rng, &cfg).amplitude >= 4.95).count();
        let frac = hard as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn test_grid_corners_and_distinctness() {
        let grid = build_test_grid(&TestGridConfig::default()).unwrap();
        assert_eq!(grid.len(), 490);
        assert_eq!(grid[0], SineTask { amplitude: 0.1, phase: 0.0 });
        assert_eq!(grid[489], SineTask { amplitude: 5.0, phase: 2.0 * PI });
        let distinct: HashSet<(u64, u64)> = grid.iter().map(|t| (t.amplitude.to_bits(), t.phase.to_bits())).collect();
        assert_eq!(distinct.len(), 490);
        assert!(build_test_grid(&TestGridConfig { n_amplitudes: 50, n_phases: 10 }).is_err());
        assert!(build_test_grid(&TestGridConfig { n_amplitudes: 70, n_phases: 7 }).is_ok());
    }

    #[test]
    fn forced_inputs_give_exact_values() {
        let t = SineTask::new(1.0, 0.0).unwrap();
        assert_eq!(t.value(PI / 2.0), 1.0);
        let t = SineTask::new(5.0, PI).unwrap();
        assert_eq!(t.value(PI), 0.0);
        let t = SineTask::new(2.0, PI / 2.0).unwrap();
        assert_eq!(t.value(0.0), -2.0);
    }

    #[test]
    fn sampled_data_is_exact_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let task = SineTask::new(3.3, 1.2).unwrap();
        let d = sample_task_data(&task, 5, 7, &mut rng).unwrap();
        assert_eq!((d.context.len(), d.target.len()), (5, 7));
        for p in d.context.iter().chain(&d.target) {
            assert!((-5.0..=5.0).contains(&p.x));
            assert_eq!(p.y, 3.3 * (p.x - 1.2).sin());
        }
        assert!(sample_task_data(&task, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SineDistConfig { p_hard: 1.5, ..Default::default() }.validate().is_err());
        assert!(SineDistConfig { easy_amplitude: (0.0, 1.0), ..Default::default() }.validate().is_err());
        assert!(SineDistConfig::default().validate().is_ok());
    }
}
