use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sine::linspace;
use super::{Point, TaskData, TaskError};

pub const BASE_JITTER: f64 = 1e-6;
const MAX_JITTER_ESCALATIONS: usize = 3;

fn default_grid_size() -> usize {
    400
}
fn default_x_range() -> (f64, f64) {
    (-2.0, 2.0)
}
fn default_length_scale() -> f64 {
    0.4
}
fn default_signal_variance() -> f64 {
    1.0
}
fn default_context_range() -> (usize, usize) {
    (3, 50)
}

/// Zero-mean GP curves with an RBF kernel on a fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_x_range")]
    pub x_range: (f64, f64),
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_signal_variance")]
    pub signal_variance: f64,
    /// Inclusive range for the number of context points.
    #[serde(default = "default_context_range")]
    pub context_range: (usize, usize),
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            grid_size: default_grid_size(),
            x_range: default_x_range(),
            length_scale: default_length_scale(),
            signal_variance: default_signal_variance(),
            context_range: default_context_range(),
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        let (lo, hi) = self.context_range;
        if self.grid_size < 2 {
            return Err(TaskError::Config("GP grid needs at least 2 points".into()));
        }
        if !(self.x_range.0 < self.x_range.1) {
            return Err(TaskError::Config("GP x_range must be increasing".into()));
        }
        if !(self.length_scale > 0.0) || !(self.signal_variance >= 0.0) {
            return Err(TaskError::Config("GP length scale must be positive and variance non-negative".into()));
        }
        if lo == 0 || lo > hi || hi > self.grid_size {
            return Err(TaskError::Config(format!("context range [{lo}, {hi}] must lie in [1, {}]", self.grid_size)));
        }
        Ok(())
    }
}

/// One sampled curve.
#[derive(Clone, Debug, PartialEq)]
pub struct GpCurveTask {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub length_scale: f64,
    pub signal_variance: f64,
}

/// Caches the Cholesky factor of the grid covariance so repeated draws cost
/// one triangular mat-vec each.
#[derive(Clone, Debug)]
pub struct GpSampler {
    cfg: GpConfig,
    grid: Vec<f64>,
    /// Row-major lower-triangular factor.
    chol: Vec<f64>,
    jitter: f64,
}

impl GpSampler {
    pub fn new(cfg: &GpConfig) -> Result<Self, TaskError> {
        cfg.validate()?;
        let n = cfg.grid_size;
        let grid = linspace(cfg.x_range, n);
        let two_l2 = 2.0 * cfg.length_scale * cfg.length_scale;
        let kernel = DMatrix::from_fn(n, n, |i, j| {
            let d = grid[i] - grid[j];
            cfg.signal_variance * (-(d * d) / two_l2).exp()
        });
        let mut jitter = BASE_JITTER;
        for attempt in 0..=MAX_JITTER_ESCALATIONS {
            let k = &kernel + DMatrix::identity(n, n) * jitter;
            if let Some(c) = k.cholesky() {
                let l = c.l();
                let mut chol = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        chol[i * n + j] = l[(i, j)];
                    }
                }
                return Ok(Self { cfg: cfg.clone(), grid, chol, jitter });
            }
            if attempt < MAX_JITTER_ESCALATIONS {
                jitter *= 10.0;
            }
        }
        Err(TaskError::Factorization { jitter })
    }

    pub fn config(&self) -> &GpConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample_curve<R: Rng + ?Sized>(&self, rng: &mut R) -> GpCurveTask {
        let n = self.grid.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ys = (0..n)
            .map(|i| self.chol[i * n..i * n + i + 1].iter().zip(&z).map(|(l, z)| l * z).sum())
            .collect();
        GpCurveTask {
            xs: self.grid.clone(),
            ys,
            length_scale: self.cfg.length_scale,
            signal_variance: self.cfg.signal_variance,
        }
    }

    /// Curve plus a context subset (uniform count, drawn without replacement);
    /// the target set is the full grid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (GpCurveTask, TaskData) {
        let curve = self.sample_curve(rng);
        let (lo, hi) = self.cfg.context_range;
        let count = rng.random_range(lo..=hi);
        let picks = index::sample(rng, self.grid.len(), count);
        let context = picks.iter().map(|i| Point::new(curve.xs[i], curve.ys[i])).collect();
        let target = curve.xs.iter().zip(&curve.ys).map(|(&x, &y)| Point::new(x, y)).collect();
        (curve, TaskData { context, target })
    }
}

/// One-off draw; builds (and discards) the factorization.
pub fn sample_gp_task<R: Rng + ?Sized>(rng: &mut R, cfg: &GpConfig) -> Result<(GpCurveTask, TaskData), TaskError> {
    Ok(GpSampler::new(cfg)?.sample(rng))
}
