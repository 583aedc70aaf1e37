//! Meta-training: one-step MAML and CNP outer loops under a risk principle,
//! with a per-iteration surrogate trace.

mod optim;
mod train;

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, fmt_f64};
use crate::diffcore::{self, adapt, DiffError, GradMode, GradVector, ParamVector, ScalarFn};
use crate::models::{cnp_task_loss, mlp_task_loss, CnpSpec, MlpSpec, ModelError, ModelSpec};
use crate::riskcore::{estimate_var, surrogate_value, PrincipleConfig, RiskBatch, RiskError};
use crate::taskgen::{TaskData, TaskError};

pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use train::{train, MemorySink, RunSink, TaskSource, TrainOutput};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("task {task}: {source}")]
    Task { task: usize, source: DiffError },
    #[error("iteration {iteration}: {source}")]
    AtIteration { iteration: usize, source: Box<TrainError> },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
    #[error("run output: {0}")]
    Sink(String),
}

impl From<io::Error> for TrainError {
    fn from(e: io::Error) -> Self {
        TrainError::Sink(e.to_string())
    }
}

fn default_inner_lr() -> f64 {
    0.01
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub principle: PrincipleConfig,
    /// Inner SGD step size (MAML only).
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub meta_batch_size: usize,
    /// Context points per sinusoid task (K).
    pub shots: usize,
    /// Target points per sinusoid task (M).
    pub targets: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Evaluate every this many iterations and at the end; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
    /// Extra checkpoints every this many iterations; the final one is always written.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub grad_mode: GradMode,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.principle.validate()?;
        self.optimizer.validate()?;
        if self.meta_batch_size == 0 {
            return Err(TrainError::Config("meta_batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be at least 1".into()));
        }
        if self.shots == 0 || self.targets == 0 {
            return Err(TrainError::Config("shots and targets must be at least 1".into()));
        }
        if matches!(self.model, ModelSpec::Mlp(_)) && !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(TrainError::Config(format!("inner_lr must be positive, got {}", self.inner_lr)));
        }
        Ok(())
    }

    /// λ/(1−α)² with λ the outer step size: the computable part of the
    /// admissible VaR estimation error for monotone improvement.
    pub fn improvement_factor(&self) -> f64 {
        let a = self.principle.alpha;
        self.optimizer.lr / ((1.0 - a) * (1.0 - a))
    }
}

/// One row of the surrogate trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub xi_hat: f64,
    pub phi: f64,
    pub mean_loss: f64,
    pub max_loss: f64,
    /// Tasks that contributed gradient.
    pub k: usize,
}

impl TraceRecord {
    pub fn from_batch(iteration: usize, batch: &RiskBatch, alpha: f64, weights: &[f64]) -> Result<Self, RiskError> {
        let xi_hat = estimate_var(batch, alpha)?.xi_hat;
        Ok(Self {
            iteration,
            xi_hat,
            phi: surrogate_value(batch, xi_hat, alpha)?,
            mean_loss: batch.mean(),
            max_loss: batch.max(),
            k: weights.iter().filter(|&&w| w != 0.0).count(),
        })
    }

    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.iteration.to_string(),
            fmt_f64(self.xi_hat),
            fmt_f64(self.phi),
            fmt_f64(self.mean_loss),
            fmt_f64(self.max_loss),
            self.k.to_string(),
        ]
    }

    pub fn from_csv_fields(row: &[String]) -> Option<Self> {
        if row.len() != 6 {
            return None;
        }
        Some(Self {
            iteration: row[0].parse().ok()?,
            xi_hat: row[1].parse().ok()?,
            phi: row[2].parse().ok()?,
            mean_loss: row[3].parse().ok()?,
            max_loss: row[4].parse().ok()?,
            k: row[5].parse().ok()?,
        })
    }
}

pub const TRACE_HEADER: [&str; 6] = ["iter", "xi_hat", "phi", "mean_loss", "max_loss", "k"];

pub fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> io::Result<()> {
    csvio::write_rows(path, &TRACE_HEADER, records.iter().map(TraceRecord::csv_fields))
}

pub fn read_trace_csv(path: &Path) -> io::Result<Vec<TraceRecord>> {
    let (header, rows) = csvio::read_rows(path)?;
    if header != TRACE_HEADER {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unexpected trace header {header:?}")));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| TraceRecord::from_csv_fields(r).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad trace row {i}"))))
        .collect()
}

/// Principle-weighted outer gradient of one batch, before the optimizer.
#[derive(Clone, Debug)]
pub struct OuterGradient {
    pub grad: GradVector,
    /// Post-adaptation target losses, task index = batch position.
    pub batch: RiskBatch,
    pub weights: Vec<f64>,
}

/// Result of one outer update.
#[derive(Clone, Debug)]
pub struct MetaStep {
    pub params: ParamVector,
    pub outer: OuterGradient,
    pub record: TraceRecord,
}

/// One inner SGD step on the context loss. A zero rate returns `params`.
pub fn inner_adapt<F: ScalarFn>(params: &ParamVector, context_loss: &F, inner_lr: f64) -> Result<ParamVector, DiffError> {
    if !(inner_lr >= 0.0 && inner_lr.is_finite()) {
        return Err(DiffError::InvalidInnerLr(inner_lr));
    }
    if inner_lr == 0.0 {
        return Ok(params.clone());
    }
    let g = diffcore::gradient(context_loss, params)?;
    params.step(g.values(), -inner_lr).map_err(|_| DiffError::NonFiniteAdapted)
}

fn weighted_sum(params: &ParamVector, weights: &[f64], mut grad_of: impl FnMut(usize) -> Result<GradVector, TrainError>) -> Result<GradVector, TrainError> {
    let mut total = GradVector::zeros_like(params);
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            total.add_scaled(&grad_of(i)?, w);
        }
    }
    Ok(total)
}

fn check_batch(tasks: &[TaskData], cfg: &TrainConfig) -> Result<(), TrainError> {
    if tasks.len() != cfg.meta_batch_size {
        return Err(TrainError::Config(format!("batch has {} tasks, meta_batch_size is {}", tasks.len(), cfg.meta_batch_size)));
    }
    Ok(())
}

/// Post-adaptation losses, principle weights and the weighted sum of
/// per-task meta-gradients. Only tasks with nonzero weight pay for the
/// second-order term.
pub fn maml_outer_gradient(
    spec: &MlpSpec,
    params: &ParamVector,
    tasks: &[TaskData],
    principle: &PrincipleConfig,
    inner_lr: f64,
    mode: GradMode,
) -> Result<OuterGradient, TrainError> {
    if tasks.is_empty() {
        return Err(RiskError::EmptyBatch.into());
    }
    let mut inners = Vec::with_capacity(tasks.len());
    let mut points = Vec::with_capacity(tasks.len());
    let mut losses = Vec::with_capacity(tasks.len());
    for (task, data) in tasks.iter().enumerate() {
        let inner = mlp_task_loss(spec, &data.context)?;
        let outer = mlp_task_loss(spec, &data.target)?;
        let point = adapt(&inner, &outer, params, inner_lr).map_err(|source| TrainError::Task { task, source })?;
        losses.push(point.outer_value);
        inners.push(inner);
        points.push(Some(point));
    }
    let batch = RiskBatch::from_losses(&losses)?;
    let weights = principle.task_weights(&batch)?;
    let grad = weighted_sum(params, &weights, |task| {
        let point = points[task].take().expect("each task is visited once");
        point
            .meta_gradient(&inners[task], params, inner_lr, mode)
            .map(|m| m.grad)
            .map_err(|source| TrainError::Task { task, source })
    })?;
    Ok(OuterGradient { grad, batch, weights })
}

/// Target NLL per task and the weighted sum of their gradients.
pub fn cnp_outer_gradient(spec: &CnpSpec, params: &ParamVector, tasks: &[TaskData], principle: &PrincipleConfig) -> Result<OuterGradient, TrainError> {
    if tasks.is_empty() {
        return Err(RiskError::EmptyBatch.into());
    }
    let mut grads = Vec::with_capacity(tasks.len());
    let mut losses = Vec::with_capacity(tasks.len());
    for (task, data) in tasks.iter().enumerate() {
        let loss = cnp_task_loss(spec, &data.context, &data.target)?;
        let (v, g) = diffcore::value_and_gradient(&loss, params).map_err(|source| TrainError::Task { task, source })?;
        losses.push(v);
        grads.push(g);
    }
    let batch = RiskBatch::from_losses(&losses)?;
    let weights = principle.task_weights(&batch)?;
    let grad = weighted_sum(params, &weights, |task| Ok(grads[task].clone()))?;
    Ok(OuterGradient { grad, batch, weights })
}

fn finish_step(params: &ParamVector, outer: OuterGradient, cfg: &TrainConfig, opt: &mut Optimizer, iteration: usize) -> Result<MetaStep, TrainError> {
    let record = TraceRecord::from_batch(iteration, &outer.batch, cfg.principle.alpha, &outer.weights)?;
    let params = opt.apply(params, &outer.grad)?;
    Ok(MetaStep { params, outer, record })
}

/// One DR-MAML style outer update (or its ERM / worst-case / Group-DRO
/// sibling, depending on `cfg.principle`).
pub fn maml_meta_step(params: &ParamVector, tasks: &[TaskData], cfg: &TrainConfig, opt: &mut Optimizer, iteration: usize) -> Result<MetaStep, TrainError> {
    let ModelSpec::Mlp(spec) = &cfg.model else {
        return Err(ModelError::WrongKind("a MAML step needs an mlp model").into());
    };
    check_batch(tasks, cfg)?;
    let outer = maml_outer_gradient(spec, params, tasks, &cfg.principle, cfg.inner_lr, cfg.grad_mode)?;
    finish_step(params, outer, cfg, opt, iteration)
}

/// One CNP outer update on the principle-weighted target NLL.
pub fn cnp_meta_step(params: &ParamVector, tasks: &[TaskData], cfg: &TrainConfig, opt: &mut Optimizer, iteration: usize) -> Result<MetaStep, TrainError> {
    let ModelSpec::Cnp(spec) = &cfg.model else {
        return Err(ModelError::WrongKind("a CNP step needs a cnp model").into());
    };
    check_batch(tasks, cfg)?;
    let outer = cnp_outer_gradient(spec, params, tasks, &cfg.principle)?;
    finish_step(params, outer, cfg, opt, iteration)
}

#[cfg(test)]
mod tests;
