//! Evaluation of trained parameters: Average / Worst / CVaR metrics, loss
//! histograms, adaptation landscapes and cross-run comparison tables.

mod compare;
mod histogram;

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{self, fmt_f64};
use crate::diffcore::{self, DiffError, ParamVector};
use crate::metatrain::inner_adapt;
use crate::models::{cnp_task_loss, mlp_task_loss, ModelError, ModelSpec};
use crate::riskcore::{check_alpha, cvar_estimate, RiskBatch, RiskError};
use crate::seeding;
use crate::taskgen::{sample_task_data, GpSampler, SineTask, TaskError};

pub use compare::{compare_runs, Comparison, ComparisonRow, RunResult};
pub use histogram::{default_range, histogram, mass_above, Histogram, DEFAULT_BINS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("task {task}: {source}")]
    Task { task: usize, source: DiffError },
    #[error("invalid histogram: {0}")]
    Histogram(String),
    #[error("cannot compare runs: {0}")]
    Compare(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub average: f64,
    pub worst: f64,
    pub cvar: f64,
    pub alpha_eval: f64,
    pub n_tasks: usize,
    pub per_task_losses: Vec<f64>,
}

impl MetricsReport {
    pub fn from_losses(losses: &[f64], alpha_eval: f64) -> Result<Self, EvalError> {
        check_alpha(alpha_eval)?;
        let batch = RiskBatch::from_losses(losses)?;
        Ok(Self {
            average: batch.mean(),
            worst: batch.max(),
            cvar: cvar_estimate(&batch, alpha_eval)?,
            alpha_eval,
            n_tasks: losses.len(),
            per_task_losses: losses.to_vec(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// How a model turns a task's context into predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adapt {
    /// One SGD step on the context MSE, then target MSE.
    MamlOneStep { inner_lr: f64 },
    /// Encode the context, then target Gaussian NLL.
    CnpCondition,
}

/// Tasks to evaluate on.
#[derive(Clone, Debug)]
pub enum EvalTaskSet {
    Sine { tasks: Vec<SineTask>, shots: usize, targets: usize },
    Gp { sampler: GpSampler, n_tasks: usize },
}

impl EvalTaskSet {
    pub fn len(&self) -> usize {
        match self {
            EvalTaskSet::Sine { tasks, .. } => tasks.len(),
            EvalTaskSet::Gp { n_tasks, .. } => *n_tasks,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Post-adaptation loss of every task, in task order. Task `i` draws its
/// data from the `(seed, i)` stream, so every model sees identical data.
pub fn per_task_losses(model: &ModelSpec, params: &ParamVector, tasks: &EvalTaskSet, adapt: Adapt, seed: u64) -> Result<Vec<f64>, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    (0..tasks.len())
        .map(|i| {
            let mut rng = seeding::stream(seed, seeding::EVAL_TASK, i as u64, 0);
            let data = match tasks {
                EvalTaskSet::Sine { tasks, shots, targets } => sample_task_data(&tasks[i], *shots, *targets, &mut rng)?,
                EvalTaskSet::Gp { sampler, .. } => sampler.sample(&mut rng).1,
            };
            let fail = |source| EvalError::Task { task: i, source };
            match (model, adapt) {
                (ModelSpec::Mlp(spec), Adapt::MamlOneStep { inner_lr }) => {
                    let inner = mlp_task_loss(spec, &data.context)?;
                    let outer = mlp_task_loss(spec, &data.target)?;
                    let adapted = inner_adapt(params, &inner, inner_lr).map_err(fail)?;
                    diffcore::value(&outer, &adapted).map_err(fail)
                }
                (ModelSpec::Cnp(spec), Adapt::CnpCondition) => {
                    let loss = cnp_task_loss(spec, &data.context, &data.target)?;
                    diffcore::value(&loss, params).map_err(fail)
                }
                _ => Err(ModelError::WrongKind("adaptation rule does not match the model kind").into()),
            }
        })
        .collect()
}

pub fn evaluate_metrics(
    model: &ModelSpec,
    params: &ParamVector,
    tasks: &EvalTaskSet,
    alpha_eval: f64,
    adapt: Adapt,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    check_alpha(alpha_eval)?;
    MetricsReport::from_losses(&per_task_losses(model, params, tasks, adapt, seed)?, alpha_eval)
}

/// Post-adaptation target MSE over an amplitude × phase grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub a_axis: Vec<f64>,
    pub b_axis: Vec<f64>,
    /// `mse[i][j]` belongs to `(a_axis[i], b_axis[j])`.
    pub mse: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    /// Columns: a,b,mse; amplitude-major.
    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        let rows = self
            .a_axis
            .iter()
            .zip(&self.mse)
            .flat_map(|(a, row)| self.b_axis.iter().zip(row).map(move |(b, m)| [fmt_f64(*a), fmt_f64(*b), fmt_f64(*m)]));
        csvio::write_rows(path, &["a", "b", "mse"], rows)
    }
}

/// Grid entry `(i, j)` uses the same data stream as task `i·|b| + j` of an
/// amplitude-major task list.
#[allow(clippy::too_many_arguments)]
pub fn landscape(
    model: &ModelSpec,
    params: &ParamVector,
    a_axis: &[f64],
    b_axis: &[f64],
    shots: usize,
    targets: usize,
    inner_lr: f64,
    seed: u64,
) -> Result<LandscapeGrid, EvalError> {
    if a_axis.is_empty() || b_axis.is_empty() {
        return Err(EvalError::NoTasks);
    }
    let mut tasks = Vec::with_capacity(a_axis.len() * b_axis.len());
    for &a in a_axis {
        for &b in b_axis {
            tasks.push(SineTask::new(a, b)?);
        }
    }
    let set = EvalTaskSet::Sine { tasks, shots, targets };
    let flat = per_task_losses(model, params, &set, Adapt::MamlOneStep { inner_lr }, seed)?;
    Ok(LandscapeGrid { a_axis: a_axis.to_vec(), b_axis: b_axis.to_vec(), mse: flat.chunks(b_axis.len()).map(<[f64]>::to_vec).collect() })
}
