//! Task distributions: sinusoid regression (shifted train distribution and a
//! 490-task evaluation grid) and GP curves.

mod gp;
mod sine;

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio;

pub use gp::{sample_gp_task, GpConfig, GpCurveTask, GpSampler, BASE_JITTER};
pub use sine::{
    build_test_grid, linspace, sample_task_data, sample_train_task, SineDistConfig, SineTask, TestGridConfig,
    AMPLITUDE_RANGE, PHASE_RANGE, TEST_GRID_SIZE, X_RANGE,
};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task config: {0}")]
    Config(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("covariance factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },
    #[error("task csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A task's context set (for adaptation) and target set (for scoring).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub context: Vec<Point>,
    pub target: Vec<Point>,
}

/// Writes `task_index,a,b` rows.
pub fn write_task_csv(path: &Path, tasks: &[SineTask]) -> Result<(), TaskError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TaskError::Csv(e.to_string()))?;
    w.write_record(["task_index", "a", "b"]).map_err(|e| TaskError::Csv(e.to_string()))?;
    for (i, t) in tasks.iter().enumerate() {
        w.write_record([i.to_string(), csvio::fmt_f64(t.amplitude), csvio::fmt_f64(t.phase)])
            .map_err(|e| TaskError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a task CSV; rows must be ordered by `task_index` starting at 0.
pub fn read_task_csv(path: &Path) -> Result<Vec<SineTask>, TaskError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TaskError::Csv(e.to_string()))?;
    let headers = r.headers().map_err(|e| TaskError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["task_index", "a", "b"] {
        return Err(TaskError::Csv(format!("expected header task_index,a,b, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut tasks = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| TaskError::Csv(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, TaskError> {
            rec[i].trim().parse::<f64>().map_err(|e| TaskError::Csv(format!("row {row}, column {i}: {e}")))
        };
        let idx = rec[0].trim().parse::<usize>().map_err(|e| TaskError::Csv(format!("row {row}: {e}")))?;
        if idx != row {
            return Err(TaskError::Csv(format!("row {row} has task_index {idx}")));
        }
        tasks.push(SineTask::new(parse(1)?, parse(2)?)?);
    }
    Ok(tasks)
}
