//! Run orchestration behind the command-line tool: training into a run
//! directory, evaluation of checkpoints, sweeps and landscapes.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, TaskConfig};
use crate::diffcore::ParamVector;
use crate::evalreport::{compare_runs, landscape, per_task_losses, EvalError, EvalTaskSet, MetricsReport, RunResult, DEFAULT_BINS};
use crate::metatrain::{train, RunSink, TraceRecord, TrainError, TRACE_HEADER};
use crate::models::{Checkpoint, ModelError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("checkpoint {0} does not exist")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint model does not match the config: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExperimentError {
    /// 2 for usage, config and missing-input errors; 1 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Usage(_) | ExperimentError::MissingCheckpoint(_) | ExperimentError::Mismatch(_) => 2,
            _ => 1,
        }
    }
}

pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_FILE: &str = "trace.csv";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.bin")
}

pub fn eval_name(iteration: usize) -> String {
    format!("eval_{iteration:06}.json")
}

pub fn metrics_name(alpha: f64) -> String {
    format!("metrics_alpha_{alpha}.json")
}

/// Writes trace rows, periodic evaluations and checkpoints into a run directory.
pub struct RunDirSink<'a> {
    dir: PathBuf,
    cfg: &'a ExperimentConfig,
    trace: csv::Writer<File>,
    eval_set: Option<EvalTaskSet>,
    checkpoints: Vec<PathBuf>,
}

impl<'a> RunDirSink<'a> {
    pub fn create(dir: &Path, cfg: &'a ExperimentConfig) -> Result<Self, ExperimentError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
        let mut trace = csv::Writer::from_path(dir.join(TRACE_FILE)).map_err(io::Error::other)?;
        trace.write_record(TRACE_HEADER).map_err(io::Error::other)?;
        let eval_set = if cfg.train.eval_every > 0 { Some(cfg.eval_tasks()?) } else { None };
        Ok(Self { dir: dir.to_path_buf(), cfg, trace, eval_set, checkpoints: Vec::new() })
    }

    pub fn checkpoints(&self) -> &[PathBuf] {
        &self.checkpoints
    }
}

fn sink_err(e: impl std::fmt::Display) -> TrainError {
    TrainError::Sink(e.to_string())
}

impl RunSink for RunDirSink<'_> {
    fn record(&mut self, rec: &TraceRecord) -> Result<(), TrainError> {
        self.trace.write_record(rec.csv_fields()).map_err(sink_err)
    }

    fn evaluate(&mut self, iteration: usize, params: &ParamVector) -> Result<(), TrainError> {
        let Some(set) = &self.eval_set else { return Ok(()) };
        let losses = per_task_losses(&self.cfg.train.model, params, set, self.cfg.adapt(), self.cfg.eval.seed).map_err(sink_err)?;
        let report = MetricsReport::from_losses(&losses, self.cfg.eval.alphas[0]).map_err(sink_err)?;
        report.write_json(&self.dir.join(eval_name(iteration))).map_err(sink_err)
    }

    fn checkpoint(&mut self, iteration: usize, params: &ParamVector) -> Result<(), TrainError> {
        let ck = Checkpoint {
            model: self.cfg.train.model.clone(),
            seed: self.cfg.train.seed,
            iteration: iteration as u64,
            params: params.clone(),
            metadata: serde_json::json!({
                "experiment": self.cfg,
                "principle": self.cfg.train.principle.kind.as_str(),
                "improvement_factor": self.cfg.train.improvement_factor(),
            }),
        };
        let path = self.dir.join(checkpoint_name(iteration));
        ck.save(&path).map_err(sink_err)?;
        self.checkpoints.push(path);
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        self.trace.flush().map_err(sink_err)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub params: ParamVector,
    pub trace: Vec<TraceRecord>,
    pub final_checkpoint: PathBuf,
}

/// Trains `cfg` (at `cfg.train.seed`) into `dir`.
pub fn run_train(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let source = cfg.task_source()?;
    let mut sink = RunDirSink::create(dir, cfg)?;
    let out = train(&cfg.train, &source, &mut sink)?;
    let final_checkpoint = sink.checkpoints().last().cloned().expect("the final checkpoint is always written");
    Ok(RunOutcome { dir: dir.to_path_buf(), params: out.params, trace: out.trace, final_checkpoint })
}

/// Loads a checkpoint and the experiment config it was trained with (or
/// `override_cfg`), checking that both describe the same model.
pub fn load_checkpoint(path: &Path, override_cfg: Option<&ExperimentConfig>) -> Result<(Checkpoint, ExperimentConfig), ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::MissingCheckpoint(path.to_path_buf()));
    }
    let ck = Checkpoint::load(path)?;
    let cfg = match override_cfg {
        Some(c) => c.clone(),
        None => {
            let v = ck.metadata.get("experiment").cloned().ok_or_else(|| {
                ExperimentError::Usage(format!("{} carries no experiment config; pass one with --config", path.display()))
            })?;
            serde_json::from_value(v).map_err(|e| ExperimentError::Usage(format!("embedded config: {e}")))?
        }
    };
    cfg.validate()?;
    if cfg.train.model != ck.model {
        return Err(ExperimentError::Mismatch(format!("checkpoint has {:?}, config has {:?}", ck.model, cfg.train.model)));
    }
    Ok((ck, cfg))
}

/// Evaluates `params` on the config's task set once and reports every α.
pub fn evaluate_params(cfg: &ExperimentConfig, params: &ParamVector, alphas: &[f64], seed: u64) -> Result<Vec<MetricsReport>, ExperimentError> {
    let set = cfg.eval_tasks()?;
    let losses = per_task_losses(&cfg.train.model, params, &set, cfg.adapt(), seed)?;
    Ok(alphas.iter().map(|&a| MetricsReport::from_losses(&losses, a)).collect::<Result<_, _>>()?)
}

/// Writes `metrics_alpha_<α>.json` per α into `out`.
pub fn run_eval(
    checkpoint: &Path,
    override_cfg: Option<&ExperimentConfig>,
    alphas: Option<&[f64]>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<(PathBuf, MetricsReport)>, ExperimentError> {
    let (ck, cfg) = load_checkpoint(checkpoint, override_cfg)?;
    let alphas = alphas.map_or_else(|| cfg.eval.alphas.clone(), <[f64]>::to_vec);
    if alphas.is_empty() {
        return Err(ExperimentError::Usage("no alpha values given".into()));
    }
    for &a in &alphas {
        crate::riskcore::check_alpha(a).map_err(|e| ExperimentError::Usage(e.to_string()))?;
    }
    let reports = evaluate_params(&cfg, &ck.params, &alphas, seed.unwrap_or(cfg.eval.seed))?;
    fs::create_dir_all(out)?;
    reports
        .into_iter()
        .map(|r| {
            let p = out.join(metrics_name(r.alpha_eval));
            r.write_json(&p)?;
            Ok((p, r))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    BatchSize,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::BatchSize => "batch_size",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<(), ExperimentError> {
        match self {
            SweepAxis::Alpha => cfg.train.principle.alpha = value,
            SweepAxis::BatchSize => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(ExperimentError::Usage(format!("batch size must be a positive integer, got {value}")));
                }
                cfg.train.meta_batch_size = value as usize;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub value: f64,
    pub seed: u64,
    pub run_dir: PathBuf,
    /// `None` when the run succeeded.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub entries: Vec<SweepEntry>,
    pub failed: usize,
    pub comparison: Option<PathBuf>,
}

fn sweep_one(base: &ExperimentConfig, axis: SweepAxis, value: f64, seed: u64, dir: &Path, label: &str) -> Result<RunResult, ExperimentError> {
    let mut cfg = base.with_seed(seed);
    axis.apply(&mut cfg, value)?;
    let run = run_train(&cfg, dir)?;
    let alpha = cfg.eval.alphas[0];
    let report = evaluate_params(&cfg, &run.params, &[alpha], cfg.eval.seed)?.remove(0);
    report.write_json(&dir.join(metrics_name(alpha)))?;
    Ok(RunResult { label: label.to_owned(), principle: cfg.train.principle.kind, seed, report })
}

/// Trains and evaluates every (value, seed) pair. Failed runs are recorded
/// and skipped; the comparison covers the successful ones.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64], seeds: &[u64], out: &Path) -> Result<SweepSummary, ExperimentError> {
    base.validate()?;
    if values.is_empty() || seeds.is_empty() {
        return Err(ExperimentError::Usage("a sweep needs at least one value and one seed".into()));
    }
    fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    let mut results = Vec::new();
    for &value in values {
        let label = format!("{}={value}", axis.as_str());
        for &seed in seeds {
            let run_dir = out.join(format!("{}_{value}", axis.as_str())).join(format!("seed_{seed}"));
            let error = match sweep_one(base, axis, value, seed, &run_dir, &label) {
                Ok(r) => {
                    results.push(r);
                    None
                }
                Err(e) => Some(e.to_string()),
            };
            entries.push(SweepEntry { label: label.clone(), value, seed, run_dir, error });
        }
    }
    let comparison = match results.len() {
        0 => None,
        1 => {
            // A lone run is compared with itself: zero deltas.
            let twin = [results[0].clone(), results[0].clone()];
            let mut c = compare_runs(&twin, DEFAULT_BINS)?;
            c.rows.truncate(1);
            c.histograms.truncate(1);
            Some(c.write(out)?.remove(0))
        }
        _ => Some(compare_runs(&results, DEFAULT_BINS)?.write(out)?.remove(0)),
    };
    let summary = SweepSummary { axis, failed: entries.iter().filter(|e| e.error.is_some()).count(), entries, comparison };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).map_err(io::Error::other)?)?;
    Ok(summary)
}

/// Writes `landscape.csv` over the config's test-grid axes.
pub fn run_landscape(checkpoint: &Path, override_cfg: Option<&ExperimentConfig>, seed: Option<u64>, out: &Path) -> Result<PathBuf, ExperimentError> {
    let (ck, cfg) = load_checkpoint(checkpoint, override_cfg)?;
    let TaskConfig::Sine { test_grid, .. } = &cfg.tasks else {
        return Err(ExperimentError::Usage("landscapes are defined for sinusoid models only".into()));
    };
    let grid = landscape(
        &ck.model,
        &ck.params,
        &test_grid.amplitude_axis(),
        &test_grid.phase_axis(),
        cfg.train.shots,
        cfg.eval.targets.unwrap_or(cfg.train.targets),
        cfg.train.inner_lr,
        seed.unwrap_or(cfg.eval.seed),
    )?;
    fs::create_dir_all(out)?;
    let p = out.join("landscape.csv");
    grid.write_csv(&p)?;
    Ok(p)
}
