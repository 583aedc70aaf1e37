use super::{cnp_meta_step, maml_meta_step, Optimizer, TraceRecord, TrainConfig, TrainError};
use crate::diffcore::ParamVector;
use crate::models::ModelSpec;
use crate::seeding;
use crate::taskgen::{sample_task_data, sample_train_task, GpSampler, SineDistConfig, TaskData};

/// Where training batches come from.
#[derive(Clone, Debug)]
pub enum TaskSource {
    Sine(SineDistConfig),
    /// GP curves; context size and target grid come from the sampler, so
    /// `shots`/`targets` are unused.
    Gp(GpSampler),
}

impl TaskSource {
    /// The batch for `iteration`; task `i` draws from its own stream.
    pub fn sample_batch(&self, cfg: &TrainConfig, iteration: usize) -> Result<Vec<TaskData>, TrainError> {
        (0..cfg.meta_batch_size)
            .map(|i| {
                let mut rng = seeding::stream(cfg.seed, seeding::TRAIN_TASK, iteration as u64, i as u64);
                match self {
                    TaskSource::Sine(dist) => {
                        let task = sample_train_task(&mut rng, dist);
                        Ok(sample_task_data(&task, cfg.shots, cfg.targets, &mut rng)?)
                    }
                    TaskSource::Gp(sampler) => Ok(sampler.sample(&mut rng).1),
                }
            })
            .collect()
    }
}

/// Receives training outputs as they are produced.
pub trait RunSink {
    fn record(&mut self, _rec: &TraceRecord) -> Result<(), TrainError> {
        Ok(())
    }
    fn evaluate(&mut self, _iteration: usize, _params: &ParamVector) -> Result<(), TrainError> {
        Ok(())
    }
    fn checkpoint(&mut self, _iteration: usize, _params: &ParamVector) -> Result<(), TrainError> {
        Ok(())
    }
    /// Called once at the end, and before an error is returned.
    fn flush(&mut self) -> Result<(), TrainError> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub records: Vec<TraceRecord>,
    pub evaluations: Vec<usize>,
    pub checkpoints: Vec<(usize, ParamVector)>,
}

impl RunSink for MemorySink {
    fn record(&mut self, rec: &TraceRecord) -> Result<(), TrainError> {
        self.records.push(*rec);
        Ok(())
    }
    fn evaluate(&mut self, iteration: usize, _params: &ParamVector) -> Result<(), TrainError> {
        self.evaluations.push(iteration);
        Ok(())
    }
    fn checkpoint(&mut self, iteration: usize, params: &ParamVector) -> Result<(), TrainError> {
        self.checkpoints.push((iteration, params.clone()));
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParamVector,
    pub trace: Vec<TraceRecord>,
}

fn due(every: usize, iteration: usize, last: usize) -> bool {
    every > 0 && (iteration.is_multiple_of(every) || iteration == last)
}

/// Runs `cfg.iterations` outer updates (numbered from 1). The whole run is a
/// function of `cfg`.
pub fn train(cfg: &TrainConfig, source: &TaskSource, sink: &mut dyn RunSink) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    match (&cfg.model, source) {
        (ModelSpec::Mlp(_), TaskSource::Sine(_)) | (ModelSpec::Cnp(_), _) => {}
        (ModelSpec::Mlp(_), TaskSource::Gp(_)) => {
            return Err(TrainError::Config("GP curves are only supported with the cnp model".into()));
        }
    }
    let result = run(cfg, source, sink);
    let flushed = sink.flush();
    let out = result?;
    flushed?;
    Ok(out)
}

fn run(cfg: &TrainConfig, source: &TaskSource, sink: &mut dyn RunSink) -> Result<TrainOutput, TrainError> {
    let mut params = cfg.model.init(&mut seeding::stream(cfg.seed, seeding::INIT, 0, 0));
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let last = cfg.iterations;
    for iteration in 1..=last {
        let at = |e: TrainError| TrainError::AtIteration { iteration, source: Box::new(e) };
        let tasks = source.sample_batch(cfg, iteration).map_err(at)?;
        let step = match cfg.model {
            ModelSpec::Mlp(_) => maml_meta_step(&params, &tasks, cfg, &mut opt, iteration),
            ModelSpec::Cnp(_) => cnp_meta_step(&params, &tasks, cfg, &mut opt, iteration),
        }
        .map_err(at)?;
        params = step.params;
        sink.record(&step.record)?;
        trace.push(step.record);
        if due(cfg.eval_every, iteration, last) {
            sink.evaluate(iteration, &params)?;
        }
        if due(cfg.checkpoint_every, iteration, last) || iteration == last {
            sink.checkpoint(iteration, &params)?;
        }
    }
    Ok(TrainOutput { params, trace })
}
