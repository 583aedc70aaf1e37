use super::*;
use crate::diffcore::{Graph, Scalar, Var};
use crate::models::Activation;
use crate::riskcore::{screen_tail, PrincipleKind};
use crate::seeding;
use crate::taskgen::{GpConfig, GpSampler, SineDistConfig};

struct Square;
impl ScalarFn for Square {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, p: Var) -> Var {
        let s = g.square(p);
        g.sum(s)
    }
}

fn tiny_mlp() -> MlpSpec {
    MlpSpec::new(vec![1, 6, 6, 1], Activation::Tanh).unwrap()
}

fn sine_cfg(model: ModelSpec, principle: PrincipleConfig, b: usize) -> TrainConfig {
    TrainConfig {
        model,
        principle,
        inner_lr: 0.01,
        optimizer: OptimizerConfig::default(),
        meta_batch_size: b,
        shots: 5,
        targets: 5,
        iterations: 1,
        seed: 11,
        eval_every: 0,
        checkpoint_every: 0,
        grad_mode: GradMode::Exact,
    }
}

fn batch_and_params(cfg: &TrainConfig) -> (Vec<TaskData>, ParamVector) {
    let src = TaskSource::Sine(SineDistConfig { p_hard: 0.3, ..Default::default() });
    let tasks = src.sample_batch(cfg, 1).unwrap();
    let params = cfg.model.init(&mut seeding::stream(cfg.seed, seeding::INIT, 0, 0));
    (tasks, params)
}

fn step(cfg: &TrainConfig, tasks: &[TaskData], params: &ParamVector) -> MetaStep {
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    maml_meta_step(params, tasks, cfg, &mut opt, 1).unwrap()
}

#[test]
fn inner_adapt_examples() {
    let p = ParamVector::flat(vec![1.0]).unwrap();
    assert!((inner_adapt(&p, &Square, 0.1).unwrap().values()[0] - 0.8).abs() < 1e-15);
    assert_eq!(inner_adapt(&p, &Square, 0.0).unwrap(), p);
    let z = ParamVector::flat(vec![0.0, 0.0]).unwrap();
    assert_eq!(inner_adapt(&z, &Square, 0.5).unwrap(), z);
    assert!(inner_adapt(&p, &Square, -0.1).is_err());
}

#[test]
fn singleton_batch_makes_principles_coincide() {
    let model = ModelSpec::Mlp(tiny_mlp());
    let base = sine_cfg(model, PrincipleConfig::expected_risk(), 1);
    let (tasks, params) = batch_and_params(&base);
    let reference = step(&base, &tasks, &params).params;
    for p in [PrincipleConfig::worst_in_batch(), PrincipleConfig::cvar(0.7), PrincipleConfig::group_dro(0.3)] {
        let cfg = TrainConfig { principle: p, ..base.clone() };
        assert_eq!(step(&cfg, &tasks, &params).params, reference, "{:?}", p.kind);
    }
}

#[test]
fn cvar_at_zero_is_expected_risk_bitwise() {
    let model = ModelSpec::Mlp(MlpSpec::sinusoid());
    let erm = sine_cfg(model, PrincipleConfig::expected_risk(), 7);
    let cvar = TrainConfig { principle: PrincipleConfig::cvar(0.0), ..erm.clone() };
    let (tasks, params) = batch_and_params(&erm);
    let a = step(&erm, &tasks, &params);
    let b = step(&cvar, &tasks, &params);
    assert_eq!(a.outer.grad.values(), b.outer.grad.values());
    assert_eq!(a.params, b.params);
}

#[test]
fn single_task_tail_is_worst_in_batch() {
    let model = ModelSpec::Mlp(tiny_mlp());
    let worst = sine_cfg(model, PrincipleConfig::worst_in_batch(), 6);
    // ⌊(1 − 0.85)·6⌋ = 0, floored to 1.
    let cvar = TrainConfig { principle: PrincipleConfig::cvar(0.85), ..worst.clone() };
    let (tasks, params) = batch_and_params(&worst);
    let a = step(&worst, &tasks, &params);
    let b = step(&cvar, &tasks, &params);
    assert_eq!(b.record.k, 1);
    assert_eq!(a.params, b.params);
}

fn per_task_meta_grads(spec: &MlpSpec, params: &ParamVector, tasks: &[TaskData], lr: f64) -> Vec<Vec<f64>> {
    tasks
        .iter()
        .map(|t| {
            let inner = mlp_task_loss(spec, &t.context).unwrap();
            let outer = mlp_task_loss(spec, &t.target).unwrap();
            diffcore::meta_gradient(&inner, &outer, params, lr, GradMode::Exact).unwrap().grad.into_values()
        })
        .collect()
}

#[test]
fn cvar_uses_exactly_the_screened_tasks() {
    let spec = tiny_mlp();
    let cfg = sine_cfg(ModelSpec::Mlp(spec.clone()), PrincipleConfig::cvar(0.5), 4);
    let (tasks, params) = batch_and_params(&cfg);
    let out = maml_outer_gradient(&spec, &params, &tasks, &cfg.principle, cfg.inner_lr, cfg.grad_mode).unwrap();
    let tail = screen_tail(&out.batch, 0.5).unwrap();
    assert_eq!(tail.k, 2);
    let grads = per_task_meta_grads(&spec, &params, &tasks, cfg.inner_lr);
    let mut positions = tail.positions.clone();
    positions.sort_unstable();
    let mut expect = vec![0.0; params.len()];
    for &p in &positions {
        for (e, g) in expect.iter_mut().zip(&grads[p]) {
            *e += 0.5 * g;
        }
    }
    assert_eq!(out.grad.values(), expect.as_slice());
    assert_eq!(out.weights.iter().filter(|&&w| w != 0.0).count(), 2);
}

#[test]
fn group_dro_gradient_is_the_weighted_sum() {
    let spec = tiny_mlp();
    let cfg = sine_cfg(ModelSpec::Mlp(spec.clone()), PrincipleConfig::group_dro(0.5), 5);
    let (tasks, params) = batch_and_params(&cfg);
    let out = maml_outer_gradient(&spec, &params, &tasks, &cfg.principle, cfg.inner_lr, cfg.grad_mode).unwrap();
    assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let grads = per_task_meta_grads(&spec, &params, &tasks, cfg.inner_lr);
    for j in 0..params.len() {
        let e: f64 = (0..5).map(|i| out.weights[i] * grads[i][j]).sum();
        assert!((out.grad.values()[j] - e).abs() <= 1e-12 * (1.0 + e.abs()));
    }
}

#[test]
fn cvar_outer_gradient_matches_finite_differences() {
    let spec = tiny_mlp();
    let lr = 0.05;
    let principle = PrincipleConfig::cvar(0.5);
    let cfg = sine_cfg(ModelSpec::Mlp(spec.clone()), principle, 2);
    let (tasks, params) = batch_and_params(&cfg);
    let out = maml_outer_gradient(&spec, &params, &tasks, &principle, lr, GradMode::Exact).unwrap();
    let screened: Vec<usize> = (0..2).filter(|&i| out.weights[i] != 0.0).collect();
    assert_eq!(screened.len(), 1);
    let objective = |theta: &ParamVector| -> f64 {
        screened
            .iter()
            .map(|&i| {
                let inner = mlp_task_loss(&spec, &tasks[i].context).unwrap();
                let outer = mlp_task_loss(&spec, &tasks[i].target).unwrap();
                let adapted = inner_adapt(theta, &inner, lr).unwrap();
                diffcore::value(&outer, &adapted).unwrap()
            })
            .sum::<f64>()
            / screened.len() as f64
    };
    let h = 1e-6;
    let mut num = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let mut plus = params.values().to_vec();
        let mut minus = plus.clone();
        plus[j] += h;
        minus[j] -= h;
        num.push((objective(&params.with_values(plus).unwrap()) - objective(&params.with_values(minus).unwrap())) / (2.0 * h));
    }
    let diff: f64 = num.iter().zip(out.grad.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
}

#[test]
fn cnp_half_tail_screens_half_the_batch() {
    let spec = CnpSpec::with_width(8);
    let sampler = GpSampler::new(&GpConfig { grid_size: 40, context_range: (3, 10), ..Default::default() }).unwrap();
    let cfg = sine_cfg(ModelSpec::Cnp(spec), PrincipleConfig::cvar(0.5), 64);
    let tasks = TaskSource::Gp(sampler).sample_batch(&cfg, 1).unwrap();
    let params = cfg.model.init(&mut seeding::stream(1, seeding::INIT, 0, 0));
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let s = cnp_meta_step(&params, &tasks, &cfg, &mut opt, 1).unwrap();
    assert_eq!(s.record.k, 32);
    assert_eq!(s.outer.weights.iter().filter(|&&w| w == 1.0 / 32.0).count(), 32);
}

#[test]
fn cnp_cvar_at_zero_is_plain_training() {
    let spec = CnpSpec::with_width(8);
    let sampler = GpSampler::new(&GpConfig { grid_size: 30, context_range: (3, 10), ..Default::default() }).unwrap();
    let erm = sine_cfg(ModelSpec::Cnp(spec), PrincipleConfig::expected_risk(), 4);
    let cvar = TrainConfig { principle: PrincipleConfig::cvar(0.0), ..erm.clone() };
    let tasks = TaskSource::Gp(sampler).sample_batch(&erm, 3).unwrap();
    let params = erm.model.init(&mut seeding::stream(2, seeding::INIT, 0, 0));
    let a = cnp_meta_step(&params, &tasks, &erm, &mut Optimizer::new(erm.optimizer, params.len()), 1).unwrap();
    let b = cnp_meta_step(&params, &tasks, &cvar, &mut Optimizer::new(cvar.optimizer, params.len()), 1).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn wrong_batch_size_or_model_is_rejected() {
    let cfg = sine_cfg(ModelSpec::Mlp(tiny_mlp()), PrincipleConfig::expected_risk(), 3);
    let (tasks, params) = batch_and_params(&cfg);
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    assert!(maml_meta_step(&params, &tasks[..2], &cfg, &mut opt, 1).is_err());
    assert!(cnp_meta_step(&params, &tasks, &cfg, &mut opt, 1).is_err());
}

#[test]
fn one_iteration_run_gives_one_record_and_one_checkpoint() {
    let cfg = TrainConfig { eval_every: 5, ..sine_cfg(ModelSpec::Mlp(tiny_mlp()), PrincipleConfig::cvar(0.7), 5) };
    let mut sink = MemorySink::default();
    let out = train(&cfg, &TaskSource::Sine(SineDistConfig::default()), &mut sink).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert_eq!(sink.records.len(), 1);
    assert_eq!(sink.checkpoints.len(), 1);
    assert_eq!(sink.evaluations, vec![1]);
    assert_eq!(sink.checkpoints[0].1, out.params);
}

#[test]
fn training_is_deterministic_and_trace_tracks_the_batch_var() {
    let cfg = TrainConfig {
        iterations: 6,
        checkpoint_every: 4,
        ..sine_cfg(ModelSpec::Mlp(tiny_mlp()), PrincipleConfig::cvar(0.6), 5)
    };
    let src = TaskSource::Sine(SineDistConfig::default());
    let mut s1 = MemorySink::default();
    let mut s2 = MemorySink::default();
    let a = train(&cfg, &src, &mut s1).unwrap();
    let b = train(&cfg, &src, &mut s2).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.trace, b.trace);
    assert_eq!(s1.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![4, 6]);
    assert_eq!(a.trace.iter().map(|r| r.iteration).collect::<Vec<_>>(), (1..=6).collect::<Vec<_>>());
    for r in &a.trace {
        assert!(r.xi_hat.is_finite() && r.phi.is_finite());
        assert!(r.phi >= r.xi_hat && r.max_loss >= r.mean_loss);
        assert_eq!(r.k, 2);
    }

    // Replaying iteration 1 by hand reproduces its record.
    let params = cfg.model.init(&mut seeding::stream(cfg.seed, seeding::INIT, 0, 0));
    let tasks = src.sample_batch(&cfg, 1).unwrap();
    let s = step(&cfg, &tasks, &params);
    assert_eq!(s.record, a.trace[0]);
    assert_eq!(s.record.xi_hat, estimate_var(&s.outer.batch, 0.6).unwrap().xi_hat);
}

#[test]
fn gp_source_needs_cnp() {
    let sampler = GpSampler::new(&GpConfig { grid_size: 20, context_range: (3, 10), ..Default::default() }).unwrap();
    let cfg = sine_cfg(ModelSpec::Mlp(tiny_mlp()), PrincipleConfig::expected_risk(), 2);
    assert!(matches!(train(&cfg, &TaskSource::Gp(sampler), &mut MemorySink::default()), Err(TrainError::Config(_))));
}

#[test]
fn trace_csv_round_trips() {
    let cfg = TrainConfig { iterations: 3, ..sine_cfg(ModelSpec::Mlp(tiny_mlp()), PrincipleConfig::group_dro(1.0), 4) };
    let out = train(&cfg, &TaskSource::Sine(SineDistConfig::default()), &mut MemorySink::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace_csv(&path, &out.trace).unwrap();
    assert_eq!(read_trace_csv(&path).unwrap(), out.trace);
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("iter,xi_hat,phi,mean_loss,max_loss,k\n"));
}

#[test]
fn config_validation() {
    let ok = sine_cfg(ModelSpec::Mlp(tiny_mlp()), PrincipleConfig::expected_risk(), 2);
    assert!(ok.validate().is_ok());
    assert!(TrainConfig { meta_batch_size: 0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { iterations: 0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { inner_lr: 0.0, ..ok.clone() }.validate().is_err());
    assert!(TrainConfig { principle: PrincipleConfig::cvar(1.0), ..ok.clone() }.validate().is_err());
    assert_eq!(ok.principle.kind, PrincipleKind::ExpectedRisk);
}
