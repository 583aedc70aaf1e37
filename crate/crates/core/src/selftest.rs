//! Self-checking suites: sandwich bound, risk-estimator invariants, quantile
//! convergence, gradient correctness and principle equivalences. Each check
//! carries its own oracle; every random draw comes from the suite seed.

use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::csvio::{self, fmt_f64};
use crate::diffcore::{self, meta_gradient, GradMode, Graph, ParamVector, Scalar, ScalarFn, Var};
use crate::metatrain::{inner_adapt, maml_meta_step, Optimizer, OptimizerConfig, TaskSource, TrainConfig};
use crate::models::{cnp_task_loss, mlp_task_loss, Activation, CnpSpec, MlpSpec, ModelSpec};
use crate::riskcore::{
    cvar_estimate, estimate_var, kappa, quantile_error_trend, sandwich_check_with, screen_tail, surrogate_value, trend_is_nonincreasing,
    AnalyticDistribution, DiscreteDistribution, PrincipleConfig, QuantileTrendRow, RiskBatch, RiskError, SandwichReport,
};
use crate::seeding::{self, StreamRng};
use crate::taskgen::{sample_task_data, Point, SineDistConfig, SineTask, TaskData};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A table written next to the suite summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Artifact {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

impl SuiteReport {
    fn new(name: &str, seed: u64) -> Self {
        Self { name: name.into(), seed, checks: Vec::new(), artifacts: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn rng_for(seed: u64, suite: u64, case: u64) -> StreamRng {
    seeding::stream(seed, seeding::SELFTEST, suite, case)
}

// ---------------------------------------------------------------- sandwich

fn random_population(rng: &mut StreamRng) -> DiscreteDistribution {
    let n = rng.random_range(1..=30);
    // Half the populations draw from a small integer set so ties occur.
    let ties = rng.random::<bool>();
    let mut atoms: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let v = if ties { rng.random_range(0..6) as f64 } else { rng.random_range(0.0..10.0) };
            (v, rng.random_range(0.05..1.0))
        })
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for a in &mut atoms {
        a.1 /= total;
    }
    let drift = 1.0 - atoms.iter().map(|a| a.1).sum::<f64>();
    atoms[0].1 += drift;
    DiscreteDistribution::new(atoms).expect("normalized population")
}

fn sandwich_row(r: &SandwichReport) -> Vec<String> {
    vec![
        fmt_f64(r.alpha),
        fmt_f64(r.xi_hat),
        fmt_f64(r.exact_var),
        fmt_f64(r.phi),
        fmt_f64(r.exact_cvar),
        fmt_f64(r.delta),
        fmt_f64(r.kappa),
        fmt_f64(r.lower_bound),
        r.holds.to_string(),
    ]
}

/// Hand instance plus `n_random` random populations. `kappa_fn` is
/// injectable so a wrong constant can be shown to fail.
pub fn sandwich_suite_with(seed: u64, n_random: usize, kappa_fn: impl Fn(f64) -> Result<f64, RiskError> + Copy) -> SuiteReport {
    let mut s = SuiteReport::new("sandwich", seed);
    let mut rows = Vec::new();

    // Uniform on {1,2,3,4}, α = 0.5, ξ̂ = 2.4: VaR 2, φ = CVaR = 3.5,
    // δ = 0.4, κ = 3, lower bound 2.3.
    let pop = DiscreteDistribution::uniform(&[1.0, 2.0, 3.0, 4.0]).expect("valid");
    match sandwich_check_with(&pop, 2.4, 0.5, kappa_fn) {
        Ok(r) => {
            let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
            let ok = r.exact_var == 2.0
                && close(r.phi, 3.5)
                && close(r.exact_cvar, 3.5)
                && close(r.delta, 0.4)
                && close(r.kappa, 3.0)
                && close(r.lower_bound, 2.3)
                && r.holds;
            s.check(
                "hand_instance",
                ok,
                format!("phi={} cvar={} delta={} kappa={} lower={} (expected 3.5, 3.5, 0.4, 3, 2.3)", r.phi, r.exact_cvar, r.delta, r.kappa, r.lower_bound),
            );
            rows.push(sandwich_row(&r));
        }
        Err(e) => s.check("hand_instance", false, e.to_string()),
    }

    let mut failures = Vec::new();
    for case in 0..n_random {
        let mut rng = rng_for(seed, 1, case as u64);
        let pop = random_population(&mut rng);
        let alpha = rng.random_range(0.0..0.95);
        let var = pop.value_at_risk(alpha).expect("valid alpha");
        let xi = if rng.random_range(0..5) == 0 { var } else { var + rng.random_range(-3.0..3.0) };
        match sandwich_check_with(&pop, xi, alpha, kappa_fn) {
            Ok(r) => {
                if !r.holds {
                    failures.push(format!("case {case}: {r:?}"));
                }
                rows.push(sandwich_row(&r));
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    s.check(
        format!("random_populations_{n_random}"),
        failures.is_empty(),
        if failures.is_empty() { format!("{n_random} populations hold") } else { failures.join("; ") },
    );
    s.artifacts.push(Artifact {
        file_name: "sandwich.csv".into(),
        header: ["alpha", "xi_hat", "exact_var", "phi", "exact_cvar", "delta", "kappa", "lower_bound", "holds"].map(String::from).to_vec(),
        rows,
    });
    s
}

pub fn sandwich_suite(seed: u64) -> SuiteReport {
    sandwich_suite_with(seed, 100, kappa)
}

// ------------------------------------------------------- risk invariants

fn random_losses(rng: &mut StreamRng, max_len: usize) -> Vec<f64> {
    let n = rng.random_range(1..=max_len);
    if rng.random::<bool>() {
        (0..n).map(|_| rng.random_range(0..8) as f64 * 0.5).collect()
    } else {
        (0..n).map(|_| rng.random_range(0.0..10.0)).collect()
    }
}

/// Sort-based screening oracle, the α = 0 and k = 1 special cases, and the
/// surrogate minimum against a dense grid and the top-k mean.
pub fn risk_invariant_suite(seed: u64) -> SuiteReport {
    let mut s = SuiteReport::new("risk_invariants", seed);
    let cases = 200;
    let mut bad = Vec::new();
    for case in 0..cases {
        let mut rng = rng_for(seed, 2, case);
        let losses = random_losses(&mut rng, 1000);
        let batch = RiskBatch::from_losses(&losses).expect("finite");
        let alpha = rng.random_range(0.0..0.99);
        let tail = screen_tail(&batch, alpha).expect("valid");
        let mut order: Vec<usize> = (0..losses.len()).collect();
        order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
        let k = (((1.0 - alpha) * losses.len() as f64 + 1e-9).floor() as usize).max(1);
        if tail.selected != order[..k] {
            bad.push(format!("case {case}: screening differs from sort oracle"));
        }
    }
    s.check("screen_tail_vs_sort_oracle", bad.is_empty(), if bad.is_empty() { format!("{cases} batches") } else { bad.join("; ") });

    let mut bad = Vec::new();
    for case in 0..cases {
        let mut rng = rng_for(seed, 3, case);
        let losses = random_losses(&mut rng, 200);
        let batch = RiskBatch::from_losses(&losses).expect("finite");
        let mean = batch.mean();
        let max = batch.max();
        if cvar_estimate(&batch, 0.0).expect("valid") != mean {
            bad.push(format!("case {case}: cvar(0) != mean"));
        }
        // k = 1 whenever (1−α)B < 2.
        let alpha_one = 1.0 - 1.0 / (losses.len() as f64 + 1.0);
        let worst = cvar_estimate(&batch, alpha_one).expect("valid");
        if worst != max {
            bad.push(format!("case {case}: k=1 cvar {worst} != max {max}"));
        }
    }
    s.check("special_cases_exact", bad.is_empty(), if bad.is_empty() { format!("{cases} batches") } else { bad.join("; ") });

    let mut bad = Vec::new();
    for case in 0..cases {
        let mut rng = rng_for(seed, 4, case);
        let losses = random_losses(&mut rng, 60);
        let batch = RiskBatch::from_losses(&losses).expect("finite");
        let b = losses.len();
        let alpha = if rng.random_range(0..4) == 0 {
            // Aligned: (1−α)B is an integer.
            let k = rng.random_range(1..=b);
            1.0 - k as f64 / b as f64
        } else {
            rng.random_range(0.0..0.99)
        };
        if alpha >= 1.0 {
            continue;
        }
        let xi_hat = estimate_var(&batch, alpha).expect("valid").xi_hat;
        let phi = surrogate_value(&batch, xi_hat, alpha).expect("valid");
        let cvar = cvar_estimate(&batch, alpha).expect("valid");
        // The minimized surrogate is the tail average with fractional
        // weight on the boundary atom, so it never exceeds the top-k mean.
        if phi > cvar + 1e-12 * (1.0 + cvar.abs()) {
            bad.push(format!("case {case}: phi {phi} > cvar {cvar}"));
        }
        let aligned = ((1.0 - alpha) * b as f64 - ((1.0 - alpha) * b as f64).round()).abs() < 1e-9;
        if aligned && (phi - cvar).abs() > 1e-9 * (1.0 + cvar.abs()) {
            bad.push(format!("case {case}: aligned but phi {phi} != cvar {cvar}"));
        }

        // No point of a dense grid does better than ξ̂, and the grid gets
        // within one step of slope of it.
        let lo = losses.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = batch.max() + 1.0;
        let n_grid = 4001;
        let step = (hi - lo) / (n_grid - 1) as f64;
        let grid_min = (0..n_grid)
            .map(|i| surrogate_value(&batch, lo + step * i as f64, alpha).expect("valid"))
            .fold(f64::INFINITY, f64::min);
        let slack = step * (1.0 + 1.0 / (1.0 - alpha));
        if phi > grid_min + 1e-12 * (1.0 + phi.abs()) || grid_min - phi > slack {
            bad.push(format!("case {case}: grid minimum {grid_min} vs surrogate at xi_hat {xi_hat}: {phi}"));
        }
    }
    s.check(
        "surrogate_minimum_at_order_statistic",
        bad.is_empty(),
        if bad.is_empty() { format!("{cases} batches") } else { bad.join("; ") },
    );
    s
}

// ---------------------------------------------------------------- quantile

pub struct QuantileOutcome {
    pub headline: QuantileTrendRow,
    pub trend: Vec<QuantileTrendRow>,
}

/// Uniform(0,1): α = 0.7 at B = 10⁴ over 100 trials, and the error trend
/// over B ∈ {10², 10³, 10⁴} for α ∈ {0.5, 0.7, 0.9}.
pub fn quantile_experiment(seed: u64) -> QuantileOutcome {
    let d = AnalyticDistribution::Uniform { lo: 0.0, hi: 1.0 };
    let mut rng = rng_for(seed, 5, 0);
    let headline = quantile_error_trend(&d, &[0.7], &[10_000], 100, &mut rng).expect("valid")[0];
    let mut rng = rng_for(seed, 5, 1);
    let trend = quantile_error_trend(&d, &[0.5, 0.7, 0.9], &[100, 1_000, 10_000], 100, &mut rng).expect("valid");
    QuantileOutcome { headline, trend }
}

fn trend_row(r: &QuantileTrendRow) -> Vec<String> {
    vec![fmt_f64(r.alpha), r.batch_size.to_string(), r.trials.to_string(), fmt_f64(r.true_quantile), fmt_f64(r.mean_abs_error), fmt_f64(r.std_error)]
}

pub fn quantile_suite(seed: u64) -> SuiteReport {
    let mut s = SuiteReport::new("quantile", seed);
    let q = quantile_experiment(seed);
    s.check("uniform_alpha_0.7_b_1e4", q.headline.mean_abs_error < 0.02, format!("mean |xi_hat - 0.7| = {:.6}", q.headline.mean_abs_error));
    for c in q.trend.chunks(3) {
        s.check(
            format!("decreasing_alpha_{}", c[0].alpha),
            c[2].mean_abs_error < c[0].mean_abs_error,
            format!("B=100: {:.6}, B=1000: {:.6}, B=10000: {:.6}", c[0].mean_abs_error, c[1].mean_abs_error, c[2].mean_abs_error),
        );
    }
    s.check("nonincreasing_within_2_sigma", trend_is_nonincreasing(&q.trend), "successive batch sizes");
    let mut rows: Vec<_> = std::iter::once(&q.headline).chain(&q.trend).map(trend_row).collect();
    rows.dedup();
    s.artifacts.push(Artifact {
        file_name: "quantile.csv".into(),
        header: ["alpha", "batch_size", "trials", "true_quantile", "mean_abs_error", "std_error"].map(String::from).to_vec(),
        rows,
    });
    s
}

// --------------------------------------------------------------- gradients

/// A smooth elementwise/reduction expression mixing most primitives.
struct Expression {
    coef: Vec<f64>,
}

impl ScalarFn for Expression {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, p: Var) -> Var {
        let n = self.coef.len();
        let c = g.constant_f64(1, n, &self.coef);
        let a = g.mul(p, c);
        let t = g.tanh(a);
        let e = g.exp(t);
        let sp = g.softplus(p);
        let sp1 = g.add_const(sp, 1.0);
        let l = g.log(sp1);
        let sq = g.square(p);
        let ls = g.mul(l, sq);
        let d = g.div(e, sp1);
        let s1 = g.add(ls, d);
        let s2 = g.sub(s1, t);
        let s3 = g.scale(s2, 0.7);
        g.mean(s3)
    }
}

/// `sum((A·B)²)` with A (r×m) and B (m×c) taken from the parameter row.
struct Bilinear {
    r: usize,
    m: usize,
    c: usize,
}

impl ScalarFn for Bilinear {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, p: Var) -> Var {
        let a = g.slice(p, 0, self.r, self.m);
        let b = g.slice(p, self.r * self.m, self.m, self.c);
        let ab = g.matmul(a, b);
        let t = g.tanh(ab);
        let sq = g.square(t);
        g.sum(sq)
    }
}

fn random_points(rng: &mut StreamRng, max_n: usize) -> Vec<Point> {
    let n = rng.random_range(1..=max_n);
    (0..n).map(|_| Point::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

fn central_difference(f: impl Fn(&ParamVector) -> f64, params: &ParamVector, h: f64) -> Vec<f64> {
    let base = params.values().to_vec();
    (0..base.len())
        .map(|j| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = f(&params.with_values(plus).expect("finite"));
            let fm = f(&params.with_values(minus).expect("finite"));
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn grad_vs_fd<F: ScalarFn>(loss: &F, params: &ParamVector) -> f64 {
    let g = diffcore::gradient(loss, params).expect("finite");
    let fd = central_difference(|p| diffcore::value(loss, p).expect("finite"), params, 1e-6);
    relative_error(g.values(), &fd)
}

/// Largest relative error of reverse-mode gradients against central
/// differences over `n_cases` random smooth losses, with the worst case.
pub fn gradient_cases(seed: u64, n_cases: usize) -> (f64, usize) {
    let mut worst = (0.0f64, 0usize);
    for case in 0..n_cases {
        let mut rng = rng_for(seed, 6, case as u64);
        let err = match case % 4 {
            0 => {
                let hidden = rng.random_range(2..=6);
                let spec = MlpSpec::new(vec![1, hidden, rng.random_range(2..=5), 1], Activation::Tanh).expect("valid");
                let params = spec.init(&mut rng);
                let data = random_points(&mut rng, 8);
                grad_vs_fd(&mlp_task_loss(&spec, &data).expect("non-empty"), &params)
            }
            1 => {
                let w = rng.random_range(3..=5);
                let spec = CnpSpec { activation: Activation::Tanh, ..CnpSpec::with_width(w) };
                let params = spec.init(&mut rng);
                let ctx = random_points(&mut rng, 5);
                let tgt = random_points(&mut rng, 5);
                grad_vs_fd(&cnp_task_loss(&spec, &ctx, &tgt).expect("non-empty"), &params)
            }
            2 => {
                let n = rng.random_range(2..=10);
                let coef = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
                let params = ParamVector::flat((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("finite");
                grad_vs_fd(&Expression { coef }, &params)
            }
            _ => {
                let (r, m, c) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=3));
                let params = ParamVector::flat((0..r * m + m * c).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite");
                grad_vs_fd(&Bilinear { r, m, c }, &params)
            }
        };
        if err > worst.0 || err.is_nan() {
            worst = (err, case);
        }
    }
    worst
}

/// Exact meta-gradients of random sinusoid-network tasks against central
/// differences of θ ↦ outer(θ − λ∇inner(θ)). Returns, per case, the exact
/// and first-order relative errors.
pub fn meta_gradient_cases(seed: u64, n_cases: usize) -> Vec<(f64, f64, f64)> {
    let spec = MlpSpec::sinusoid();
    (0..n_cases)
        .map(|case| {
            let mut rng = rng_for(seed, 7, case as u64);
            let lr = if case % 2 == 0 { 0.01 } else { 0.1 };
            let params = spec.init(&mut rng);
            let task = SineTask::new(rng.random_range(0.1..5.0), rng.random_range(0.0..std::f64::consts::PI)).expect("in range");
            let data = sample_task_data(&task, 5, 5, &mut rng).expect("non-empty");
            let inner = mlp_task_loss(&spec, &data.context).expect("non-empty");
            let outer = mlp_task_loss(&spec, &data.target).expect("non-empty");
            let exact = meta_gradient(&inner, &outer, &params, lr, GradMode::Exact).expect("finite");
            let first = meta_gradient(&inner, &outer, &params, lr, GradMode::FirstOrder).expect("finite");
            let composite = |p: &ParamVector| {
                let adapted = inner_adapt(p, &inner, lr).expect("finite");
                diffcore::value(&outer, &adapted).expect("finite")
            };
            let fd = central_difference(composite, &params, 1e-6);
            (lr, relative_error(exact.grad.values(), &fd), relative_error(first.grad.values(), &fd))
        })
        .collect()
}

pub fn gradient_suite(seed: u64) -> SuiteReport {
    let mut s = SuiteReport::new("gradients", seed);
    let (worst, case) = gradient_cases(seed, 100);
    s.check("reverse_mode_vs_fd_100_cases", worst < 1e-5, format!("max relative error {worst:.3e} (case {case})"));
    for (i, (lr, exact, first)) in meta_gradient_cases(seed, 4).into_iter().enumerate() {
        s.check(
            format!("meta_gradient_case_{i}"),
            exact < 1e-4,
            format!("inner lr {lr}: exact relative error {exact:.3e}, first-order {first:.3e}"),
        );
    }
    s
}

// -------------------------------------------------------------- principles

/// Seeded sinusoid batch and initial parameters for equivalence checks.
pub fn principle_fixture(seed: u64, spec: &MlpSpec, batch: usize) -> (TrainConfig, Vec<TaskData>, ParamVector) {
    let cfg = TrainConfig {
        model: ModelSpec::Mlp(spec.clone()),
        principle: PrincipleConfig::expected_risk(),
        inner_lr: 0.01,
        optimizer: OptimizerConfig::default(),
        meta_batch_size: batch,
        shots: 5,
        targets: 5,
        iterations: 1,
        seed,
        eval_every: 0,
        checkpoint_every: 0,
        grad_mode: GradMode::Exact,
    };
    let tasks = TaskSource::Sine(SineDistConfig { p_hard: 0.3, ..Default::default() }).sample_batch(&cfg, 1).expect("valid config");
    let params = cfg.model.init(&mut seeding::stream(seed, seeding::INIT, 0, 0));
    (cfg, tasks, params)
}

/// Parameters after one update under `principle`.
pub fn updated_params(cfg: &TrainConfig, principle: PrincipleConfig, tasks: &[TaskData], params: &ParamVector) -> ParamVector {
    let cfg = TrainConfig { principle, ..cfg.clone() };
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    maml_meta_step(params, tasks, &cfg, &mut opt, 1).expect("finite step").params
}

pub fn principle_suite(seed: u64) -> SuiteReport {
    let mut s = SuiteReport::new("principles", seed);
    let spec = MlpSpec::sinusoid();
    for (i, b) in [25usize, 10, 7].into_iter().enumerate() {
        let (cfg, tasks, params) = principle_fixture(seed.wrapping_add(i as u64), &spec, b);
        let erm = updated_params(&cfg, PrincipleConfig::expected_risk(), &tasks, &params);
        let cvar0 = updated_params(&cfg, PrincipleConfig::cvar(0.0), &tasks, &params);
        s.check(format!("cvar0_equals_expected_risk_b{b}"), erm == cvar0, "bitwise comparison of updated parameters");
        let worst = updated_params(&cfg, PrincipleConfig::worst_in_batch(), &tasks, &params);
        // Largest α with ⌊(1−α)B⌋ = 1.
        let k1 = updated_params(&cfg, PrincipleConfig::cvar(1.0 - 1.0 / b as f64), &tasks, &params);
        s.check(format!("k1_cvar_equals_worst_in_batch_b{b}"), worst == k1, "bitwise comparison of updated parameters");
    }

    let (cfg, tasks, params) = principle_fixture(seed, &spec, 1);
    let reference = updated_params(&cfg, PrincipleConfig::expected_risk(), &tasks, &params);
    let all_same = [PrincipleConfig::worst_in_batch(), PrincipleConfig::cvar(0.7), PrincipleConfig::group_dro(1.0)]
        .into_iter()
        .all(|p| updated_params(&cfg, p, &tasks, &params) == reference);
    s.check("singleton_batch_all_principles_agree", all_same, "B = 1");

    let mut rng = rng_for(seed, 8, 0);
    let mut losses: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..5.0)).collect();
    losses.shuffle(&mut rng);
    let batch = RiskBatch::from_losses(&losses).expect("finite");
    let shifted = RiskBatch::from_losses(&losses.iter().map(|l| l + 3.25).collect::<Vec<_>>()).expect("finite");
    let w = PrincipleConfig::group_dro(0.5).task_weights(&batch).expect("valid");
    let w2 = PrincipleConfig::group_dro(0.5).task_weights(&shifted).expect("valid");
    let sum: f64 = w.iter().sum();
    let shift_err = w.iter().zip(&w2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    s.check("group_dro_weights", (sum - 1.0).abs() < 1e-12 && shift_err < 1e-12, format!("sum {sum}, max shift change {shift_err:.2e}"));
    s
}

// ------------------------------------------------------------------ runner

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![sandwich_suite(seed), risk_invariant_suite(seed), quantile_suite(seed), gradient_suite(seed), principle_suite(seed)]
}

/// Writes `selftest.csv` (suite,check,passed,detail), `selftest.json` and the
/// suites' tables into `dir`.
pub fn write_reports(dir: &Path, reports: &[SuiteReport]) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let summary = dir.join("selftest.csv");
    csvio::write_rows(
        &summary,
        &["suite", "check", "passed", "detail"],
        reports.iter().flat_map(|r| r.checks.iter().map(move |c| [r.name.clone(), c.name.clone(), c.passed.to_string(), c.detail.clone()])),
    )?;
    let json = dir.join("selftest.json");
    std::fs::write(&json, serde_json::to_string_pretty(reports).map_err(io::Error::other)?)?;
    let mut written = vec![summary, json];
    for a in reports.iter().flat_map(|r| &r.artifacts) {
        let p = dir.join(&a.file_name);
        csvio::write_rows(&p, &a.header, &a.rows)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandwich_suite_passes_and_wrong_kappa_fails() {
        assert!(sandwich_suite_with(3, 20, kappa).passed());
        let mutated = sandwich_suite_with(3, 20, |a| kappa(a).map(|k| k - 1.0));
        assert!(!mutated.passed());
        assert_eq!(mutated.failures().next().unwrap().name, "hand_instance");
        let mutated = sandwich_suite_with(3, 20, |a| kappa(a).map(|k| k + 1.0));
        assert!(!mutated.passed());
    }

    #[test]
    fn cheap_suites_pass() {
        for s in [risk_invariant_suite(1), principle_suite(1)] {
            assert!(s.passed(), "{:?}", s.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn gradient_cases_are_accurate() {
        let (worst, case) = gradient_cases(2, 24);
        assert!(worst < 1e-5, "{worst} at {case}");
    }

    #[test]
    fn reports_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_reports(dir.path(), &[sandwich_suite_with(0, 5, kappa)]).unwrap();
        assert_eq!(written.len(), 3);
        let (header, rows) = csvio::read_rows(dir.path().join("sandwich.csv")).unwrap();
        assert_eq!(header.len(), 9);
        assert_eq!(rows.len(), 6);
    }
}
