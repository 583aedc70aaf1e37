use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use drml_core::config::ExperimentConfig;
use drml_core::experiment::{self, ExperimentError, SweepAxis};
use drml_core::selftest;

/// Tail-risk meta-learning experiments.
///
/// Exit status: 0 on success, 1 when a run fails, 2 for usage, config or
/// missing-input errors.
#[derive(Parser, Debug)]
#[command(name = "drml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a TOML config into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to `out_dir` from the config. With several
        /// seeds each run goes to `<out>/seed_<s>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to train (comma separated); overrides the config.
        #[arg(long = "seeds", alias = "seed", value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
    },
    /// Evaluate a checkpoint, writing one metrics file per α.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config to use instead of the one embedded in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "alphas", alias = "alpha", value_delimiter = ',', num_args = 1..)]
        alphas: Vec<f64>,
        /// Seed of the evaluation data.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every (value, seed) pair along one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long = "seeds", alias = "seed", value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adapted MSE over the sinusoid amplitude × phase grid.
    Landscape {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in check suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the CSV reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    Alpha,
    #[value(name = "batch_size", alias = "batch-size")]
    BatchSize,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Alpha => SweepAxis::Alpha,
            Axis::BatchSize => SweepAxis::BatchSize,
        }
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    flag.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| ExperimentError::Usage("no output directory: pass --out or set out_dir in the config".into()))
}

fn load_optional(path: Option<&Path>) -> Result<Option<ExperimentConfig>, ExperimentError> {
    Ok(path.map(ExperimentConfig::load).transpose()?)
}

fn checkpoint_dir(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<bool, ExperimentError> {
    match cli.command {
        Command::Train { config, out, seeds } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let seeds = if seeds.is_empty() { cfg.seed_list() } else { seeds };
            for &seed in &seeds {
                let dir = if seeds.len() == 1 { out.clone() } else { out.join(format!("seed_{seed}")) };
                let run = experiment::run_train(&cfg.with_seed(seed), &dir)?;
                let last = run.trace.last().expect("at least one iteration");
                println!(
                    "seed {seed}: {} iterations, final mean loss {:.6}, checkpoint {}",
                    last.iteration,
                    last.mean_loss,
                    run.final_checkpoint.display()
                );
            }
        }
        Command::Eval { checkpoint, config, alphas, seed, out } => {
            let cfg = load_optional(config.as_deref())?;
            let out = out.unwrap_or_else(|| checkpoint_dir(&checkpoint));
            let alphas = (!alphas.is_empty()).then_some(alphas.as_slice());
            for (path, r) in experiment::run_eval(&checkpoint, cfg.as_ref(), alphas, seed, &out)? {
                println!(
                    "alpha {}: average {:.6}, worst {:.6}, cvar {:.6} over {} tasks -> {}",
                    r.alpha_eval,
                    r.average,
                    r.worst,
                    r.cvar,
                    r.n_tasks,
                    path.display()
                );
            }
        }
        Command::Sweep { config, axis, values, seeds, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let seeds = if seeds.is_empty() { cfg.seed_list() } else { seeds };
            let summary = experiment::run_sweep(&cfg, axis.into(), &values, &seeds, &out)?;
            for e in &summary.entries {
                match &e.error {
                    None => println!("{} seed {}: ok", e.label, e.seed),
                    Some(err) => println!("{} seed {}: FAILED: {err}", e.label, e.seed),
                }
            }
            if let Some(table) = &summary.comparison {
                println!("comparison table: {}", table.display());
            }
            if summary.failed > 0 {
                eprintln!("{} of {} runs failed", summary.failed, summary.entries.len());
                return Ok(false);
            }
        }
        Command::Landscape { checkpoint, config, seed, out } => {
            let cfg = load_optional(config.as_deref())?;
            let out = out.unwrap_or_else(|| checkpoint_dir(&checkpoint));
            let path = experiment::run_landscape(&checkpoint, cfg.as_ref(), seed, &out)?;
            println!("{}", path.display());
        }
        Command::Selftest { seed, out } => {
            let reports = selftest::run_all(seed);
            for r in &reports {
                println!("[{}] {} (seed {})", if r.passed() { "PASS" } else { "FAIL" }, r.name, r.seed);
                for c in &r.checks {
                    println!("    {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                }
            }
            if let Some(dir) = out {
                for p in selftest::write_reports(&dir, &reports)? {
                    println!("wrote {}", p.display());
                }
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} suites, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
