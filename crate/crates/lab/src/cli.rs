//! The `selfmodel` command line. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use selfmodel_core::env::{CrawlerEnv, TaskKind, TaskSpec};
use selfmodel_core::harness::train_in_model;
use selfmodel_core::ppo::{evaluate_policy, train, PolicyValuePair, PpoConfig};
use selfmodel_core::rng::{mix_seed, rng_from_seed};
use selfmodel_core::self_model::{collect_random, fit_self_model, FitConfig, DEFAULT_EPISODE_LEN};

use crate::config::ExperimentConfig;
use crate::formats::{self, write_atomic};
use crate::sweep;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "selfmodel", version, about = "Learned self-models for planar crawlers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    /// PPO on the real crawler.
    Mfrl,
    /// PPO inside a learned self-model.
    Dyna,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    Walk,
    Jump,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Walk => TaskKind::Walk,
            Task::Jump => TaskKind::Jump,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record random-action transitions from a preset.
    Collect {
        #[arg(long)]
        env: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPISODE_LEN)]
        episode_len: usize,
        /// Experiment config supplying crawler overrides.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a self-model to a dataset file.
    FitModel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a policy; `--budget` counts real steps for mfrl and model steps for dyna.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        env: String,
        #[arg(long, value_enum, default_value = "walk")]
        task: Task,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Dataset to fit a self-model from (dyna).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fitted self-model (dyna); takes precedence over `--data`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mean-action returns of a saved agent on the real crawler.
    Eval {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, value_enum, default_value = "walk")]
        task: Task,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every cell of an experiment config into a run directory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Regression CSV and figure from a run directory's sweep.csv.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        csv_out: Option<PathBuf>,
        #[arg(long)]
        svg_out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<selfmodel_core::Error> for Failure {
    fn from(e: selfmodel_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<formats::FormatError> for Failure {
    fn from(e: formats::FormatError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml_str(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn execute(command: Command) -> Outcome {
    match command {
        Command::Collect {
            env,
            n,
            seed,
            out,
            episode_len,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let crawler = cfg.harness.crawler(&env)?;
            let data = collect_random(&crawler, n, episode_len, seed)?;
            write(&out, &formats::encode_dataset(&data))?;
            println!(
                "wrote {} transitions (obs_dim {}, act_dim {}) to {}",
                data.len(),
                data.obs_dim(),
                data.act_dim(),
                out.display()
            );
        }
        Command::FitModel {
            data,
            out,
            seed,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let dataset = formats::decode_dataset(&read(&data)?)?;
            let fit = FitConfig {
                seed,
                ..cfg.harness.fit
            };
            let model = fit_self_model(&dataset, &fit)?;
            write(&out, &formats::encode_self_model(&model))?;
            let r = model.report();
            println!(
                "train_loss {:.6} validation_loss {:.6} epochs {} (best {}) -> {}",
                r.train_loss,
                r.validation_loss,
                r.epochs_run,
                r.best_epoch,
                out.display()
            );
        }
        Command::Train {
            mode,
            env,
            task,
            budget,
            seed,
            out,
            data,
            model,
            config,
        } => {
            if matches!(mode, Mode::Dyna) && data.is_none() && model.is_none() {
                return Err(Failure::Usage(
                    "train --mode dyna needs --model <file> or --data <file>".into(),
                ));
            }
            let cfg = load_config(config.as_deref())?;
            let crawler = cfg.harness.crawler(&env)?;
            let task = TaskSpec::new(task.into(), &crawler);
            let ppo = PpoConfig {
                total_step_budget: budget,
                ..cfg.harness.ppo.clone()
            };
            let mut agent = PolicyValuePair::new(
                crawler.observation_dim(),
                crawler.dof(),
                &mut rng_from_seed(mix_seed(&[seed, 0])),
            )?;
            let env_seed = mix_seed(&[seed, 1]);
            let train_seed = mix_seed(&[seed, 2]);
            match mode {
                Mode::Mfrl => {
                    let mut real = CrawlerEnv::new(crawler.clone(), task, env_seed)?;
                    let log = train(&mut agent, &mut real, &ppo, train_seed)?;
                    println!(
                        "mfrl: {} real steps, {} episodes, {} updates",
                        real.usage().steps,
                        log.episodes,
                        log.updates.len()
                    );
                }
                Mode::Dyna => {
                    let self_model = match (&model, &data) {
                        (Some(m), _) => formats::decode_self_model(&read(m)?)?,
                        (None, Some(d)) => {
                            let dataset = formats::decode_dataset(&read(d)?)?;
                            let fit = FitConfig {
                                seed: mix_seed(&[seed, 3]),
                                ..cfg.harness.fit.clone()
                            };
                            fit_self_model(&dataset, &fit)?
                        }
                        (None, None) => unreachable!("checked above"),
                    };
                    if self_model.obs_dim() != crawler.observation_dim()
                        || self_model.act_dim() != crawler.dof()
                    {
                        return Err(Failure::Runtime(anyhow::anyhow!(
                            "self-model shape ({}, {}) does not match {env} ({}, {})",
                            self_model.obs_dim(),
                            self_model.act_dim(),
                            crawler.observation_dim(),
                            crawler.dof()
                        )));
                    }
                    let (log, usage, model_steps, diverged) = train_in_model(
                        &mut agent,
                        &self_model,
                        &crawler,
                        &task,
                        &ppo,
                        env_seed,
                        train_seed,
                    )?;
                    println!(
                        "dyna: {model_steps} model steps, {} real resets, {} episodes ({diverged} diverged), {} updates",
                        usage.resets, log.episodes, log.updates.len()
                    );
                }
            }
            write(&out, &formats::encode_agent(&agent))?;
            println!("agent -> {}", out.display());
        }
        Command::Eval {
            agent,
            env,
            task,
            episodes,
            seed,
            config,
        } => {
            if episodes == 0 {
                return Err(Failure::Usage("--episodes must be positive".into()));
            }
            let cfg = load_config(config.as_deref())?;
            let crawler = cfg.harness.crawler(&env)?;
            let task = TaskSpec::new(task.into(), &crawler);
            let agent = formats::decode_agent(&read(&agent)?)?;
            let eval = evaluate_policy(&agent, &crawler, &task, episodes, seed)?;
            println!("mean_return {}", eval.mean);
            println!("std_return {}", eval.std());
            for (k, r) in eval.returns.iter().enumerate() {
                println!("episode {k} {r}");
            }
        }
        Command::Sweep { config, out, jobs } => {
            if jobs == 0 {
                return Err(Failure::Usage("--jobs must be at least 1".into()));
            }
            let cfg = load_config(Some(&config))?;
            let Some(out) = out.or_else(|| cfg.output_dir.clone()) else {
                return Err(Failure::Usage(
                    "sweep needs --out or output_dir in the config".into(),
                ));
            };
            let result = sweep::run_sweep(&cfg, &out, jobs)?;
            let failed = result.cells.iter().filter(|c| !c.is_ok()).count();
            for r in &result.regressions {
                match &r.fit {
                    Some(f) => println!(
                        "{} |D|={}: slope {:.4} r_squared {:.3} over {} dof groups",
                        r.task.name(),
                        r.budget,
                        f.slope,
                        f.r_squared,
                        f.n_points
                    ),
                    None => println!("{} |D|={}: too few groups to fit", r.task.name(), r.budget),
                }
            }
            println!("{} cells ({failed} failed) -> {}", result.cells.len(), out.display());
        }
        Command::Report {
            runs,
            csv_out,
            svg_out,
        } => {
            let written = sweep::report(&runs, csv_out.as_deref(), svg_out.as_deref())?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
