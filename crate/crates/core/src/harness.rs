//! Matched-budget comparison of model-free PPO against PPO trained inside a
//! learned self-model, plus the aggregation and regression of its results.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::env::{preset, CrawlerConfig, CrawlerEnv, TaskKind, TaskSpec, Usage, PRESET_NAMES};
use crate::error::{Error, Result};
use crate::ppo::{
    evaluate_policy, evaluate_random, train, Evaluation, PolicyValuePair, PpoConfig, TrainingLog,
    DEFAULT_EVAL_EPISODES,
};
use crate::rng::{mix_seed, rng_from_seed};
use crate::self_model::{
    collect_random_from, fit_self_model, FitConfig, ForwardModel, ModelEnv, SelfModel,
    TransitionDataset, DEFAULT_EPISODE_LEN,
};

pub const DEFAULT_PPO_BUDGET_MODEL: u64 = 200_000;
pub const DEFAULT_BUDGETS: [usize; 3] = [500, 1000, 2000];
pub const DEFAULT_SEEDS_PER_CELL: usize = 10;

/// Stream tags mixed into per-cell seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Random = 1,
    Mfrl = 2,
    SelfModel = 3,
    Evaluation = 4,
    AgentInit = 5,
    Collection = 6,
    Fit = 7,
}

/// Settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub ppo: PpoConfig,
    pub fit: FitConfig,
    pub ppo_budget_model: u64,
    pub eval_episodes: usize,
    pub collect_episode_len: usize,
    /// Crawler parameter overrides applied to every preset, in order.
    pub crawler_overrides: Vec<(String, f64)>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            fit: FitConfig::default(),
            ppo_budget_model: DEFAULT_PPO_BUDGET_MODEL,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            collect_episode_len: DEFAULT_EPISODE_LEN,
            crawler_overrides: Vec::new(),
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.eval_episodes == 0 || self.collect_episode_len == 0 {
            return Err(Error::InvalidConfig(
                "eval_episodes and collect_episode_len must be positive".into(),
            ));
        }
        self.crawler(PRESET_NAMES[0])?;
        Ok(())
    }

    /// A preset with the configured overrides applied.
    pub fn crawler(&self, name: &str) -> Result<CrawlerConfig> {
        let mut config = preset(name)?;
        for (k, v) in &self.crawler_overrides {
            config.set_param(k, *v)?;
        }
        Ok(config)
    }
}

/// One (preset, budget, task, seed) cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpec {
    pub preset: String,
    pub dof: usize,
    /// `|D|`: real transitions for both arms.
    pub budget: usize,
    pub task: TaskKind,
    pub seed_index: u64,
    pub master_seed: u64,
}

impl CellSpec {
    pub fn new(
        preset_name: &str,
        budget: usize,
        task: TaskKind,
        seed_index: u64,
        master_seed: u64,
    ) -> Result<Self> {
        let config = preset(preset_name)?;
        Ok(Self {
            preset: preset_name.to_string(),
            dof: config.dof(),
            budget,
            task,
            seed_index,
            master_seed,
        })
    }

    pub fn preset_index(&self) -> usize {
        PRESET_NAMES
            .iter()
            .position(|p| *p == self.preset)
            .unwrap_or(PRESET_NAMES.len())
    }

    /// Real steps given to the model-free arm.
    pub fn ppo_budget_real(&self) -> u64 {
        self.budget as u64
    }

    /// Seed of one stream: a mix of master seed, preset, budget, seed index,
    /// task and stream tag.
    pub fn stream_seed(&self, stream: Stream) -> u64 {
        mix_seed(&[
            self.master_seed,
            self.preset_index() as u64,
            self.budget as u64,
            self.seed_index,
            self.task as u64,
            stream as u64,
        ])
    }

    /// Sort key; aggregation is independent of execution order.
    pub fn key(&self) -> (usize, usize, TaskKind, u64) {
        (self.preset_index(), self.budget, self.task, self.seed_index)
    }

    fn task_spec(&self, config: &CrawlerConfig) -> TaskSpec {
        TaskSpec::new(self.task, config)
    }
}

/// Result of a trained arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutcome {
    pub agent: PolicyValuePair,
    pub log: TrainingLog,
    pub evaluation: Evaluation,
    /// Real-environment usage of training alone.
    pub real_usage: Usage,
}

/// Outcome of the self-model arm, with the fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfModelOutcome {
    pub arm: ArmOutcome,
    pub model: SelfModel,
    /// Real transitions consumed by collection.
    pub dataset_steps: u64,
    pub diverged_episodes: u64,
    pub model_steps: u64,
}

fn initial_agent(spec: &CellSpec, config: &CrawlerConfig) -> Result<PolicyValuePair> {
    PolicyValuePair::new(
        config.observation_dim(),
        config.dof(),
        &mut rng_from_seed(spec.stream_seed(Stream::AgentInit)),
    )
}

pub fn run_random_cell(spec: &CellSpec, harness: &HarnessConfig) -> Result<Evaluation> {
    let config = harness.crawler(&spec.preset)?;
    evaluate_random(
        &config,
        &spec.task_spec(&config),
        harness.eval_episodes,
        spec.stream_seed(Stream::Evaluation),
    )
}

/// PPO on the real crawler for exactly `|D|` steps.
pub fn run_mfrl_cell(spec: &CellSpec, harness: &HarnessConfig) -> Result<ArmOutcome> {
    let config = harness.crawler(&spec.preset)?;
    let task = spec.task_spec(&config);
    let seed = spec.stream_seed(Stream::Mfrl);
    let mut env = CrawlerEnv::new(config.clone(), task, seed)?;
    let mut agent = initial_agent(spec, &config)?;
    let ppo = PpoConfig {
        total_step_budget: spec.ppo_budget_real(),
        ..harness.ppo.clone()
    };
    let log = train(&mut agent, &mut env, &ppo, seed)?;
    let real_usage = env.usage();
    if real_usage.steps != spec.ppo_budget_real() {
        return Err(Error::InvalidConfig(format!(
            "model-free arm used {} real steps, budget {}",
            real_usage.steps, spec.budget
        )));
    }
    let evaluation = evaluate_policy(
        &agent,
        &config,
        &task,
        harness.eval_episodes,
        spec.stream_seed(Stream::Evaluation),
    )?;
    Ok(ArmOutcome {
        agent,
        log,
        evaluation,
        real_usage,
    })
}

/// Collects `budget` random transitions with the walk task's reset rules.
pub fn collect_cell_dataset(
    config: &CrawlerConfig,
    budget: usize,
    episode_len: usize,
    seed: u64,
) -> Result<(TransitionDataset, Usage)> {
    let mut env = CrawlerEnv::new(config.clone(), TaskSpec::walk(config), mix_seed(&[seed, 0]))?;
    collect_random_from(&mut env, budget, episode_len, mix_seed(&[seed, 1]))
}

/// Trains `agent` with PPO inside `model`. Every episode starts from a real
/// reset drawn from `reset_seed`; the real crawler is never stepped.
pub fn train_in_model<M: ForwardModel>(
    agent: &mut PolicyValuePair,
    model: M,
    config: &CrawlerConfig,
    task: &TaskSpec,
    ppo: &PpoConfig,
    reset_seed: u64,
    train_seed: u64,
) -> Result<(TrainingLog, Usage, u64, u64)> {
    let real = CrawlerEnv::new(config.clone(), *task, reset_seed)?;
    let mut env = ModelEnv::new(model, real);
    let log = train(agent, &mut env, ppo, train_seed)?;
    let usage = env.real_usage();
    if usage.steps != 0 {
        return Err(Error::InvalidConfig("model training stepped the real crawler".into()));
    }
    Ok((log, usage, env.model_steps(), env.diverged_episodes()))
}

/// Collect `|D|` real transitions, fit a self-model, train PPO inside it and
/// evaluate on the real crawler.
pub fn run_selfmodel_cell(spec: &CellSpec, harness: &HarnessConfig) -> Result<SelfModelOutcome> {
    let config = harness.crawler(&spec.preset)?;
    let task = spec.task_spec(&config);
    let (data, collect_usage) = collect_cell_dataset(
        &config,
        spec.budget,
        harness.collect_episode_len,
        spec.stream_seed(Stream::Collection),
    )?;
    if collect_usage.steps != spec.budget as u64 {
        return Err(Error::InvalidConfig("collection overran its budget".into()));
    }
    let fit = FitConfig {
        seed: spec.stream_seed(Stream::Fit),
        ..harness.fit.clone()
    };
    let model = fit_self_model(&data, &fit)?;
    let mut agent = initial_agent(spec, &config)?;
    let ppo = PpoConfig {
        total_step_budget: harness.ppo_budget_model,
        ..harness.ppo.clone()
    };
    let seed = spec.stream_seed(Stream::SelfModel);
    let (log, real_usage, model_steps, diverged_episodes) =
        train_in_model(&mut agent, &model, &config, &task, &ppo, seed, seed)?;
    let evaluation = evaluate_policy(
        &agent,
        &config,
        &task,
        harness.eval_episodes,
        spec.stream_seed(Stream::Evaluation),
    )?;
    Ok(SelfModelOutcome {
        arm: ArmOutcome {
            agent,
            log,
            evaluation,
            real_usage,
        },
        model,
        dataset_steps: collect_usage.steps,
        diverged_episodes,
        model_steps,
    })
}

/// Scores of one cell. `pct_improvement` is filled in by [`aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub spec: CellSpec,
    pub score_random: f64,
    pub score_mfrl: f64,
    pub score_selfmodel: f64,
    pub pct_improvement: f64,
    pub raw_ratio: f64,
    pub model_val_loss: f64,
    pub wall_time_s: Option<f64>,
    /// Real steps used for learning by each arm.
    pub real_steps_mfrl: u64,
    pub real_steps_selfmodel: u64,
    /// Real resets the self-model arm used as rollout seeds.
    pub seed_resets_selfmodel: u64,
    pub diverged_episodes: u64,
    pub error: Option<String>,
}

impl CellResult {
    fn failed(spec: CellSpec, error: &Error) -> Self {
        Self {
            spec,
            score_random: f64::NAN,
            score_mfrl: f64::NAN,
            score_selfmodel: f64::NAN,
            pct_improvement: f64::NAN,
            raw_ratio: f64::NAN,
            model_val_loss: f64::NAN,
            wall_time_s: None,
            real_steps_mfrl: 0,
            real_steps_selfmodel: 0,
            seed_resets_selfmodel: 0,
            diverged_episodes: 0,
            error: Some(error.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs all three arms of a cell. Failures are recorded, not returned.
pub fn run_cell(spec: &CellSpec, harness: &HarnessConfig) -> CellResult {
    let run = || -> Result<CellResult> {
        harness.validate()?;
        let random = run_random_cell(spec, harness)?;
        let mfrl = run_mfrl_cell(spec, harness)?;
        let sm = run_selfmodel_cell(spec, harness)?;
        Ok(CellResult {
            spec: spec.clone(),
            score_random: random.mean,
            score_mfrl: mfrl.evaluation.mean,
            score_selfmodel: sm.arm.evaluation.mean,
            pct_improvement: f64::NAN,
            raw_ratio: sm.arm.evaluation.mean / mfrl.evaluation.mean,
            model_val_loss: sm.model.report().validation_loss,
            wall_time_s: None,
            real_steps_mfrl: mfrl.real_usage.steps,
            real_steps_selfmodel: sm.dataset_steps + sm.arm.real_usage.steps,
            seed_resets_selfmodel: sm.arm.real_usage.resets,
            diverged_episodes: sm.diverged_episodes,
            error: None,
        })
    };
    run().unwrap_or_else(|e| CellResult::failed(spec.clone(), &e))
}

/// Improvement of the self-model arm over the model-free arm, in percent of
/// the model-free arm's gain over random. The denominator is floored at
/// `max(0.05 * |random - best_known|, 1e-3)`.
pub fn percent_improvement(
    score_selfmodel: f64,
    score_mfrl: f64,
    score_random: f64,
    best_known: f64,
) -> f64 {
    let floor = (0.05 * (score_random - best_known).abs()).max(1e-3);
    100.0 * (score_selfmodel - score_mfrl) / (score_mfrl - score_random).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_r_squared(points: &[(f64, f64)]) -> Result<Regression> {
    let n = points.len();
    let distinct = points
        .iter()
        .any(|p| points.iter().any(|q| q.0 != p.0));
    if n < 2 || !distinct {
        return Err(Error::InsufficientData(
            "regression needs at least two distinct x values".into(),
        ));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("regression points"));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(Regression {
        slope,
        intercept,
        r_squared,
        n_points: n,
    })
}

/// Median of the finite values, or `NaN` if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The grid a sweep runs over.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub master_seed: u64,
    pub presets: Vec<String>,
    pub budgets: Vec<usize>,
    pub seeds_per_cell: usize,
    pub tasks: Vec<TaskKind>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            master_seed: 0,
            presets: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            budgets: DEFAULT_BUDGETS.to_vec(),
            seeds_per_cell: DEFAULT_SEEDS_PER_CELL,
            tasks: vec![TaskKind::Walk],
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.presets.len() < 2 {
            return Err(Error::InvalidConfig("a sweep needs at least two presets".into()));
        }
        if self.seeds_per_cell == 0 || self.budgets.is_empty() || self.tasks.is_empty() {
            return Err(Error::InvalidConfig(
                "a sweep needs budgets, tasks and at least one seed".into(),
            ));
        }
        for p in &self.presets {
            preset(p)?;
        }
        Ok(())
    }

    /// Every cell, ordered by preset, budget, task and seed.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        self.validate()?;
        let mut cells = Vec::new();
        for p in &self.presets {
            for &b in &self.budgets {
                for &t in &self.tasks {
                    for s in 0..self.seeds_per_cell as u64 {
                        cells.push(CellSpec::new(p, b, t, s, self.master_seed)?);
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Per-(preset, budget, task) summary over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub preset: String,
    pub dof: usize,
    pub budget: usize,
    pub task: TaskKind,
    pub median_pct: f64,
    pub mean_pct: f64,
    pub best_known: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRegression {
    pub budget: usize,
    pub task: TaskKind,
    /// `None` when fewer than two dof groups have finite medians.
    pub fit: Option<Regression>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub groups: Vec<GroupSummary>,
    pub regressions: Vec<BudgetRegression>,
}

/// Sorts cells, fills in percent improvements, and fits median improvement
/// against dof for each budget and task.
pub fn aggregate(mut cells: Vec<CellResult>) -> SweepResult {
    cells.sort_by_key(|c| c.spec.key());

    let mut groups: Vec<GroupSummary> = Vec::new();
    let mut start = 0;
    while start < cells.len() {
        let s = &cells[start].spec;
        let group_key = (s.preset_index(), s.budget, s.task);
        let end = start
            + cells[start..]
                .iter()
                .take_while(|c| (c.spec.preset_index(), c.spec.budget, c.spec.task) == group_key)
                .count();
        let best_known = cells[start..end]
            .iter()
            .filter(|c| c.is_ok())
            .flat_map(|c| [c.score_random, c.score_mfrl, c.score_selfmodel])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut pcts = Vec::new();
        for c in &mut cells[start..end] {
            if c.is_ok() {
                c.pct_improvement =
                    percent_improvement(c.score_selfmodel, c.score_mfrl, c.score_random, best_known);
                pcts.push(c.pct_improvement);
            }
        }
        let s = &cells[start].spec;
        let finite: Vec<f64> = pcts.iter().copied().filter(|p| p.is_finite()).collect();
        groups.push(GroupSummary {
            preset: s.preset.clone(),
            dof: s.dof,
            budget: s.budget,
            task: s.task,
            median_pct: median(&finite),
            mean_pct: if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            best_known,
            n_ok: pcts.len(),
            n_failed: end - start - pcts.len(),
        });
        start = end;
    }

    let mut keys: Vec<(TaskKind, usize)> = groups.iter().map(|g| (g.task, g.budget)).collect();
    keys.sort();
    keys.dedup();
    let regressions = keys
        .into_iter()
        .map(|(task, budget)| {
            let points: Vec<(f64, f64)> = groups
                .iter()
                .filter(|g| g.task == task && g.budget == budget && g.median_pct.is_finite())
                .map(|g| (g.dof as f64, g.median_pct))
                .collect();
            BudgetRegression {
                budget,
                task,
                fit: fit_r_squared(&points).ok(),
            }
        })
        .collect();

    SweepResult {
        cells,
        groups,
        regressions,
    }
}

/// Returns of walk- and jump-trained policies that share one dataset and one
/// self-model, each evaluated on both tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    pub walk_policy_on_walk: Evaluation,
    pub walk_policy_on_jump: Evaluation,
    pub jump_policy_on_walk: Evaluation,
    pub jump_policy_on_jump: Evaluation,
    pub real_steps: u64,
}

/// Fits one self-model from `budget` random transitions and trains one
/// policy per task inside it, with no further real transitions.
pub fn run_task_transfer(
    config: &CrawlerConfig,
    budget: usize,
    seed: u64,
    harness: &HarnessConfig,
) -> Result<TransferResult> {
    let (data, usage) =
        collect_cell_dataset(config, budget, harness.collect_episode_len, mix_seed(&[seed, 1]))?;
    let fit = FitConfig {
        seed: mix_seed(&[seed, 2]),
        ..harness.fit.clone()
    };
    let model = fit_self_model(&data, &fit)?;
    let ppo = PpoConfig {
        total_step_budget: harness.ppo_budget_model,
        ..harness.ppo.clone()
    };
    let eval_seed = mix_seed(&[seed, 3]);
    let mut trained = Vec::new();
    for kind in [TaskKind::Walk, TaskKind::Jump] {
        let task = TaskSpec::new(kind, config);
        let mut agent = PolicyValuePair::new(
            config.observation_dim(),
            config.dof(),
            &mut rng_from_seed(mix_seed(&[seed, 4])),
        )?;
        let s = mix_seed(&[seed, 5, kind as u64]);
        let (_, real, _, _) = train_in_model(&mut agent, &model, config, &task, &ppo, s, s)?;
        debug_assert_eq!(real.steps, 0);
        trained.push(agent);
    }
    let eval = |agent: &PolicyValuePair, kind| {
        evaluate_policy(
            agent,
            config,
            &TaskSpec::new(kind, config),
            harness.eval_episodes,
            eval_seed,
        )
    };
    Ok(TransferResult {
        walk_policy_on_walk: eval(&trained[0], TaskKind::Walk)?,
        walk_policy_on_jump: eval(&trained[0], TaskKind::Jump)?,
        jump_policy_on_walk: eval(&trained[1], TaskKind::Walk)?,
        jump_policy_on_jump: eval(&trained[1], TaskKind::Jump)?,
        real_steps: usage.steps,
    })
}
