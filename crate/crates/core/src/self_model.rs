//! Learned forward models of the crawler's own dynamics.
//!
//! The pipeline is: [`collect_random`] gathers `(s, a, s')` tuples from the
//! real crawler under uniformly random actions, [`fit_self_model`] regresses
//! the normalized state delta on the normalized `[s, a]`, and [`ModelEnv`]
//! turns the fitted model into an [`Environment`] that starts every episode
//! from a real reset and then runs fully open loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{
    advance, observe, CrawlerConfig, CrawlerEnv, EnvStep, Environment, Observation,
    PhysicsState, SeedObservation, TaskSpec, Usage,
};
use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, GradientSet};
use crate::rng::{mix_seed, rng_from_seed};

/// Lower bound on every per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and (population, floored) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Two-pass statistics over `rows`, each of length `dim`.
    pub fn from_rows<'a, I>(rows: I, dim: usize) -> Self
    where
        I: Iterator<Item = &'a [f64]> + Clone,
    {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
            n += 1;
        }
        let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| libm::sqrt(v * inv).max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(x, (m, s))| (x - m) / s),
        );
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len()
            && self.mean.iter().all(|m| m.is_finite())
            && self.std.iter().all(|s| s.is_finite() && *s >= STD_FLOOR)
    }
}

/// Normalization statistics for observations, actions and state deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub observation: ChannelStats,
    pub action: ChannelStats,
    pub delta: ChannelStats,
}

impl NormStats {
    pub fn from_transitions(transitions: &[Transition], obs_dim: usize, act_dim: usize) -> Self {
        let deltas: Vec<Vec<f64>> = transitions.iter().map(Transition::delta).collect();
        Self {
            observation: ChannelStats::from_rows(
                transitions.iter().map(|t| t.state.as_slice()),
                obs_dim,
            ),
            action: ChannelStats::from_rows(
                transitions.iter().map(|t| t.action.as_slice()),
                act_dim,
            ),
            delta: ChannelStats::from_rows(deltas.iter().map(Vec::as_slice), obs_dim),
        }
    }

    fn check(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        check_len("observation statistics", obs_dim, self.observation.dim())?;
        check_len("action statistics", act_dim, self.action.dim())?;
        check_len("delta statistics", obs_dim, self.delta.dim())?;
        if [&self.observation, &self.action, &self.delta]
            .iter()
            .all(|c| c.is_valid())
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "normalization statistics must be finite with std >= floor".into(),
            ))
        }
    }
}

/// One real `(s, a, s')` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

impl Transition {
    pub fn delta(&self) -> Vec<f64> {
        self.next_state
            .iter()
            .zip(&self.state)
            .map(|(n, s)| n - s)
            .collect()
    }
}

/// The buffer of real transitions `D` plus its normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    obs_dim: usize,
    act_dim: usize,
    transitions: Vec<Transition>,
    norm_stats: NormStats,
}

impl TransitionDataset {
    /// Validates every transition and computes fresh statistics.
    pub fn new(obs_dim: usize, act_dim: usize, transitions: Vec<Transition>) -> Result<Self> {
        Self::validate(obs_dim, act_dim, &transitions)?;
        let norm_stats = NormStats::from_transitions(&transitions, obs_dim, act_dim);
        Ok(Self {
            obs_dim,
            act_dim,
            transitions,
            norm_stats,
        })
    }

    /// Reassembles a dataset whose statistics were stored alongside it.
    pub fn from_parts(
        obs_dim: usize,
        act_dim: usize,
        transitions: Vec<Transition>,
        norm_stats: NormStats,
    ) -> Result<Self> {
        Self::validate(obs_dim, act_dim, &transitions)?;
        norm_stats.check(obs_dim, act_dim)?;
        Ok(Self {
            obs_dim,
            act_dim,
            transitions,
            norm_stats,
        })
    }

    fn validate(obs_dim: usize, act_dim: usize, transitions: &[Transition]) -> Result<()> {
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::InvalidConfig("dataset dimensions must be positive".into()));
        }
        for t in transitions {
            check_len("transition state", obs_dim, t.state.len())?;
            check_len("transition action", act_dim, t.action.len())?;
            check_len("transition next state", obs_dim, t.next_state.len())?;
            check_finite("transition", &t.state)?;
            check_finite("transition", &t.action)?;
            check_finite("transition", &t.next_state)?;
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// `|D|`.
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }
}

/// Default number of steps between resets during random collection.
pub const DEFAULT_EPISODE_LEN: usize = 100;

/// Collects exactly `n` transitions under i.i.d. uniform actions in `[-1, 1]^m`.
pub fn collect_random(
    config: &CrawlerConfig,
    n: usize,
    episode_len: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    let mut env = CrawlerEnv::new(config.clone(), TaskSpec::walk(config), mix_seed(&[seed, 0]))?;
    let (data, _) = collect_random_from(&mut env, n, episode_len, mix_seed(&[seed, 1]))?;
    Ok(data)
}

/// [`collect_random`] against a caller-owned environment. Also returns the
/// real usage incurred by this call.
pub fn collect_random_from(
    env: &mut CrawlerEnv,
    n: usize,
    episode_len: usize,
    action_seed: u64,
) -> Result<(TransitionDataset, Usage)> {
    if n == 0 || episode_len == 0 {
        return Err(Error::InvalidConfig(
            "collection needs n >= 1 and episode_len >= 1".into(),
        ));
    }
    let start = env.usage();
    let m = env.action_dim();
    let mut rng = rng_from_seed(action_seed);
    let mut transitions = Vec::with_capacity(n);
    let mut current: Option<Vec<f64>> = None;
    let mut in_episode = 0;
    while transitions.len() < n {
        let state = match current.take() {
            Some(s) if in_episode < episode_len => s,
            _ => {
                in_episode = 0;
                env.reset()?
            }
        };
        let action: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let st = env.step(&action)?;
        in_episode += 1;
        if !st.done() {
            current = Some(st.observation.clone());
        }
        transitions.push(Transition {
            state,
            action,
            next_state: st.observation,
        });
    }
    let data = TransitionDataset::new(env.observation_dim(), m, transitions)?;
    let end = env.usage();
    Ok((
        data,
        Usage {
            steps: end.steps - start.steps,
            resets: end.resets - start.resets,
        },
    ))
}

/// Self-model architecture and training schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    /// Samples whose gradients are summed per Adam step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a validation improvement.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Minimum dataset size accepted by [`fit_self_model`].
pub const MIN_FIT_TRANSITIONS: usize = 20;

/// Summary of a completed fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingReport {
    /// Normalized MSE of the returned parameters on the training split.
    pub train_loss: f64,
    /// Best validation normalized MSE; the returned parameters achieve it.
    pub validation_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// A fitted forward model `s' = s + denorm(net(norm([s, a])))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfModel {
    obs_dim: usize,
    act_dim: usize,
    net: DenseNet,
    norm_stats: NormStats,
    report: TrainingReport,
}

impl SelfModel {
    pub fn from_parts(
        obs_dim: usize,
        act_dim: usize,
        net: DenseNet,
        norm_stats: NormStats,
        report: TrainingReport,
    ) -> Result<Self> {
        check_len("self-model input", obs_dim + act_dim, net.input_size())?;
        check_len("self-model output", obs_dim, net.output_size())?;
        norm_stats.check(obs_dim, act_dim)?;
        Ok(Self {
            obs_dim,
            act_dim,
            net,
            norm_stats,
            report,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }

    pub fn report(&self) -> &TrainingReport {
        &self.report
    }

    fn input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.obs_dim + self.act_dim);
        self.norm_stats.observation.normalize_into(s, &mut x);
        self.norm_stats.action.normalize_into(a, &mut x);
        x
    }

    /// Predicted next observation.
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Observation> {
        check_len("self-model observation", self.obs_dim, s.len())?;
        check_len("self-model action", self.act_dim, a.len())?;
        check_finite("self-model observation", s)?;
        check_finite("self-model action", a)?;
        let out = self.net.predict(&self.input(s, a))?;
        let delta = self.norm_stats.delta.denormalize(&out);
        Ok(Observation(s.iter().zip(&delta).map(|(s, d)| s + d).collect()))
    }

    /// Mean squared error of the normalized delta over `transitions`.
    pub fn normalized_mse(&self, transitions: &[Transition]) -> Result<f64> {
        let mut total = 0.0;
        for t in transitions {
            let out = self.net.predict(&self.input(&t.state, &t.action))?;
            let target = self.norm_stats.delta.normalize(&t.delta());
            total += squared_error(&out, &target);
        }
        Ok(total / (transitions.len().max(1) * self.obs_dim) as f64)
    }
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trains a self-model on `data` with a seeded 90/10 split, minibatch Adam and
/// early stopping on validation loss. Returns the best-validation parameters.
pub fn fit_self_model(data: &TransitionDataset, config: &FitConfig) -> Result<SelfModel> {
    let n = data.len();
    if n < MIN_FIT_TRANSITIONS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_FIT_TRANSITIONS} transitions, got {n}"
        )));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and max_epochs must be positive".into()));
    }
    let (obs_dim, act_dim) = (data.obs_dim(), data.act_dim());
    let stats = data.norm_stats().clone();

    let mut rng = rng_from_seed(config.seed);
    let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
    sizes.push(obs_dim + act_dim);
    sizes.extend_from_slice(&config.hidden);
    sizes.push(obs_dim);
    let mut net = DenseNet::new(&sizes, config.activation, &mut rng)?;

    // Normalized (input, target) pairs, computed once.
    let samples: Vec<(Vec<f64>, Vec<f64>)> = data
        .transitions()
        .iter()
        .map(|t| {
            let mut x = Vec::with_capacity(obs_dim + act_dim);
            stats.observation.normalize_into(&t.state, &mut x);
            stats.action.normalize_into(&t.action, &mut x);
            (x, stats.delta.normalize(&t.delta()))
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.validation_fraction) as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let mut adam = AdamState::new(&net, AdamConfig::with_lr(config.lr));
    let mut grads = GradientSet::zeros_like(&net);
    let mut best: Option<(f64, usize, DenseNet)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let dims = obs_dim as f64;

    let mean_loss = |net: &DenseNet, idx: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        for &i in idx {
            let (x, y) = &samples[i];
            total += squared_error(&net.predict(x)?, y);
        }
        Ok(total / (idx.len() as f64 * dims))
    };

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            grads.clear();
            let scale = 2.0 / (batch.len() as f64 * dims);
            for &i in batch {
                let (x, y) = &samples[i];
                let (out, cache) = net.forward(x)?;
                let g: Vec<f64> = out.iter().zip(y).map(|(o, t)| scale * (o - t)).collect();
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::Diverged { epoch });
                }
                net.backward_into(&cache, &g, &mut grads)?;
            }
            adam.update(&mut net, &grads)
                .map_err(|_| Error::Diverged { epoch })?;
        }
        let val = mean_loss(&net, val_idx).map_err(|_| Error::Diverged { epoch })?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        match &best {
            Some((b, _, _)) if val >= *b => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((val, epoch, net.clone()));
                since_best = 0;
            }
        }
    }

    let (validation_loss, best_epoch, net) = best.expect("at least one epoch ran");
    let train_loss = mean_loss(&net, &train_idx)?;
    let report = TrainingReport {
        train_loss,
        validation_loss,
        epochs_run,
        best_epoch,
    };
    SelfModel::from_parts(obs_dim, act_dim, net, stats, report)
}

/// Something that maps `(observation, action)` to a next observation.
pub trait ForwardModel {
    /// Called with the real seed at the start of every rollout.
    fn begin(&mut self, _seed: &SeedObservation) {}

    fn predict_next(&mut self, observation: &[f64], action: &[f64]) -> Result<Vec<f64>>;
}

impl ForwardModel for SelfModel {
    fn predict_next(&mut self, observation: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(observation, action)?.into_inner())
    }
}

impl ForwardModel for &SelfModel {
    fn predict_next(&mut self, observation: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(observation, action)?.into_inner())
    }
}

/// The true simulator posing as a self-model. It tracks the hidden physics
/// state from the seed onward, so its predictions are exact.
#[derive(Debug, Clone)]
pub struct OracleModel {
    config: CrawlerConfig,
    state: Option<PhysicsState>,
}

impl OracleModel {
    pub fn new(config: CrawlerConfig) -> Self {
        Self {
            config,
            state: None,
        }
    }
}

impl ForwardModel for OracleModel {
    fn begin(&mut self, seed: &SeedObservation) {
        self.state = Some(seed.state.clone());
    }

    fn predict_next(&mut self, _observation: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("oracle model used before begin".into()))?;
        let next = advance(state, action, &self.config)?;
        let obs = observe(&next, &self.config).into_inner();
        self.state = Some(next);
        Ok(obs)
    }
}

fn check_action(action: &[f64], act_dim: usize) -> Result<()> {
    check_len("action", act_dim, action.len())?;
    check_finite("action", action)?;
    if let Some((index, &value)) = action
        .iter()
        .enumerate()
        .find(|(_, a)| !(-1.0..=1.0).contains(*a))
    {
        return Err(Error::ActionOutOfRange { index, value });
    }
    Ok(())
}

/// An open-loop trajectory: `observations` has one more entry than the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTrajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// The model produced a non-finite state; the trajectory stops before it.
    pub diverged: bool,
}

/// Rolls `policy` through `model` from a real seed observation, with the
/// task's true reward and termination rules applied to predicted observations.
pub fn model_rollout<M, P>(
    model: &mut M,
    seed: &SeedObservation,
    mut policy: P,
    task: &TaskSpec,
    horizon: usize,
) -> Result<ModelTrajectory>
where
    M: ForwardModel,
    P: FnMut(&[f64]) -> Vec<f64>,
{
    model.begin(seed);
    let act_dim = (seed.observation.len() - crate::env::slot::JOINTS) / 2;
    let mut traj = ModelTrajectory {
        observations: vec![seed.observation.to_vec()],
        actions: Vec::new(),
        rewards: Vec::new(),
        dones: Vec::new(),
        diverged: false,
    };
    for t in 0..horizon {
        let current = traj.observations.last().expect("seeded");
        let action = policy(current);
        check_action(&action, act_dim)?;
        let next = match model.predict_next(current, &action) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            Ok(_) | Err(Error::NonFinite(_)) => {
                traj.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let done = task.is_terminal(&next) || t + 1 == horizon;
        traj.rewards.push(task.reward(&next));
        traj.actions.push(action);
        traj.observations.push(next);
        traj.dones.push(done);
        if done {
            break;
        }
    }
    Ok(traj)
}

/// A forward model wrapped as an [`Environment`]. Each episode starts from a
/// fresh reset of the real crawler; every later observation is predicted.
#[derive(Debug, Clone)]
pub struct ModelEnv<M> {
    model: M,
    real: CrawlerEnv,
    current: Option<Vec<f64>>,
    t: usize,
    model_steps: u64,
    diverged_episodes: u64,
}

impl<M: ForwardModel> ModelEnv<M> {
    /// `real` supplies seed observations only; it is never stepped.
    pub fn new(model: M, real: CrawlerEnv) -> Self {
        Self {
            model,
            real,
            current: None,
            t: 0,
            model_steps: 0,
            diverged_episodes: 0,
        }
    }

    /// Real-environment usage; `steps` stays at zero by construction.
    pub fn real_usage(&self) -> Usage {
        self.real.usage()
    }

    pub fn model_steps(&self) -> u64 {
        self.model_steps
    }

    pub fn diverged_episodes(&self) -> u64 {
        self.diverged_episodes
    }

    pub fn task(&self) -> &TaskSpec {
        self.real.task()
    }
}

impl<M: ForwardModel> Environment for ModelEnv<M> {
    fn observation_dim(&self) -> usize {
        self.real.observation_dim()
    }

    fn action_dim(&self) -> usize {
        self.real.action_dim()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let seed = self.real.reset_seed();
        self.model.begin(&seed);
        let obs = seed.observation.into_inner();
        self.current = Some(obs.clone());
        self.t = 0;
        Ok(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        check_action(action, self.action_dim())?;
        let current = self
            .current
            .take()
            .ok_or_else(|| Error::InvalidConfig("step called before reset".into()))?;
        self.model_steps += 1;
        self.t += 1;
        let task = *self.real.task();
        match self.model.predict_next(&current, action) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => {
                let terminated = task.is_terminal(&next);
                let truncated = !terminated && self.t >= task.horizon;
                let reward = task.reward(&next);
                if !(terminated || truncated) {
                    self.current = Some(next.clone());
                }
                Ok(EnvStep {
                    observation: next,
                    reward,
                    terminated,
                    truncated,
                })
            }
            // A diverged prediction ends the episode with nothing to bootstrap from.
            Ok(_) | Err(Error::NonFinite(_)) => {
                self.diverged_episodes += 1;
                Ok(EnvStep {
                    observation: current,
                    reward: 0.0,
                    terminated: true,
                    truncated: false,
                })
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{preset, reset, slot, step};

    fn zero_model(data: &TransitionDataset) -> SelfModel {
        let (o, a) = (data.obs_dim(), data.act_dim());
        let net = DenseNet::zeros(&[o + a, 8, o], Activation::Relu).unwrap();
        let report = TrainingReport {
            train_loss: 0.0,
            validation_loss: 0.0,
            epochs_run: 0,
            best_epoch: 0,
        };
        SelfModel::from_parts(o, a, net, data.norm_stats().clone(), report).unwrap()
    }

    #[test]
    fn collection_yields_exactly_n() {
        let c = preset("crawler-4").unwrap();
        let d = collect_random(&c, 1000, DEFAULT_EPISODE_LEN, 3).unwrap();
        assert_eq!(d.len(), 1000);
        assert_eq!(d.obs_dim(), 14);
        assert_eq!(d.act_dim(), 4);
        for t in d.transitions() {
            assert!(t.action.iter().all(|a| (-1.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let c = preset("crawler-2").unwrap();
        assert_eq!(
            collect_random(&c, 300, 50, 9).unwrap(),
            collect_random(&c, 300, 50, 9).unwrap()
        );
        assert_ne!(
            collect_random(&c, 300, 50, 9).unwrap(),
            collect_random(&c, 300, 50, 10).unwrap()
        );
    }

    #[test]
    fn collection_resets_every_episode_len() {
        let c = preset("crawler-8").unwrap();
        let mut env = CrawlerEnv::new(c.clone(), TaskSpec::walk(&c), 1).unwrap();
        let (d, usage) = collect_random_from(&mut env, 250, 50, 2).unwrap();
        assert_eq!(usage.steps, 250);
        assert!(usage.resets >= 5);
        assert_eq!(d.len(), 250);
    }

    #[test]
    fn normalized_observations_are_standardized() {
        let c = preset("crawler-6").unwrap();
        let d = collect_random(&c, 1000, DEFAULT_EPISODE_LEN, 4).unwrap();
        let stats = &d.norm_stats().observation;
        let z: Vec<Vec<f64>> = d.transitions().iter().map(|t| stats.normalize(&t.state)).collect();
        let check = ChannelStats::from_rows(z.iter().map(Vec::as_slice), d.obs_dim());
        for j in 0..d.obs_dim() {
            assert!(check.mean[j].abs() < 1e-9, "channel {j}: mean {}", check.mean[j]);
            if stats.std[j] > STD_FLOOR {
                assert!((check.std[j] - 1.0).abs() < 1e-9, "channel {j}: std {}", check.std[j]);
            }
        }
        // The planar family never moves laterally or rolls.
        assert_eq!(stats.std[slot::VY], STD_FLOOR);
        assert_eq!(stats.std[slot::ROLL], STD_FLOOR);
    }

    #[test]
    fn normalization_round_trips() {
        let c = preset("crawler-4").unwrap();
        let d = collect_random(&c, 200, DEFAULT_EPISODE_LEN, 5).unwrap();
        for t in d.transitions() {
            for stats in [&d.norm_stats().observation, &d.norm_stats().delta] {
                let back = stats.denormalize(&stats.normalize(&t.state));
                for (x, y) in back.iter().zip(&t.state) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
            let a = &d.norm_stats().action;
            let back = a.denormalize(&a.normalize(&t.action));
            for (x, y) in back.iter().zip(&t.action) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fit_rejects_tiny_datasets() {
        let c = preset("crawler-2").unwrap();
        let d = collect_random(&c, 19, DEFAULT_EPISODE_LEN, 0).unwrap();
        assert!(matches!(
            fit_self_model(&d, &FitConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn fit_reports_divergence_epoch() {
        let c = preset("crawler-2").unwrap();
        let d = collect_random(&c, 100, DEFAULT_EPISODE_LEN, 0).unwrap();
        let cfg = FitConfig {
            lr: 1e300,
            hidden: vec![8],
            max_epochs: 5,
            ..FitConfig::default()
        };
        assert!(matches!(fit_self_model(&d, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn zero_network_predicts_mean_delta() {
        let c = preset("crawler-4").unwrap();
        let d = collect_random(&c, 100, DEFAULT_EPISODE_LEN, 1).unwrap();
        let model = zero_model(&d);
        let t = &d.transitions()[17];
        let pred = model.predict(&t.state, &t.action).unwrap();
        for ((p, s), m) in pred.iter().zip(&t.state).zip(&d.norm_stats().delta.mean) {
            assert_eq!(*p, s + m);
        }
        assert_eq!(pred, model.predict(&t.state, &t.action).unwrap());
    }

    #[test]
    fn zero_network_rollout_drifts_linearly() {
        let c = preset("crawler-2").unwrap();
        let d = collect_random(&c, 100, DEFAULT_EPISODE_LEN, 2).unwrap();
        let mut model = zero_model(&d);
        let (state, observation) = reset(&c, 0);
        let seed = SeedObservation { state, observation };
        let mut walk = TaskSpec::walk(&c);
        walk.fall_height = f64::NEG_INFINITY;
        let traj = model_rollout(&mut model, &seed, |_| vec![0.0; 2], &walk, 25).unwrap();
        assert_eq!(traj.actions.len(), 25);
        assert_eq!(traj.observations.len(), 26);
        let mean = &d.norm_stats().delta.mean;
        for (k, o) in traj.observations.iter().enumerate() {
            for j in 0..o.len() {
                let expected = seed.observation[j] + k as f64 * mean[j];
                assert!((o[j] - expected).abs() < 1e-9 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn oracle_rollout_reproduces_real_trajectory() {
        let c = preset("crawler-4").unwrap();
        let task = TaskSpec::walk(&c);
        let (state, observation) = reset(&c, 77);
        let seed = SeedObservation {
            state: state.clone(),
            observation,
        };
        let policy = |o: &[f64]| -> Vec<f64> {
            (0..4).map(|i| libm::sin(3.0 * o[slot::JOINTS + i] + i as f64)).collect()
        };
        let mut oracle = OracleModel::new(c.clone());
        let traj = model_rollout(&mut oracle, &seed, policy, &task, 200).unwrap();

        let mut s = state;
        for (t, a) in traj.actions.iter().enumerate() {
            assert_eq!(a, &policy(&traj.observations[t]));
            let st = step(&s, a, &c, &task).unwrap();
            for (x, y) in st.observation.iter().zip(&traj.observations[t + 1]) {
                assert!((x - y).abs() < 1e-9);
            }
            assert!((st.reward - traj.rewards[t]).abs() < 1e-9);
            if t + 1 < traj.actions.len() {
                assert!(!st.done() && !traj.dones[t]);
            }
            s = st.state;
        }
        assert_eq!(traj.dones.last(), Some(&true));
    }

    #[test]
    fn rollout_rejects_out_of_range_policy() {
        let c = preset("crawler-2").unwrap();
        let (state, observation) = reset(&c, 0);
        let seed = SeedObservation { state, observation };
        let mut oracle = OracleModel::new(c.clone());
        let r = model_rollout(&mut oracle, &seed, |_| vec![2.0, 0.0], &TaskSpec::walk(&c), 5);
        assert!(matches!(r, Err(Error::ActionOutOfRange { .. })));
    }

    struct Exploding;

    impl ForwardModel for Exploding {
        fn predict_next(&mut self, o: &[f64], _a: &[f64]) -> Result<Vec<f64>> {
            let mut next = o.to_vec();
            next[slot::VX] = if o[slot::VX] > 0.5 { f64::NAN } else { o[slot::VX] + 0.2 };
            Ok(next)
        }
    }

    #[test]
    fn divergent_model_truncates_rollout() {
        let c = preset("crawler-2").unwrap();
        let (state, observation) = reset(&c, 0);
        let seed = SeedObservation { state, observation };
        let traj =
            model_rollout(&mut Exploding, &seed, |_| vec![0.0; 2], &TaskSpec::walk(&c), 50)
                .unwrap();
        assert!(traj.diverged);
        assert_eq!(traj.actions.len(), 3);
        assert!(traj.observations.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn model_env_never_steps_the_real_crawler() {
        let c = preset("crawler-4").unwrap();
        let real = CrawlerEnv::new(c.clone(), TaskSpec::walk(&c), 3).unwrap();
        let mut env = ModelEnv::new(Exploding, real);
        let mut episodes = 0;
        for _ in 0..3 {
            env.reset().unwrap();
            episodes += 1;
            loop {
                let st = env.step(&[0.0; 4]).unwrap();
                if st.done() {
                    assert!(st.terminated);
                    break;
                }
            }
        }
        assert_eq!(env.real_usage(), Usage { steps: 0, resets: episodes });
        assert_eq!(env.diverged_episodes(), 3);
        assert_eq!(env.model_steps(), 12);
    }

    fn linear_dataset(n: usize, seed: u64) -> TransitionDataset {
        let mut rng = rng_from_seed(seed);
        let a_mat = [[0.9, 0.1, 0.0], [-0.2, 0.8, 0.3], [0.0, 0.5, 1.1]];
        let b_mat = [[1.0, 0.0], [0.5, -0.5], [0.0, 2.0]];
        let c = [0.3, -0.1, 0.05];
        let transitions = (0..n)
            .map(|_| {
                let s: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let next = (0..3)
                    .map(|i| {
                        (0..3).map(|j| a_mat[i][j] * s[j]).sum::<f64>()
                            + (0..2).map(|j| b_mat[i][j] * a[j]).sum::<f64>()
                            + c[i]
                    })
                    .collect();
                Transition {
                    state: s,
                    action: a,
                    next_state: next,
                }
            })
            .collect();
        TransitionDataset::new(3, 2, transitions).unwrap()
    }

    #[test]
    fn fits_a_linear_system() {
        let train = linear_dataset(1000, 1);
        let cfg = FitConfig {
            max_epochs: 60,
            ..FitConfig::default()
        };
        let model = fit_self_model(&train, &cfg).unwrap();
        // Held-out data scored under the training statistics.
        let held_out = linear_dataset(500, 2);
        let mse = model.normalized_mse(held_out.transitions()).unwrap();
        assert!(mse < 0.01, "held-out normalized mse {mse}");
    }

    #[test]
    fn memorizes_twenty_transitions() {
        let c = preset("crawler-2").unwrap();
        let d = collect_random(&c, 20, DEFAULT_EPISODE_LEN, 6).unwrap();
        let cfg = FitConfig {
            max_epochs: 3000,
            patience: 3000,
            ..FitConfig::default()
        };
        let model = fit_self_model(&d, &cfg).unwrap();
        let train = model.report().train_loss;
        assert!(train < 1e-3, "training mse {train}");
        let stats = &d.norm_stats().delta;
        let memorized = d
            .transitions()
            .iter()
            .filter(|t| {
                let pred = model.predict(&t.state, &t.action).unwrap();
                pred.iter()
                    .zip(&t.next_state)
                    .zip(&stats.std)
                    .all(|((p, y), s)| (p - y).abs() / s < 0.05)
            })
            .count();
        // Two of the twenty are held out for validation.
        assert!(memorized >= 18, "{memorized} of 20 within tolerance");
    }

    #[test]
    fn fit_is_deterministic() {
        let d = linear_dataset(100, 3);
        let cfg = FitConfig {
            hidden: vec![16, 16],
            max_epochs: 5,
            ..FitConfig::default()
        };
        assert_eq!(fit_self_model(&d, &cfg).unwrap(), fit_self_model(&d, &cfg).unwrap());
    }

    #[test]
    fn open_loop_error_grows_with_horizon() {
        let c = preset("crawler-2").unwrap();
        let d = collect_random(&c, 4000, DEFAULT_EPISODE_LEN, 7).unwrap();
        let cfg = FitConfig {
            hidden: vec![64, 64],
            max_epochs: 30,
            ..FitConfig::default()
        };
        let mut model = fit_self_model(&d, &cfg).unwrap();
        let k_max = 10;
        let mut err = vec![0.0; k_max];
        // Held-out random-motion episodes; rollouts start every 10 steps.
        let mut env = CrawlerEnv::new(c.clone(), TaskSpec::walk(&c), 1234).unwrap();
        let mut rng = rng_from_seed(99);
        let mut count = 0;
        while count < 200 {
            let mut obs = vec![env.reset().unwrap()];
            let mut actions = Vec::new();
            for _ in 0..100 {
                let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let st = env.step(&a).unwrap();
                actions.push(a);
                obs.push(st.observation.clone());
                if st.done() {
                    break;
                }
            }
            let mut start = 0;
            while start + k_max < obs.len() {
                let mut pred = obs[start].clone();
                for k in 1..=k_max {
                    pred = model.predict_next(&pred, &actions[start + k - 1]).unwrap();
                    err[k - 1] += pred
                        .iter()
                        .zip(&obs[start + k])
                        .zip(&d.norm_stats().observation.std)
                        .map(|((p, y), s)| ((p - y) / s).powi(2))
                        .sum::<f64>();
                }
                count += 1;
                start += 10;
            }
        }
        for k in 1..k_max {
            assert!(err[k] >= err[k - 1], "k-step errors {err:?}");
        }
    }
}
