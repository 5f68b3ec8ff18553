//! Proximal policy optimization with a clipped surrogate and GAE.
//!
//! The agent is a Gaussian policy with a state-independent log standard
//! deviation plus a separate value network. Actions are sampled from the
//! Gaussian and clamped to `[-1, 1]`; log densities always refer to the
//! pre-clamp sample, which the rollout buffer stores alongside the action.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{CrawlerConfig, CrawlerEnv, Environment, TaskSpec};
use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, GradientSet, VectorAdam};
use crate::rng::{mix_seed, rng_from_seed, LabRng};

/// `ln(0.5)`.
pub const LOG_STD_INIT: f64 = -core::f64::consts::LN_2;
/// `ln(1e-3)`.
pub const LOG_STD_FLOOR: f64 = -6.907_755_278_982_137;
pub const POLICY_HIDDEN: [usize; 2] = [64, 64];

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of `x` under a diagonal Gaussian.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), ls)| {
            let z = (x - m) * libm::exp(-ls);
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Policy network, log standard deviations and value network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValuePair {
    policy: DenseNet,
    log_std: Vec<f64>,
    value: DenseNet,
}

impl PolicyValuePair {
    /// Fresh agent with 2x64 tanh networks.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, rng: &mut R) -> Result<Self> {
        Self::with_hidden(obs_dim, act_dim, &POLICY_HIDDEN, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let mut policy = DenseNet::new(&sizes(act_dim), Activation::Tanh, rng)?;
        // Near-zero initial means keep early actions away from the clamp.
        policy.scale_output_weights(0.01);
        let value = DenseNet::new(&sizes(1), Activation::Tanh, rng)?;
        Self::from_parts(policy, vec![LOG_STD_INIT; act_dim], value)
    }

    pub fn from_parts(policy: DenseNet, log_std: Vec<f64>, value: DenseNet) -> Result<Self> {
        check_len("log_std", policy.output_size(), log_std.len())?;
        check_len("value input", policy.input_size(), value.input_size())?;
        check_len("value output", 1, value.output_size())?;
        check_finite("log_std", &log_std)?;
        if log_std.iter().any(|&l| l < LOG_STD_FLOOR) {
            return Err(Error::InvalidConfig("log_std below floor".into()));
        }
        if !policy.is_finite() || !value.is_finite() {
            return Err(Error::NonFinite("agent parameters"));
        }
        Ok(Self {
            policy,
            log_std,
            value,
        })
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }

    pub fn value_net(&self) -> &DenseNet {
        &self.value
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    /// Overwrites the log standard deviations, flooring each entry.
    pub fn set_log_std(&mut self, log_std: &[f64]) -> Result<()> {
        check_len("log_std", self.log_std.len(), log_std.len())?;
        check_finite("log_std", log_std)?;
        for (d, s) in self.log_std.iter_mut().zip(log_std) {
            *d = s.max(LOG_STD_FLOOR);
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_size()
    }

    pub fn act_dim(&self) -> usize {
        self.policy.output_size()
    }

    pub fn action_mean(&self, observation: &[f64]) -> Result<Vec<f64>> {
        check_len("policy observation", self.obs_dim(), observation.len())?;
        check_finite("policy observation", observation)?;
        self.policy.predict(observation)
    }

    /// The clamped mean action.
    pub fn deterministic_action(&self, observation: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .action_mean(observation)?
            .into_iter()
            .map(|a| a.clamp(-1.0, 1.0))
            .collect())
    }

    pub fn value(&self, observation: &[f64]) -> Result<f64> {
        check_len("value observation", self.obs_dim(), observation.len())?;
        check_finite("value observation", observation)?;
        Ok(self.value.predict(observation)?[0])
    }

    /// Log density of a pre-clamp sample.
    pub fn log_prob(&self, observation: &[f64], raw_action: &[f64]) -> Result<f64> {
        check_len("raw action", self.act_dim(), raw_action.len())?;
        let mean = self.action_mean(observation)?;
        Ok(gaussian_log_density(raw_action, &mean, &self.log_std))
    }

    /// Differential entropy of the (pre-clamp) action distribution.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
    }

    fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite() && self.log_std.iter().all(|l| l.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Clamped to `[-1, 1]`.
    pub action: Vec<f64>,
    /// The Gaussian draw before clamping.
    pub raw: Vec<f64>,
    /// Log density of `raw`.
    pub log_prob: f64,
}

pub fn sample_action<R: Rng + ?Sized>(
    agent: &PolicyValuePair,
    observation: &[f64],
    rng: &mut R,
) -> Result<ActionSample> {
    let mean = agent.action_mean(observation)?;
    let raw: Vec<f64> = mean
        .iter()
        .zip(&agent.log_std)
        .map(|(m, ls)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + libm::exp(*ls) * eps
        })
        .collect();
    let log_prob = gaussian_log_density(&raw, &mean, &agent.log_std);
    let action = raw.iter().map(|u| u.clamp(-1.0, 1.0)).collect();
    Ok(ActionSample {
        action,
        raw,
        log_prob,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub entropy_coef: f64,
    /// Environment steps collected per update.
    pub rollout_batch: usize,
    pub total_step_budget: u64,
    /// Global gradient-norm cap, applied to each network separately.
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs_per_update: 10,
            minibatch_size: 64,
            lr_policy: 3e-4,
            lr_value: 3e-4,
            entropy_coef: 0.0,
            rollout_batch: 2048,
            total_step_budget: 0,
            max_grad_norm: Some(0.5),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad("clip_eps must be positive");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.rollout_batch == 0 {
            return bad("epochs, minibatch size and rollout batch must be positive");
        }
        if !(self.lr_policy > 0.0 && self.lr_value > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.entropy_coef.is_finite()) {
            return bad("entropy_coef must be finite");
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// Per-step rollout records. `bootstrap_values[t]` is the value of the
/// observation that followed a truncated step and zero elsewhere.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub raw_actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub bootstrap_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// One step handed to [`RolloutBuffer::push`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            observations: Vec::with_capacity(n),
            raw_actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            terminated: Vec::with_capacity(n),
            truncated: Vec::with_capacity(n),
            bootstrap_values: Vec::with_capacity(n),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn push(&mut self, r: StepRecord) {
        self.observations.push(r.observation);
        self.raw_actions.push(r.raw_action);
        self.log_probs.push(r.log_prob);
        self.rewards.push(r.reward);
        self.values.push(r.value);
        self.terminated.push(r.terminated);
        self.truncated.push(r.truncated && !r.terminated);
        self.bootstrap_values.push(r.bootstrap_value);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills `advantages` and `returns`. `last_value` bootstraps the final
    /// step when the buffer ends mid-episode.
    pub fn compute_gae(&mut self, last_value: f64, gamma: f64, lambda: f64) {
        let n = self.len();
        self.advantages = vec![0.0; n];
        let mut carry = 0.0;
        for t in (0..n).rev() {
            let (next_value, continues) = if self.terminated[t] {
                (0.0, false)
            } else if self.truncated[t] {
                (self.bootstrap_values[t], false)
            } else if t + 1 == n {
                (last_value, false)
            } else {
                (self.values[t + 1], true)
            };
            if !continues {
                carry = 0.0;
            }
            let delta = self.rewards[t] + gamma * next_value - self.values[t];
            carry = delta + gamma * lambda * carry;
            self.advantages[t] = carry;
        }
        self.returns = self
            .advantages
            .iter()
            .zip(&self.values)
            .map(|(a, v)| a + v)
            .collect();
    }
}

/// Rescales to zero mean and unit (population) standard deviation.
/// Slices of length one are only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    adv.iter_mut().for_each(|a| *a -= mean);
    if n > 1 {
        let std = libm::sqrt(adv.iter().map(|a| a * a).sum::<f64>() / n as f64);
        if std > 1e-12 {
            adv.iter_mut().for_each(|a| *a /= std);
        }
    }
}

/// Policy-side gradient of the (negated) surrogate loss on one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub policy: GradientSet,
    pub log_std: Vec<f64>,
    /// `-mean(objective) - entropy_coef * entropy`.
    pub loss: f64,
    pub clipped: usize,
    /// Mean of `old_log_prob - new_log_prob`.
    pub approx_kl: f64,
}

/// Gradient of the PPO policy loss over `indices`. `clip_eps = None` gives
/// the unclipped importance-weighted policy gradient.
pub fn surrogate_gradient(
    agent: &PolicyValuePair,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    indices: &[usize],
    clip_eps: Option<f64>,
    entropy_coef: f64,
) -> Result<SurrogateGradient> {
    let b = indices.len().max(1) as f64;
    let inv_std: Vec<f64> = agent.log_std.iter().map(|ls| libm::exp(-ls)).collect();
    let mut policy = GradientSet::zeros_like(&agent.policy);
    let mut log_std = vec![-entropy_coef; agent.act_dim()];
    let mut objective = 0.0;
    let mut clipped = 0;
    let mut kl = 0.0;
    let mut dmean = vec![0.0; agent.act_dim()];
    for &i in indices {
        let (mean, cache) = agent.policy.forward(&buffer.observations[i])?;
        let raw = &buffer.raw_actions[i];
        let new_lp = gaussian_log_density(raw, &mean, &agent.log_std);
        let ratio = libm::exp(new_lp - buffer.log_probs[i]);
        let adv = advantages[i];
        kl += buffer.log_probs[i] - new_lp;
        let active = match clip_eps {
            None => {
                objective += ratio * adv;
                true
            }
            Some(eps) => {
                let clamped = ratio.clamp(1.0 - eps, 1.0 + eps);
                objective += (ratio * adv).min(clamped * adv);
                if (ratio - 1.0).abs() > eps {
                    clipped += 1;
                }
                if adv >= 0.0 {
                    ratio <= 1.0 + eps
                } else {
                    ratio >= 1.0 - eps
                }
            }
        };
        if !active {
            continue;
        }
        // d(loss)/d(log pi_new) for this sample.
        let coeff = -ratio * adv / b;
        for j in 0..dmean.len() {
            let z = (raw[j] - mean[j]) * inv_std[j];
            dmean[j] = coeff * z * inv_std[j];
            log_std[j] += coeff * (z * z - 1.0);
        }
        agent.policy.backward_into(&cache, &dmean, &mut policy)?;
    }
    Ok(SurrogateGradient {
        policy,
        log_std,
        loss: -objective / b - entropy_coef * agent.entropy(),
        clipped,
        approx_kl: kl / b,
    })
}

/// Gradient of the mean squared value error over `indices`.
pub fn value_gradient(
    agent: &PolicyValuePair,
    buffer: &RolloutBuffer,
    indices: &[usize],
) -> Result<(GradientSet, f64)> {
    let b = indices.len().max(1) as f64;
    let mut grads = GradientSet::zeros_like(&agent.value);
    let mut loss = 0.0;
    for &i in indices {
        let (v, cache) = agent.value.forward(&buffer.observations[i])?;
        let err = v[0] - buffer.returns[i];
        loss += err * err;
        agent.value.backward_into(&cache, &[2.0 * err / b], &mut grads)?;
    }
    Ok((grads, loss / b))
}

/// Adam states for every trainable part of an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptimizers {
    policy: AdamState,
    log_std: VectorAdam,
    value: AdamState,
}

impl PpoOptimizers {
    pub fn new(agent: &PolicyValuePair, config: &PpoConfig) -> Self {
        Self {
            policy: AdamState::new(&agent.policy, AdamConfig::with_lr(config.lr_policy)),
            log_std: VectorAdam::new(agent.act_dim(), AdamConfig::with_lr(config.lr_policy)),
            value: AdamState::new(&agent.value, AdamConfig::with_lr(config.lr_value)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples with `|ratio - 1| > clip_eps`, over all epochs.
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

fn clip_norm(values: &mut [&mut f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = libm::sqrt(values.iter().map(|v| **v * **v).sum::<f64>());
        if norm > max {
            let s = max / norm;
            values.iter_mut().for_each(|v| **v *= s);
        }
    }
}

/// Runs `epochs_per_update` passes of shuffled minibatch updates. On a
/// non-finite loss or update the agent and optimizers are restored and
/// [`Error::UpdateAborted`] is returned.
pub fn ppo_update<R: Rng + ?Sized>(
    agent: &mut PolicyValuePair,
    optimizers: &mut PpoOptimizers,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    config.validate()?;
    let n = buffer.len();
    if buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::InvalidConfig("advantages not computed".into()));
    }
    if n == 0 {
        return Ok(UpdateStats {
            entropy: agent.entropy(),
            ..UpdateStats::default()
        });
    }
    let agent_snapshot = agent.clone();
    let opt_snapshot = optimizers.clone();
    let result = ppo_epochs(agent, optimizers, buffer, config, rng);
    if result.is_err() {
        *agent = agent_snapshot;
        *optimizers = opt_snapshot;
    }
    result
}

fn ppo_epochs<R: Rng + ?Sized>(
    agent: &mut PolicyValuePair,
    opt: &mut PpoOptimizers,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buffer.len();
    let mut advantages = buffer.advantages.clone();
    normalize_advantages(&mut advantages);
    if advantages.iter().chain(&buffer.returns).any(|v| !v.is_finite()) {
        return Err(Error::UpdateAborted("non-finite advantages"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..config.epochs_per_update {
        order.shuffle(rng);
        for mb in order.chunks(config.minibatch_size) {
            let mut pg = surrogate_gradient(
                agent,
                buffer,
                &advantages,
                mb,
                Some(config.clip_eps),
                config.entropy_coef,
            )?;
            let (mut vg, value_loss) = value_gradient(agent, buffer, mb)?;
            if !pg.loss.is_finite() || !value_loss.is_finite() {
                return Err(Error::UpdateAborted("non-finite loss"));
            }
            {
                let mut p: Vec<&mut f64> =
                    pg.policy.values_mut().chain(pg.log_std.iter_mut()).collect();
                clip_norm(&mut p, config.max_grad_norm);
                let mut v: Vec<&mut f64> = vg.values_mut().collect();
                clip_norm(&mut v, config.max_grad_norm);
            }
            opt.policy
                .update(&mut agent.policy, &pg.policy)
                .map_err(|_| Error::UpdateAborted("policy step"))?;
            opt.log_std
                .update(&mut agent.log_std, &pg.log_std)
                .map_err(|_| Error::UpdateAborted("log_std step"))?;
            opt.value
                .update(&mut agent.value, &vg)
                .map_err(|_| Error::UpdateAborted("value step"))?;
            agent.log_std.iter_mut().for_each(|l| *l = l.max(LOG_STD_FLOOR));

            stats.policy_loss += pg.loss;
            stats.value_loss += value_loss;
            stats.approx_kl += pg.approx_kl;
            clipped += pg.clipped;
            seen += mb.len();
            batches += 1;
        }
    }
    if !agent.is_finite() {
        return Err(Error::UpdateAborted("non-finite parameters"));
    }
    let k = batches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.approx_kl /= k;
    stats.clip_fraction = clipped as f64 / seen as f64;
    stats.entropy = agent.entropy();
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Environment steps consumed so far.
    pub steps: u64,
    /// Mean return of episodes completed during the latest batch.
    pub mean_return: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub curve: Vec<CurvePoint>,
    pub updates: Vec<UpdateStats>,
    pub steps: u64,
    pub episodes: u64,
    pub aborted_updates: usize,
}

/// Collects `rollout_batch` steps, updates, and repeats until exactly
/// `total_step_budget` steps have been taken.
pub fn train<E: Environment + ?Sized>(
    agent: &mut PolicyValuePair,
    env: &mut E,
    config: &PpoConfig,
    seed: u64,
) -> Result<TrainingLog> {
    config.validate()?;
    check_len("environment observation", agent.obs_dim(), env.observation_dim())?;
    check_len("environment action", agent.act_dim(), env.action_dim())?;
    let mut sample_rng: LabRng = rng_from_seed(mix_seed(&[seed, 1]));
    let mut shuffle_rng: LabRng = rng_from_seed(mix_seed(&[seed, 2]));
    let mut optimizers = PpoOptimizers::new(agent, config);
    let mut log = TrainingLog::default();
    let mut current: Option<Vec<f64>> = None;
    let mut episode_return = 0.0;

    while log.steps < config.total_step_budget {
        let n = (config.total_step_budget - log.steps).min(config.rollout_batch as u64) as usize;
        let mut buffer = RolloutBuffer::with_capacity(n);
        let mut finished = Vec::new();
        for _ in 0..n {
            let obs = match current.take() {
                Some(o) => o,
                None => env.reset()?,
            };
            let s = sample_action(agent, &obs, &mut sample_rng)?;
            let value = agent.value(&obs)?;
            let st = env.step(&s.action)?;
            log.steps += 1;
            episode_return += st.reward;
            let bootstrap_value = if st.truncated && !st.terminated {
                agent.value(&st.observation)?
            } else {
                0.0
            };
            let done = st.done();
            buffer.push(StepRecord {
                observation: obs,
                raw_action: s.raw,
                log_prob: s.log_prob,
                reward: st.reward,
                value,
                terminated: st.terminated,
                truncated: st.truncated,
                bootstrap_value,
            });
            if done {
                finished.push(episode_return);
                episode_return = 0.0;
                log.episodes += 1;
            } else {
                current = Some(st.observation);
            }
        }
        let last_value = match &current {
            Some(o) => agent.value(o)?,
            None => 0.0,
        };
        buffer.compute_gae(last_value, config.gamma, config.lambda);
        match ppo_update(agent, &mut optimizers, &buffer, config, &mut shuffle_rng) {
            Ok(stats) => log.updates.push(stats),
            Err(Error::UpdateAborted(_)) => log.aborted_updates += 1,
            Err(e) => return Err(e),
        }
        if !finished.is_empty() {
            log.curve.push(CurvePoint {
                steps: log.steps,
                mean_return: finished.iter().sum::<f64>() / finished.len() as f64,
                episodes: finished.len(),
            });
        }
    }
    Ok(log)
}

/// Returns of a batch of evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub returns: Vec<f64>,
}

impl Evaluation {
    fn from_returns(returns: Vec<f64>) -> Self {
        let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
        Self { mean, returns }
    }

    /// Population standard deviation of the episode returns.
    pub fn std(&self) -> f64 {
        let n = self.returns.len().max(1) as f64;
        libm::sqrt(self.returns.iter().map(|r| (r - self.mean) * (r - self.mean)).sum::<f64>() / n)
    }
}

pub const DEFAULT_EVAL_EPISODES: usize = 10;

/// Runs `n_episodes` full episodes of `actor` on `env`.
pub fn evaluate_with<E, F>(env: &mut E, n_episodes: usize, mut actor: F) -> Result<Evaluation>
where
    E: Environment + ?Sized,
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be at least 1".into()));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut obs = env.reset()?;
        let mut total = 0.0;
        loop {
            let st = env.step(&actor(&obs)?)?;
            total += st.reward;
            if st.done() {
                break;
            }
            obs = st.observation;
        }
        returns.push(total);
    }
    Ok(Evaluation::from_returns(returns))
}

/// Mean-action returns on the real crawler. Episode `k` resets from
/// `mix_seed([seed, k])`.
pub fn evaluate_policy(
    agent: &PolicyValuePair,
    config: &CrawlerConfig,
    task: &TaskSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut env = CrawlerEnv::new(config.clone(), *task, seed)?;
    evaluate_with(&mut env, n_episodes, |o| agent.deterministic_action(o))
}

/// Returns of i.i.d. uniform actions over the same resets as [`evaluate_policy`].
pub fn evaluate_random(
    config: &CrawlerConfig,
    task: &TaskSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut env = CrawlerEnv::new(config.clone(), *task, seed)?;
    let mut rng = rng_from_seed(mix_seed(&[seed, 0x7A4D]));
    let m = config.dof();
    evaluate_with(&mut env, n_episodes, |_| {
        Ok((0..m).map(|_| rng.random_range(-1.0..=1.0)).collect())
    })
}
