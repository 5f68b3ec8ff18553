//! A family of planar articulated crawlers.
//!
//! The body is a rigid segment moving in the x–z plane with a pitch degree of
//! freedom. Each leg is a serial chain of massless links hanging from a hip
//! point on the body axis, with one foot at the end of the chain. Joints are
//! first-order torque-driven rotors; the ground acts on feet through a
//! spring-damper normal force and smoothed Coulomb friction. Everything is
//! integrated with semi-implicit Euler at a fixed step.
//!
//! Joint angles are measured relative to the previous link; with all angles at
//! zero every leg hangs straight down.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::ops::Deref;

use rand::Rng;

use crate::error::{check_finite, check_len, Error, Result};
use crate::rng::{mix_seed, rng_from_seed};

/// Observation slot indices.
pub mod slot {
    pub const Z: usize = 0;
    pub const VX: usize = 1;
    pub const VY: usize = 2;
    pub const VZ: usize = 3;
    pub const ROLL: usize = 4;
    pub const PITCH: usize = 5;
    /// Joint angles start here; joint velocities follow the angles.
    pub const JOINTS: usize = 6;
}

/// Half-width of the uniform jitter applied to joint angles on reset.
pub const RESET_JITTER: f64 = 0.05;

/// Physical and episode parameters of one crawler.
#[derive(Debug, Clone, PartialEq)]
pub struct CrawlerConfig {
    pub legs: usize,
    pub joints_per_leg: usize,
    /// Length of every link (m).
    pub link_length: f64,
    pub body_mass: f64,
    pub body_inertia: f64,
    pub joint_inertia: f64,
    pub joint_damping: f64,
    /// Viscous damping on the body's pitch rate (N·m·s).
    pub pitch_damping: f64,
    /// Torque produced by an action component of 1.0 (N·m).
    pub torque_limit: f64,
    /// Lower and upper joint angle bounds (rad).
    pub joint_limits: (f64, f64),
    /// Control period: each action is held for `dt` seconds (s).
    pub dt: f64,
    /// Semi-implicit Euler substeps per control period.
    pub substeps: usize,
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction: f64,
    /// Slip velocity scale of the tanh friction law (m/s).
    pub friction_smoothing: f64,
    pub walk_horizon: usize,
    pub jump_horizon: usize,
    /// Jump episodes end once the body rises this far above standing height (m).
    pub jump_clearance: f64,
    /// Episodes end when the body drops below this height (m).
    pub fall_height: f64,
    /// Hip positions along the body axis, one per leg (m, forward positive).
    pub hip_offsets: Vec<f64>,
}

/// Hips are spread evenly over this half-span of the body axis.
const HIP_HALF_SPAN: f64 = 0.2;

impl CrawlerConfig {
    /// Default physical constants for an `legs × joints_per_leg` crawler.
    pub fn new(legs: usize, joints_per_leg: usize) -> Self {
        let hip_offsets = if legs == 1 {
            vec![0.0]
        } else {
            (0..legs)
                .map(|l| HIP_HALF_SPAN * (2.0 * l as f64 / (legs - 1) as f64 - 1.0))
                .collect()
        };
        Self {
            legs,
            joints_per_leg,
            link_length: 0.15,
            body_mass: 5.0,
            body_inertia: 0.1,
            joint_inertia: 0.02,
            joint_damping: 0.1,
            pitch_damping: 0.5,
            torque_limit: 5.0,
            joint_limits: (-1.2, 1.2),
            dt: 0.01,
            substeps: 4,
            gravity: 9.81,
            contact_stiffness: 4000.0,
            contact_damping: 40.0,
            friction: 0.9,
            friction_smoothing: 0.05,
            walk_horizon: 500,
            jump_horizon: 300,
            jump_clearance: 0.25,
            fall_height: 0.05,
            hip_offsets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.legs == 0 || self.joints_per_leg == 0 {
            return fail("crawler needs at least one leg and one joint per leg");
        }
        if self.hip_offsets.len() != self.legs {
            return fail("one hip offset per leg is required");
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return fail("dt and substeps must be positive");
        }
        if !(self.torque_limit > 0.0) {
            return fail("torque_limit must be positive");
        }
        if self.walk_horizon == 0 || self.jump_horizon == 0 {
            return fail("horizons must be at least one step");
        }
        if !(self.joint_limits.0 < self.joint_limits.1) {
            return fail("joint limits must satisfy min < max");
        }
        let positive = [
            self.link_length,
            self.body_mass,
            self.body_inertia,
            self.joint_inertia,
            self.friction_smoothing,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return fail("lengths, masses, inertias and friction smoothing must be positive");
        }
        let non_negative = [
            self.joint_damping,
            self.pitch_damping,
            self.gravity,
            self.contact_stiffness,
            self.contact_damping,
            self.friction,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) {
            return fail("damping, gravity, stiffness and friction must be non-negative");
        }
        if !self.hip_offsets.iter().all(|h| h.is_finite())
            || !self.jump_clearance.is_finite()
            || !self.fall_height.is_finite()
        {
            return fail("geometry must be finite");
        }
        Ok(())
    }

    /// Names accepted by [`CrawlerConfig::set_param`].
    pub const PARAM_NAMES: [&'static str; 20] = [
        "link_length",
        "body_mass",
        "body_inertia",
        "joint_inertia",
        "joint_damping",
        "pitch_damping",
        "torque_limit",
        "joint_limit_min",
        "joint_limit_max",
        "dt",
        "substeps",
        "gravity",
        "contact_stiffness",
        "contact_damping",
        "friction",
        "friction_smoothing",
        "walk_horizon",
        "jump_horizon",
        "jump_clearance",
        "fall_height",
    ];

    /// Sets one shared physical constant by name. Integer parameters must be
    /// given whole values. On error `self` is left unchanged.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let mut next = self.clone();
        next.assign(name, value)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn assign(&mut self, name: &str, value: f64) -> Result<()> {
        let whole = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{name} must be a whole number")))
            }
        };
        match name {
            "link_length" => self.link_length = value,
            "body_mass" => self.body_mass = value,
            "body_inertia" => self.body_inertia = value,
            "joint_inertia" => self.joint_inertia = value,
            "joint_damping" => self.joint_damping = value,
            "pitch_damping" => self.pitch_damping = value,
            "torque_limit" => self.torque_limit = value,
            "joint_limit_min" => self.joint_limits.0 = value,
            "joint_limit_max" => self.joint_limits.1 = value,
            "dt" => self.dt = value,
            "substeps" => self.substeps = whole(value)?,
            "gravity" => self.gravity = value,
            "contact_stiffness" => self.contact_stiffness = value,
            "contact_damping" => self.contact_damping = value,
            "friction" => self.friction = value,
            "friction_smoothing" => self.friction_smoothing = value,
            "walk_horizon" => self.walk_horizon = whole(value)?,
            "jump_horizon" => self.jump_horizon = whole(value)?,
            "jump_clearance" => self.jump_clearance = value,
            "fall_height" => self.fall_height = value,
            _ => return Err(Error::InvalidConfig(format!("unknown crawler parameter {name}"))),
        }
        Ok(())
    }

    /// Number of actuated joints `m`.
    pub fn dof(&self) -> usize {
        self.legs * self.joints_per_leg
    }

    /// `2m + 6`.
    pub fn observation_dim(&self) -> usize {
        2 * self.dof() + slot::JOINTS
    }

    /// Body height with every leg hanging straight.
    pub fn standing_height(&self) -> f64 {
        self.joints_per_leg as f64 * self.link_length
    }

    pub fn z_terminate(&self) -> f64 {
        self.standing_height() + self.jump_clearance
    }
}

/// Preset names, in increasing DoF.
pub const PRESET_NAMES: [&str; 6] = [
    "crawler-2",
    "crawler-4",
    "crawler-6",
    "crawler-8",
    "crawler-12",
    "crawler-16",
];

/// The DoF ladder: `(legs, joints_per_leg)` per preset.
pub fn preset(name: &str) -> Result<CrawlerConfig> {
    let (legs, joints) = match name {
        "crawler-2" => (2, 1),
        "crawler-4" => (2, 2),
        "crawler-6" => (2, 3),
        "crawler-8" => (4, 2),
        "crawler-12" => (4, 3),
        "crawler-16" => (4, 4),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(CrawlerConfig::new(legs, joints))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskKind {
    Walk,
    Jump,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Walk => "walk",
            TaskKind::Jump => "jump",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "walk" => Some(TaskKind::Walk),
            "jump" => Some(TaskKind::Jump),
            _ => None,
        }
    }
}

/// The true reward and termination rules of a task. Both are functions of the
/// observation alone, so they apply unchanged to model-predicted observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub horizon: usize,
    /// Height at which a jump episode ends (ignored for walking).
    pub z_terminate: f64,
    pub fall_height: f64,
    pub dt: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, config: &CrawlerConfig) -> Self {
        let horizon = match kind {
            TaskKind::Walk => config.walk_horizon,
            TaskKind::Jump => config.jump_horizon,
        };
        Self {
            kind,
            horizon,
            z_terminate: config.z_terminate(),
            fall_height: config.fall_height,
            dt: config.dt,
        }
    }

    pub fn walk(config: &CrawlerConfig) -> Self {
        Self::new(TaskKind::Walk, config)
    }

    pub fn jump(config: &CrawlerConfig) -> Self {
        Self::new(TaskKind::Jump, config)
    }

    /// Forward (walk) or vertical (jump) displacement over one step.
    pub fn reward(&self, observation: &[f64]) -> f64 {
        match self.kind {
            TaskKind::Walk => observation[slot::VX] * self.dt,
            TaskKind::Jump => observation[slot::VZ] * self.dt,
        }
    }

    /// Whether the observation ends the episode before the horizon.
    pub fn is_terminal(&self, observation: &[f64]) -> bool {
        let z = observation[slot::Z];
        z < self.fall_height || (self.kind == TaskKind::Jump && z >= self.z_terminate)
    }
}

/// Full simulator state. Only part of it is observable.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsState {
    pub x: f64,
    pub z: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    /// Joint angles, leg-major.
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    pub step_index: usize,
}

impl PhysicsState {
    pub fn is_finite(&self) -> bool {
        [self.x, self.z, self.vx, self.vz, self.pitch, self.pitch_rate]
            .iter()
            .chain(&self.q)
            .chain(&self.w)
            .all(|v| v.is_finite())
    }
}

/// `[z, vx, vy, vz, roll, pitch, q.., w..]`, length `2m + 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: PhysicsState,
    pub observation: Observation,
    pub reward: f64,
    /// Fell, or (jump) cleared the target height.
    pub terminated: bool,
    /// Reached the task horizon.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Starting state: body at rest at `x = 0`, joints jittered, height chosen so
/// the lowest foot touches the ground.
pub fn reset(config: &CrawlerConfig, seed: u64) -> (PhysicsState, Observation) {
    let mut rng = rng_from_seed(seed);
    let m = config.dof();
    let q: Vec<f64> = (0..m)
        .map(|_| rng.random_range(-RESET_JITTER..=RESET_JITTER))
        .collect();
    let z = q
        .chunks_exact(config.joints_per_leg)
        .map(|leg| {
            let mut angle = 0.0;
            leg.iter()
                .map(|qj| {
                    angle += qj;
                    config.link_length * libm::cos(angle)
                })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let state = PhysicsState {
        x: 0.0,
        z,
        vx: 0.0,
        vz: 0.0,
        pitch: 0.0,
        pitch_rate: 0.0,
        q,
        w: vec![0.0; m],
        step_index: 0,
    };
    let obs = observe(&state, config);
    (state, obs)
}

/// Sensor view of a state. The lateral velocity and roll slots are always 0.
pub fn observe(state: &PhysicsState, config: &CrawlerConfig) -> Observation {
    let mut o = Vec::with_capacity(config.observation_dim());
    o.extend_from_slice(&[state.z, state.vx, 0.0, state.vz, 0.0, state.pitch]);
    o.extend_from_slice(&state.q);
    o.extend_from_slice(&state.w);
    Observation(o)
}

/// Position and velocity of one foot in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootKinematics {
    pub x: f64,
    pub z: f64,
    pub vx: f64,
    pub vz: f64,
}

/// Forward kinematics for every foot, in leg order.
pub fn feet(state: &PhysicsState, config: &CrawlerConfig) -> Vec<FootKinematics> {
    let (sp, cp) = libm::sincos(state.pitch);
    let omega = state.pitch_rate;
    let j = config.joints_per_leg;
    config
        .hip_offsets
        .iter()
        .enumerate()
        .map(|(leg, &h)| {
            // Hip relative to the body centre and its velocity.
            let (rx, rz) = (h * cp, h * sp);
            let mut f = FootKinematics {
                x: state.x + rx,
                z: state.z + rz,
                vx: state.vx - omega * rz,
                vz: state.vz + omega * rx,
            };
            let mut angle = state.pitch - FRAC_PI_2;
            let mut rate = omega;
            for k in 0..j {
                angle += state.q[leg * j + k];
                rate += state.w[leg * j + k];
                let (s, c) = libm::sincos(angle);
                f.x += config.link_length * c;
                f.z += config.link_length * s;
                f.vx -= config.link_length * s * rate;
                f.vz += config.link_length * c * rate;
            }
            f
        })
        .collect()
}

/// Net ground reaction on the body: force components and moment about the
/// centre of mass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactWrench {
    pub fx: f64,
    pub fz: f64,
    pub moment: f64,
    pub feet_in_contact: usize,
}

pub fn contact_wrench(state: &PhysicsState, config: &CrawlerConfig) -> ContactWrench {
    let mut wrench = ContactWrench::default();
    for foot in feet(state, config) {
        if foot.z >= 0.0 {
            continue;
        }
        let normal =
            (config.contact_stiffness * -foot.z - config.contact_damping * foot.vz).max(0.0);
        let tangential =
            -config.friction * normal * libm::tanh(foot.vx / config.friction_smoothing);
        let (rx, rz) = (foot.x - state.x, foot.z - state.z);
        wrench.fx += tangential;
        wrench.fz += normal;
        wrench.moment += rx * normal - rz * tangential;
        wrench.feet_in_contact += 1;
    }
    wrench
}

fn validate_action(action: &[f64], dof: usize) -> Result<()> {
    check_len("action", dof, action.len())?;
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

/// Advances the physics by one control period. Actions must already lie in
/// `[-1, 1]`; the resulting torques are held for all substeps.
pub fn advance(state: &PhysicsState, action: &[f64], config: &CrawlerConfig) -> Result<PhysicsState> {
    validate_action(action, config.dof())?;
    let mut next = state.clone();
    for _ in 0..config.substeps {
        substep(&mut next, action, config);
    }
    next.step_index += 1;
    if !next.is_finite() {
        return Err(Error::NonFinite("physics state"));
    }
    Ok(next)
}

fn substep(state: &mut PhysicsState, action: &[f64], config: &CrawlerConfig) {
    let h = config.dt / config.substeps as f64;
    let (qmin, qmax) = config.joint_limits;

    for ((q, w), a) in state.q.iter_mut().zip(&mut state.w).zip(action) {
        let torque = config.torque_limit * a;
        *w += h * (torque - config.joint_damping * *w) / config.joint_inertia;
        let target = *q + h * *w;
        if target < qmin || target > qmax {
            *q = target.clamp(qmin, qmax);
            *w = 0.0;
        } else {
            *q = target;
        }
    }

    // Contact is evaluated with the updated joints and the current body pose.
    // Friction and pitch damping are stiff, so (vx, pitch rate) take a
    // linearly implicit step: each foot's friction is expanded to first order
    // in its slip velocity, which changes by dvx - rz * domega.
    let mut fx = 0.0;
    let mut fz = 0.0;
    let mut moment = -config.pitch_damping * state.pitch_rate;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for foot in feet(state, config) {
        if foot.z >= 0.0 {
            continue;
        }
        let normal =
            (config.contact_stiffness * -foot.z - config.contact_damping * foot.vz).max(0.0);
        let t = libm::tanh(foot.vx / config.friction_smoothing);
        let tangential = -config.friction * normal * t;
        // d(tangential)/d(slip velocity), never positive.
        let slope = -config.friction * normal * (1.0 - t * t) / config.friction_smoothing;
        let (rx, rz) = (foot.x - state.x, foot.z - state.z);
        fx += tangential;
        fz += normal;
        moment += rx * normal - rz * tangential;
        s0 += slope;
        s1 += slope * rz;
        s2 += slope * rz * rz;
    }
    let a11 = config.body_mass - h * s0;
    let a12 = h * s1;
    let a22 = config.body_inertia + h * config.pitch_damping - h * s2;
    let (b1, b2) = (h * fx, h * moment);
    let det = a11 * a22 - a12 * a12;
    state.vx += (a22 * b1 - a12 * b2) / det;
    state.pitch_rate += (a11 * b2 - a12 * b1) / det;
    state.vz += h * (fz / config.body_mass - config.gravity);
    state.x += h * state.vx;
    state.z += h * state.vz;
    state.pitch += h * state.pitch_rate;
}

/// One environment step: physics, observation, reward and episode flags.
pub fn step(
    state: &PhysicsState,
    action: &[f64],
    config: &CrawlerConfig,
    task: &TaskSpec,
) -> Result<Step> {
    let next = advance(state, action, config)?;
    let observation = observe(&next, config);
    let reward = task.reward(&observation);
    let terminated = task.is_terminal(&observation);
    let truncated = !terminated && next.step_index >= task.horizon;
    Ok(Step {
        state: next,
        observation,
        reward,
        terminated,
        truncated,
    })
}

/// Translational and rotational kinetic energy plus potential energy of the body.
pub fn body_energy(state: &PhysicsState, config: &CrawlerConfig) -> f64 {
    0.5 * config.body_mass * (state.vx * state.vx + state.vz * state.vz)
        + 0.5 * config.body_inertia * state.pitch_rate * state.pitch_rate
        + config.body_mass * config.gravity * state.z
}

/// One transition as seen by a learning agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Anything an agent can be trained against: the real crawler or a learned
/// model standing in for it.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}

/// Real-environment usage, for matched-budget accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Usage {
    pub steps: u64,
    pub resets: u64,
}

/// The real observation an episode starts from, with the hidden state behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedObservation {
    pub state: PhysicsState,
    pub observation: Observation,
}

/// A stateful crawler that counts every reset and step it serves. Episode
/// `k` is reset with seed `mix_seed([seed, k])`.
#[derive(Debug, Clone)]
pub struct CrawlerEnv {
    config: CrawlerConfig,
    task: TaskSpec,
    seed: u64,
    episodes: u64,
    state: Option<PhysicsState>,
    usage: Usage,
}

impl CrawlerEnv {
    pub fn new(config: CrawlerConfig, task: TaskSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            task,
            seed,
            episodes: 0,
            state: None,
            usage: Usage::default(),
        })
    }

    pub fn config(&self) -> &CrawlerConfig {
        &self.config
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn usage(&self) -> Usage {
        self.usage
    }

    pub fn state(&self) -> Option<&PhysicsState> {
        self.state.as_ref()
    }

    /// Starts the next episode and returns its full seed observation.
    pub fn reset_seed(&mut self) -> SeedObservation {
        let (state, observation) = reset(&self.config, mix_seed(&[self.seed, self.episodes]));
        self.episodes += 1;
        self.usage.resets += 1;
        self.state = Some(state.clone());
        SeedObservation { state, observation }
    }

    /// Steps the current episode, returning the full step record.
    pub fn step_full(&mut self, action: &[f64]) -> Result<Step> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("step called before reset".to_string()))?;
        let st = step(state, action, &self.config, &self.task)?;
        self.usage.steps += 1;
        self.state = Some(st.state.clone());
        Ok(st)
    }
}

impl Environment for CrawlerEnv {
    fn observation_dim(&self) -> usize {
        self.config.observation_dim()
    }

    fn action_dim(&self) -> usize {
        self.config.dof()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        Ok(self.reset_seed().observation.into_inner())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let st = self.step_full(action)?;
        Ok(EnvStep {
            reward: st.reward,
            terminated: st.terminated,
            truncated: st.truncated,
            observation: st.observation.into_inner(),
        })
    }
}
