//! Closed-form continuous-control environments.
//!
//! Environments are stateless descriptions: the state is an [`EnvState`] value
//! advanced by the pure transition [`Env::step`]. Three tasks are provided:
//!
//! * `cliff-runner`: a point mass rewarded for positive velocity, with an
//!   absorbing cliff at `x = 10`.
//! * `planar-peg`: a two-link velocity-controlled arm moving its tip between
//!   a "peg out" and a "peg in" pose. Fully reversible.
//! * `spill-reacher`: a planar reacher carrying an unstable load whose tilt
//!   is driven by lateral acceleration; tilting too far spills it for good.

use rand::Rng;

use crate::{Error, Result};

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub max_forward_steps: usize,
    pub max_reset_steps: usize,
    pub default_p_thresh: f64,
}

/// Observation plus the absorbing irrecoverability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub irrecoverable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub distance_to_goal: f64,
    pub distance_to_initial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub info: StepInfo,
}

/// Reset-reward flavour handed to the reward-based reset baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    Shaped,
    Sparse,
}

/// Which pose the planar arm starts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PegTask {
    Insert,
    Remove,
}

impl PegTask {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "insert" => Some(PegTask::Insert),
            "remove" => Some(PegTask::Remove),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    CliffRunner(CliffRunner),
    PlanarPeg(PlanarPeg),
    SpillReacher(SpillReacher),
}

pub const ENV_NAMES: [&str; 3] = ["cliff-runner", "planar-peg", "spill-reacher"];

impl Env {
    /// Looks up an environment by name. `task` only matters for `planar-peg`.
    pub fn from_name(name: &str, task: &str) -> Result<Self> {
        match name {
            "cliff-runner" => Ok(Env::CliffRunner(CliffRunner::new())),
            "planar-peg" => {
                let task = PegTask::parse(task)
                    .ok_or_else(|| Error::Config(format!("unknown planar-peg task '{task}'")))?;
                Ok(Env::PlanarPeg(PlanarPeg::new(task)))
            }
            "spill-reacher" => Ok(Env::SpillReacher(SpillReacher::new())),
            other => Err(Error::Config(format!(
                "unknown environment '{other}' (expected one of {})",
                ENV_NAMES.join(", ")
            ))),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        match self {
            Env::CliffRunner(e) => &e.spec,
            Env::PlanarPeg(e) => &e.spec,
            Env::SpillReacher(e) => &e.spec,
        }
    }

    /// Samples from the unimodal initial distribution.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        match self {
            Env::CliffRunner(e) => e.reset(rng),
            Env::PlanarPeg(e) => e.reset(rng),
            Env::SpillReacher(e) => e.reset(rng),
        }
    }

    /// Deterministic transition. Actions are clipped to `[-1, 1]`; an
    /// irrecoverable state is frozen and earns zero reward.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepResult> {
        let spec = self.spec();
        if state.observation.len() != spec.state_dim {
            return Err(Error::Dimension {
                what: "state",
                expected: spec.state_dim,
                got: state.observation.len(),
            });
        }
        if action.len() != spec.action_dim {
            return Err(Error::Dimension {
                what: "action",
                expected: spec.action_dim,
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        if state.irrecoverable {
            return Ok(StepResult {
                next_state: state.clone(),
                reward: 0.0,
                info: self.info(state),
            });
        }
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let (next_state, reward) = match self {
            Env::CliffRunner(e) => e.transition(state, &clipped),
            Env::PlanarPeg(e) => e.transition(state, &clipped),
            Env::SpillReacher(e) => e.transition(state, &clipped),
        };
        let info = self.info(&next_state);
        Ok(StepResult {
            next_state,
            reward,
            info,
        })
    }

    /// True iff recoverable and inside the initial tolerance region.
    pub fn is_initial(&self, state: &EnvState) -> bool {
        if state.irrecoverable {
            return false;
        }
        match self {
            Env::CliffRunner(e) => e.within_initial(state),
            Env::PlanarPeg(e) => e.within_initial(state),
            Env::SpillReacher(e) => e.within_initial(state),
        }
    }

    pub fn info(&self, state: &EnvState) -> StepInfo {
        match self {
            Env::CliffRunner(e) => e.info(state),
            Env::PlanarPeg(e) => e.info(state),
            Env::SpillReacher(e) => e.info(state),
        }
    }

    /// Distance scale used to normalise the shaped reset reward.
    pub fn initial_distance_scale(&self) -> f64 {
        match self {
            Env::CliffRunner(_) => CLIFF_X,
            Env::PlanarPeg(e) => e.goal_distance,
            Env::SpillReacher(_) => 1.0,
        }
    }

    pub fn reset_reward(&self, state: &EnvState, mode: RewardMode) -> f64 {
        match mode {
            RewardMode::Sparse => {
                if self.is_initial(state) {
                    1.0
                } else {
                    0.0
                }
            }
            RewardMode::Shaped => {
                let d = self.info(state).distance_to_initial;
                1.0 - (d / self.initial_distance_scale()).min(1.0)
            }
        }
    }
}

fn norm2(x: f64, y: f64) -> f64 {
    x.hypot(y)
}

// ─── cliff-runner ──────────────────────────────────────────────────────────

pub const CLIFF_X: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CliffRunner {
    spec: EnvSpec,
}

impl CliffRunner {
    pub const MAX_SPEED: f64 = 2.0;
    pub const ACCEL: f64 = 2.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "cliff-runner",
                state_dim: 3,
                action_dim: 1,
                dt: 0.05,
                max_forward_steps: 500,
                max_reset_steps: 1000,
                default_p_thresh: 0.05,
            },
        }
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let x = rng.random_range(-0.05..=0.05);
        EnvState {
            observation: vec![x, 0.0, 0.0],
            irrecoverable: false,
        }
    }

    fn transition(&self, state: &EnvState, a: &[f64]) -> (EnvState, f64) {
        let dt = self.spec.dt;
        let (x, v) = (state.observation[0], state.observation[1]);
        let v2 = (v + Self::ACCEL * a[0] * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let x2 = x + v2 * dt;
        let fallen = x2 >= CLIFF_X;
        let reward = v2.max(0.0) / Self::MAX_SPEED;
        (
            EnvState {
                observation: vec![x2, v2, if fallen { 1.0 } else { 0.0 }],
                irrecoverable: fallen,
            },
            reward,
        )
    }

    fn within_initial(&self, state: &EnvState) -> bool {
        state.observation[0].abs() <= 0.1 && state.observation[1].abs() <= 0.1
    }

    fn info(&self, state: &EnvState) -> StepInfo {
        let x = state.observation[0];
        StepInfo {
            distance_to_goal: (CLIFF_X - x).max(0.0),
            distance_to_initial: x.abs(),
        }
    }
}

impl Default for CliffRunner {
    fn default() -> Self {
        Self::new()
    }
}

// ─── planar-peg ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPeg {
    spec: EnvSpec,
    pub task: PegTask,
    /// Joint angles of the starting pose.
    pub initial_pose: [f64; 2],
    pub initial_tip: [f64; 2],
    pub goal_tip: [f64; 2],
    goal_distance: f64,
}

impl PlanarPeg {
    pub const LINK1: f64 = 1.0;
    pub const LINK2: f64 = 0.8;
    pub const POSE_OUT: [f64; 2] = [0.0, 0.9];
    pub const POSE_IN: [f64; 2] = [1.2, 1.8];
    pub const JITTER: f64 = 0.02;
    pub const TOLERANCE: f64 = 0.05;

    pub fn new(task: PegTask) -> Self {
        let (start, goal) = match task {
            PegTask::Insert => (Self::POSE_OUT, Self::POSE_IN),
            PegTask::Remove => (Self::POSE_IN, Self::POSE_OUT),
        };
        let initial_tip = Self::tip_of_angles(start);
        let goal_tip = Self::tip_of_angles(goal);
        let goal_distance = norm2(initial_tip[0] - goal_tip[0], initial_tip[1] - goal_tip[1]);
        Self {
            spec: EnvSpec {
                name: "planar-peg",
                state_dim: 4,
                action_dim: 2,
                dt: 0.05,
                max_forward_steps: 100,
                max_reset_steps: 200,
                default_p_thresh: 0.1,
            },
            task,
            initial_pose: start,
            initial_tip,
            goal_tip,
            goal_distance,
        }
    }

    pub fn tip_of_angles(theta: [f64; 2]) -> [f64; 2] {
        Self::tip([theta[0].cos(), theta[0].sin(), theta[1].cos(), theta[1].sin()])
    }

    /// Forward kinematics from the `(cos θ1, sin θ1, cos θ2, sin θ2)` observation.
    pub fn tip(obs: [f64; 4]) -> [f64; 2] {
        let [c1, s1, c2, s2] = obs;
        let c12 = c1 * c2 - s1 * s2;
        let s12 = s1 * c2 + c1 * s2;
        [Self::LINK1 * c1 + Self::LINK2 * c12, Self::LINK1 * s1 + Self::LINK2 * s12]
    }

    fn obs4(state: &EnvState) -> [f64; 4] {
        let o = &state.observation;
        [o[0], o[1], o[2], o[3]]
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let t1 = self.initial_pose[0] + rng.random_range(-Self::JITTER..=Self::JITTER);
        let t2 = self.initial_pose[1] + rng.random_range(-Self::JITTER..=Self::JITTER);
        EnvState {
            observation: vec![t1.cos(), t1.sin(), t2.cos(), t2.sin()],
            irrecoverable: false,
        }
    }

    fn reward_at(&self, tip: [f64; 2]) -> f64 {
        let d = norm2(tip[0] - self.goal_tip[0], tip[1] - self.goal_tip[1]);
        1.0 - (d / self.goal_distance).min(1.0)
    }

    fn transition(&self, state: &EnvState, a: &[f64]) -> (EnvState, f64) {
        let dt = self.spec.dt;
        let [c1, s1, c2, s2] = Self::obs4(state);
        // Rotate each joint's (cos, sin) pair by its angular increment.
        let rot = |c: f64, s: f64, d: f64| {
            let (sd, cd) = d.sin_cos();
            (c * cd - s * sd, s * cd + c * sd)
        };
        let (n1c, n1s) = rot(c1, s1, a[0] * dt);
        let (n2c, n2s) = rot(c2, s2, a[1] * dt);
        let obs = [n1c, n1s, n2c, n2s];
        let reward = self.reward_at(Self::tip(obs));
        (
            EnvState {
                observation: obs.to_vec(),
                irrecoverable: false,
            },
            reward,
        )
    }

    /// Task reward of a state (independent of the action that led there).
    pub fn reward(&self, state: &EnvState) -> f64 {
        self.reward_at(Self::tip(Self::obs4(state)))
    }

    fn within_initial(&self, state: &EnvState) -> bool {
        self.info(state).distance_to_initial <= Self::TOLERANCE
    }

    fn info(&self, state: &EnvState) -> StepInfo {
        let tip = Self::tip(Self::obs4(state));
        StepInfo {
            distance_to_goal: norm2(tip[0] - self.goal_tip[0], tip[1] - self.goal_tip[1]),
            distance_to_initial: norm2(tip[0] - self.initial_tip[0], tip[1] - self.initial_tip[1]),
        }
    }
}

// ─── spill-reacher ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SpillReacher {
    spec: EnvSpec,
}

impl SpillReacher {
    pub const GOAL: [f64; 2] = [1.0, 0.0];
    pub const SPILL_ANGLE: f64 = 0.5;
    pub const TILT_GAIN: f64 = 0.8;
    pub const COUPLING: f64 = 0.6;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "spill-reacher",
                state_dim: 6,
                action_dim: 2,
                dt: 0.05,
                max_forward_steps: 100,
                max_reset_steps: 200,
                default_p_thresh: 0.1,
            },
        }
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let px = rng.random_range(-0.01..=0.01);
        let py = rng.random_range(-0.01..=0.01);
        let phi = rng.random_range(-0.02..=0.02);
        EnvState {
            observation: vec![px, py, 0.0, 0.0, phi, 0.0],
            irrecoverable: false,
        }
    }

    fn transition(&self, state: &EnvState, a: &[f64]) -> (EnvState, f64) {
        let dt = self.spec.dt;
        let o = &state.observation;
        let vx = (o[2] + a[0] * dt).clamp(-1.0, 1.0);
        let vy = (o[3] + a[1] * dt).clamp(-1.0, 1.0);
        let px = o[0] + vx * dt;
        let py = o[1] + vy * dt;
        let phi = o[4] + dt * (Self::TILT_GAIN * o[4].sin() + Self::COUPLING * a[0]);
        let spilled = phi.abs() > Self::SPILL_ANGLE;
        let d = norm2(px - Self::GOAL[0], py - Self::GOAL[1]);
        // Reward ignores the tilt; only the position counts.
        let reward = 1.0 - d.min(1.0);
        (
            EnvState {
                observation: vec![px, py, vx, vy, phi, if spilled { 1.0 } else { 0.0 }],
                irrecoverable: spilled,
            },
            reward,
        )
    }

    fn within_initial(&self, state: &EnvState) -> bool {
        let o = &state.observation;
        norm2(o[0], o[1]) <= 0.05 && norm2(o[2], o[3]) <= 0.1 && o[4].abs() <= 0.1
    }

    fn info(&self, state: &EnvState) -> StepInfo {
        let o = &state.observation;
        StepInfo {
            distance_to_goal: norm2(o[0] - Self::GOAL[0], o[1] - Self::GOAL[1]),
            distance_to_initial: norm2(o[0], o[1]),
        }
    }
}

impl Default for SpillReacher {
    fn default() -> Self {
        Self::new()
    }
}
