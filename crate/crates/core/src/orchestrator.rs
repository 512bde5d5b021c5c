//! The alternating forward/reset training loop with trigger, request and
//! manual-reset accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{LntParams, LntResetAgent};
use crate::buffer::{RingBuffer, Transition};
use crate::envs::{Env, EnvState, RewardMode};
use crate::forward::{ActorCriticParams, ForwardAgent, TransitionBatch};
use crate::reset::{ResetAgent, ResetParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    None,
    Lnt,
    LntSparse,
}

impl BaselineMode {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMode::None => "none",
            BaselineMode::Lnt => "lnt",
            BaselineMode::LntSparse => "lnt-sparse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "ours" => Some(BaselineMode::None),
            "lnt" => Some(BaselineMode::Lnt),
            "lnt-sparse" => Some(BaselineMode::LntSparse),
            _ => None,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub task: String,
    pub total_steps: u64,
    /// Defaults to the environment's threshold when absent.
    pub p_thresh: Option<f64>,
    pub trigger_enabled: bool,
    pub eval_trigger: bool,
    pub baseline: BaselineMode,
    pub gamma: f64,
    pub n_step: usize,
    pub ensemble_size: usize,
    pub prior_scale: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub example_capacity: usize,
    pub forward_batch: usize,
    pub example_batch: usize,
    pub segment_batch: usize,
    pub noise_sigma: f64,
    pub warmup_steps: u64,
    /// Also run gradient updates while warmup actions are uniform random.
    pub warmup_updates: bool,
    pub eval_interval: u64,
    pub seed: u64,
    pub lnt_ensemble_size: usize,
    /// Defaults to 20 (shaped) or 0.1 (sparse) when absent.
    pub q_thresh: Option<f64>,
    pub lnt_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "planar-peg".into(),
            task: "insert".into(),
            total_steps: 100_000,
            p_thresh: None,
            trigger_enabled: true,
            eval_trigger: true,
            baseline: BaselineMode::None,
            gamma: 0.99,
            n_step: 10,
            ensemble_size: 5,
            prior_scale: 3.0,
            tau: 1e-3,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: vec![400, 300],
            buffer_capacity: 500_000,
            example_capacity: 10_000,
            forward_batch: 256,
            example_batch: 128,
            segment_batch: 128,
            noise_sigma: 0.1,
            warmup_steps: 1000,
            warmup_updates: false,
            eval_interval: 5000,
            seed: 0,
            lnt_ensemble_size: 20,
            q_thresh: None,
            lnt_batch: 128,
        }
    }
}

impl RunConfig {
    /// Checks ranges and fills environment-dependent defaults.
    pub fn resolve(&self) -> Result<RunConfig> {
        let env = Env::from_name(&self.env, &self.task)?;
        let mut cfg = self.clone();
        cfg.p_thresh.get_or_insert(env.spec().default_p_thresh);
        if let Some(mode) = cfg.reward_mode() {
            cfg.q_thresh.get_or_insert(LntParams::default_q_thresh(mode));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        fn fail(key: &str, why: &str) -> Result<()> {
            Err(Error::Config(format!("{key}: {why}")))
        }
        let unit = |key: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                fail(key, &format!("{v} must lie in (0, 1]"))
            }
        };
        if let Some(p) = self.p_thresh {
            if !(0.0..=1.0).contains(&p) {
                return fail("p_thresh", &format!("{p} must lie in [0, 1]"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma", &format!("{} must lie in (0, 1)", self.gamma));
        }
        unit("tau", self.tau)?;
        unit("actor_lr", self.actor_lr)?;
        unit("critic_lr", self.critic_lr)?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail("noise_sigma", "must be finite and >= 0");
        }
        if !(self.prior_scale.is_finite() && self.prior_scale >= 0.0) {
            return fail("prior_scale", "must be finite and >= 0");
        }
        if let Some(q) = self.q_thresh {
            if !q.is_finite() {
                return fail("q_thresh", "must be finite");
            }
        }
        for (key, v) in [
            ("n_step", self.n_step),
            ("ensemble_size", self.ensemble_size),
            ("buffer_capacity", self.buffer_capacity),
            ("example_capacity", self.example_capacity),
            ("forward_batch", self.forward_batch),
            ("example_batch", self.example_batch),
            ("segment_batch", self.segment_batch),
            ("lnt_ensemble_size", self.lnt_ensemble_size),
            ("lnt_batch", self.lnt_batch),
        ] {
            if v == 0 {
                return fail(key, "must be >= 1");
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden", "needs at least one layer, all widths >= 1");
        }
        Ok(())
    }

    pub fn reward_mode(&self) -> Option<RewardMode> {
        match self.baseline {
            BaselineMode::None => None,
            BaselineMode::Lnt => Some(RewardMode::Shaped),
            BaselineMode::LntSparse => Some(RewardMode::Sparse),
        }
    }

    fn actor_critic(&self) -> ActorCriticParams {
        ActorCriticParams {
            hidden: self.hidden.clone(),
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeKind {
    Forward,
    Reset,
    Eval,
}

impl EpisodeKind {
    pub fn name(self) -> &'static str {
        match self {
            EpisodeKind::Forward => "forward",
            EpisodeKind::Reset => "reset",
            EpisodeKind::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Triggered,
    Requested,
    ResetSuccess,
    ManualReset,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Triggered => "triggered",
            Termination::Requested => "requested",
            Termination::ResetSuccess => "reset_success",
            Termination::ManualReset => "manual_reset",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "triggered" => Some(Termination::Triggered),
            "requested" => Some(Termination::Requested),
            "reset_success" => Some(Termination::ResetSuccess),
            "manual_reset" => Some(Termination::ManualReset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub kind: EpisodeKind,
    pub steps: usize,
    pub ret: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerEvent {
    pub step: u64,
    pub state: Vec<f64>,
    pub distance_to_initial: f64,
    /// Mean success probability (ours) or ensemble-minimum Q (baselines).
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub global_step: u64,
    pub index: u64,
    pub outcome: EpisodeOutcome,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub manual_resets: u64,
    pub triggered_resets: u64,
    pub requested_resets: u64,
    pub reset_attempts: u64,
    pub reset_successes: u64,
    pub forward_steps: u64,
    pub reset_steps: u64,
    /// Forward or reset steps that entered an irrecoverable state.
    pub irrecoverable_entries: u64,
    /// Forward steps taken with the trigger bypassed to break a zero-step cycle.
    pub forced_steps: u64,
    pub eval_returns: Vec<(u64, f64)>,
    pub trigger_events: Vec<TriggerEvent>,
    pub episodes: Vec<EpisodeSummary>,
}

impl RunMetrics {
    pub fn total_steps(&self) -> u64 {
        self.forward_steps + self.reset_steps
    }

    pub fn forward_share(&self) -> f64 {
        let t = self.total_steps();
        if t == 0 {
            0.0
        } else {
            self.forward_steps as f64 / t as f64
        }
    }

    pub fn success_rate(&self) -> f64 {
        if self.reset_attempts == 0 {
            0.0
        } else {
            self.reset_successes as f64 / self.reset_attempts as f64
        }
    }

    /// Checks the counter identities; `open_forward` is true between a
    /// forward episode and its reset episode.
    pub fn check_accounting(&self, open_forward: bool) -> Result<()> {
        let fail = |m: String| Err(Error::Accounting(m));
        if self.reset_attempts != self.reset_successes + self.manual_resets {
            return fail(format!(
                "attempts {} != successes {} + manual {}",
                self.reset_attempts, self.reset_successes, self.manual_resets
            ));
        }
        let ends = self.triggered_resets + self.requested_resets;
        if ends != self.reset_attempts + open_forward as u64 {
            return fail(format!(
                "triggered {} + requested {} inconsistent with attempts {}",
                self.triggered_resets, self.requested_resets, self.reset_attempts
            ));
        }
        if self.trigger_events.len() as u64 != self.triggered_resets {
            return fail("trigger log length differs from trigger count".into());
        }
        Ok(())
    }
}

/// Trigger-event distances in step order.
pub fn curriculum_stat(metrics: &RunMetrics) -> Vec<(u64, f64)> {
    metrics
        .trigger_events
        .iter()
        .map(|e| (e.step, e.distance_to_initial))
        .collect()
}

/// One logged line: an episode or an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub global_step: u64,
    pub episode_index: u64,
    pub kind: EpisodeKind,
    pub ret: f64,
    pub termination: Option<Termination>,
    pub manual_resets: u64,
    pub triggered: u64,
    pub requested: u64,
    pub forward_share: f64,
    pub success_rate: f64,
    pub p_bar_at_trigger: Option<f64>,
    pub distance_at_trigger: Option<f64>,
}

/// Either reset learner behind one interface; the loop is otherwise shared.
#[derive(Debug, Clone, PartialEq)]
pub enum ResetLearner {
    Rce(ResetAgent),
    Lnt(LntResetAgent),
}

impl ResetLearner {
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            ResetLearner::Rce(a) => a.select_action(state, explore, rng),
            ResetLearner::Lnt(a) => a.select_action(state, explore, rng),
        }
    }

    /// Trigger decision and the score it was based on.
    pub fn trigger(&self, state: &[f64], action: &[f64], threshold: f64) -> Result<(bool, f64)> {
        match self {
            ResetLearner::Rce(a) => {
                let p = a.ensemble.success_probability(state, action)?.mean;
                Ok((p < threshold, p))
            }
            ResetLearner::Lnt(a) => {
                let q = a.min_q(state, action)?;
                Ok((q < threshold, q))
            }
        }
    }

    fn add_initial_example(&mut self, env: &Env, state: &EnvState) -> Result<()> {
        match self {
            ResetLearner::Rce(a) => a.add_initial_example(env, state),
            ResetLearner::Lnt(_) => Ok(()),
        }
    }

    fn observe(&mut self, env: &Env, s: &EnvState, a: &[f64], next: &EnvState) {
        match self {
            ResetLearner::Rce(agent) => agent.observe(s, a, next),
            ResetLearner::Lnt(agent) => {
                let reward = env.reset_reward(next, agent.params.mode);
                agent.transitions.push(Transition {
                    state: s.observation.clone(),
                    action: a.to_vec(),
                    reward,
                    next_state: next.observation.clone(),
                    terminal: next.irrecoverable && !s.irrecoverable,
                });
            }
        }
    }

    fn end_episode(&mut self) {
        if let ResetLearner::Rce(a) = self {
            a.end_episode();
        }
    }

    fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        match self {
            ResetLearner::Rce(a) => a.train_step(rng).map(|_| ()),
            ResetLearner::Lnt(a) => a.train_step(rng).map(|_| ()),
        }
    }
}

/// Complete state of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub env: Env,
    pub state: EnvState,
    pub forward: ForwardAgent,
    pub forward_buffer: RingBuffer<Transition>,
    pub reset: ResetLearner,
    pub rng: ChaCha8Rng,
    pub eval_rng: ChaCha8Rng,
    pub metrics: RunMetrics,
    pub global_step: u64,
    pub episode_index: u64,
    pub next_eval: u64,
    /// The previous cycle executed no environment step.
    pub stalled: bool,
}

fn uniform_action<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

impl Trainer {
    /// Seeded construction of every network, buffer and the environment.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let env = Env::from_name(&cfg.env, &cfg.task)?;
        let (sd, ad) = (env.spec().state_dim, env.spec().action_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let forward = ForwardAgent::new(sd, ad, cfg.actor_critic(), rng.random())?;
        let reset = match cfg.reward_mode() {
            None => ResetLearner::Rce(ResetAgent::new(
                sd,
                ad,
                ResetParams {
                    actor_critic: cfg.actor_critic(),
                    ensemble_size: cfg.ensemble_size,
                    prior_scale: cfg.prior_scale,
                    n_step: cfg.n_step,
                    example_batch: cfg.example_batch,
                    segment_batch: cfg.segment_batch,
                    example_capacity: cfg.example_capacity,
                    segment_capacity: cfg.buffer_capacity,
                },
                rng.random(),
            )?),
            Some(mode) => ResetLearner::Lnt(LntResetAgent::new(
                sd,
                ad,
                LntParams {
                    actor_critic: cfg.actor_critic(),
                    ensemble_size: cfg.lnt_ensemble_size,
                    mode,
                    q_thresh: cfg.q_thresh.expect("resolved"),
                    batch: cfg.lnt_batch,
                    capacity: cfg.buffer_capacity,
                },
                rng.random(),
            )?),
        };
        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        eval_rng.set_stream(1);
        let state = env.reset(&mut rng);
        Ok(Self {
            forward_buffer: RingBuffer::new(cfg.buffer_capacity),
            next_eval: cfg.eval_interval,
            cfg,
            env,
            state,
            forward,
            reset,
            rng,
            eval_rng,
            metrics: RunMetrics::default(),
            global_step: 0,
            episode_index: 0,
            stalled: false,
        })
    }

    pub fn is_done(&self) -> bool {
        self.global_step >= self.cfg.total_steps
    }

    fn in_warmup(&self) -> bool {
        self.global_step < self.cfg.warmup_steps
    }

    fn trigger_threshold(&self) -> f64 {
        match self.reset {
            ResetLearner::Rce(_) => self.cfg.p_thresh.expect("resolved"),
            ResetLearner::Lnt(_) => self.cfg.q_thresh.expect("resolved"),
        }
    }

    fn row(&self, kind: EpisodeKind, ret: f64, termination: Option<Termination>) -> MetricsRow {
        let trig = (termination == Some(Termination::Triggered))
            .then(|| self.metrics.trigger_events.last())
            .flatten();
        MetricsRow {
            global_step: self.global_step,
            episode_index: self.episode_index,
            kind,
            ret,
            termination,
            manual_resets: self.metrics.manual_resets,
            triggered: self.metrics.triggered_resets,
            requested: self.metrics.requested_resets,
            forward_share: self.metrics.forward_share(),
            success_rate: self.metrics.success_rate(),
            p_bar_at_trigger: trig.map(|e| e.score),
            distance_at_trigger: trig.map(|e| e.distance_to_initial),
        }
    }

    fn record(&mut self, outcome: EpisodeOutcome) -> MetricsRow {
        self.episode_index += 1;
        let row = self.row(outcome.kind, outcome.ret, Some(outcome.termination));
        self.metrics.episodes.push(EpisodeSummary {
            global_step: self.global_step,
            index: self.episode_index,
            outcome,
        });
        row
    }

    pub fn run_forward_episode(&mut self) -> Result<EpisodeOutcome> {
        if !self.env.is_initial(&self.state) {
            return Err(Error::Precondition("forward episode must start in an initial state".into()));
        }
        self.reset.add_initial_example(&self.env, &self.state)?;
        let max_steps = self.env.spec().max_forward_steps;
        let threshold = self.trigger_threshold();
        let mut force_first = self.stalled;
        let (mut steps, mut ret) = (0usize, 0.0);
        let termination = loop {
            let warm = self.in_warmup();
            let obs = self.state.observation.clone();
            let action = if warm {
                uniform_action(self.env.spec().action_dim, &mut self.rng)
            } else {
                self.forward.select_action(&obs, true, &mut self.rng)?
            };
            if self.cfg.trigger_enabled && !warm {
                if force_first {
                    self.metrics.forced_steps += 1;
                } else {
                    let (fire, score) = self.reset.trigger(&obs, &action, threshold)?;
                    if fire {
                        self.metrics.triggered_resets += 1;
                        self.metrics.trigger_events.push(TriggerEvent {
                            step: self.global_step,
                            state: self.state.observation.clone(),
                            distance_to_initial: self.env.info(&self.state).distance_to_initial,
                            score,
                        });
                        break Termination::Triggered;
                    }
                }
            }
            force_first = false;
            if steps == max_steps {
                self.metrics.requested_resets += 1;
                break Termination::Requested;
            }
            let result = self.env.step(&self.state, &action)?;
            let entered = result.next_state.irrecoverable && !self.state.irrecoverable;
            self.forward_buffer.push(Transition {
                state: obs,
                action,
                reward: result.reward,
                next_state: result.next_state.observation.clone(),
                terminal: entered,
            });
            ret += result.reward;
            steps += 1;
            self.global_step += 1;
            self.metrics.forward_steps += 1;
            self.state = result.next_state;
            if !warm || self.cfg.warmup_updates {
                let sample = self.forward_buffer.sample(&mut self.rng, self.cfg.forward_batch)?;
                let batch = TransitionBatch::from_transitions(&sample)?;
                self.forward.critic_update(&batch)?;
                self.forward.actor_update(&batch)?;
            }
            if entered {
                self.metrics.irrecoverable_entries += 1;
            }
            if self.state.irrecoverable {
                // Nothing more can happen in this episode.
                self.metrics.requested_resets += 1;
                break Termination::Requested;
            }
        };
        Ok(EpisodeOutcome {
            kind: EpisodeKind::Forward,
            steps,
            ret,
            termination,
        })
    }

    pub fn run_reset_episode(&mut self) -> Result<EpisodeOutcome> {
        self.metrics.reset_attempts += 1;
        let max_steps = self.env.spec().max_reset_steps;
        let (mut steps, mut ret) = (0usize, 0.0);
        let mut success = self.env.is_initial(&self.state);
        while !success && steps < max_steps {
            let warm = self.in_warmup();
            let action = if warm {
                uniform_action(self.env.spec().action_dim, &mut self.rng)
            } else {
                self.reset.select_action(&self.state.observation, true, &mut self.rng)?
            };
            let result = self.env.step(&self.state, &action)?;
            if result.next_state.irrecoverable && !self.state.irrecoverable {
                self.metrics.irrecoverable_entries += 1;
            }
            self.reset.observe(&self.env, &self.state, &action, &result.next_state);
            ret += result.reward;
            steps += 1;
            self.global_step += 1;
            self.metrics.reset_steps += 1;
            self.state = result.next_state;
            if !warm || self.cfg.warmup_updates {
                self.reset.train_step(&mut self.rng)?;
            }
            success = self.env.is_initial(&self.state);
        }
        self.reset.end_episode();
        let termination = if success {
            self.metrics.reset_successes += 1;
            Termination::ResetSuccess
        } else {
            self.state = self.env.reset(&mut self.rng);
            self.metrics.manual_resets += 1;
            Termination::ManualReset
        };
        Ok(EpisodeOutcome {
            kind: EpisodeKind::Reset,
            steps,
            ret,
            termination,
        })
    }

    /// Greedy forward episode from a fresh initial state followed by a greedy
    /// reset episode, on a copy of the environment. Only the evaluation RNG
    /// advances. Returns the forward return.
    pub fn evaluate_snapshot(&mut self) -> Result<f64> {
        let mut rng = self.eval_rng.clone();
        let ret = self.evaluate_with(&mut rng)?;
        self.eval_rng = rng;
        Ok(ret)
    }

    pub fn evaluate_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let env = self.env.clone();
        let mut state = env.reset(rng);
        let threshold = self.trigger_threshold();
        let use_trigger = self.cfg.trigger_enabled && self.cfg.eval_trigger;
        let mut ret = 0.0;
        for _ in 0..env.spec().max_forward_steps {
            let action = self.forward.select_action(&state.observation, false, rng)?;
            if use_trigger && self.reset.trigger(&state.observation, &action, threshold)?.0 {
                break;
            }
            let r = env.step(&state, &action)?;
            ret += r.reward;
            state = r.next_state;
            if state.irrecoverable {
                break;
            }
        }
        for _ in 0..env.spec().max_reset_steps {
            if env.is_initial(&state) {
                break;
            }
            let action = self.reset.select_action(&state.observation, false, rng)?;
            state = env.step(&state, &action)?.next_state;
        }
        Ok(ret)
    }

    /// One forward episode, one reset episode and any due evaluation.
    pub fn run_cycle(&mut self) -> Result<Vec<MetricsRow>> {
        let start = self.global_step;
        let mut rows = Vec::with_capacity(3);
        let fwd = self.run_forward_episode()?;
        rows.push(self.record(fwd));
        self.metrics.check_accounting(true)?;
        let rst = self.run_reset_episode()?;
        rows.push(self.record(rst));
        self.metrics.check_accounting(false)?;
        if self.metrics.total_steps() != self.global_step {
            return Err(Error::Accounting("step counters disagree with the global step".into()));
        }
        self.stalled = self.global_step == start;
        if self.cfg.eval_interval > 0 && self.global_step >= self.next_eval {
            let ret = self.evaluate_snapshot()?;
            self.metrics.eval_returns.push((self.global_step, ret));
            rows.push(self.row(EpisodeKind::Eval, ret, None));
            while self.next_eval <= self.global_step {
                self.next_eval += self.cfg.eval_interval;
            }
        }
        Ok(rows)
    }
}

/// Runs cycles until at least `total_steps` environment steps were taken,
/// handing every row to `sink`.
pub fn run_training_with<F>(trainer: &mut Trainer, mut sink: F) -> Result<()>
where
    F: FnMut(&MetricsRow) -> Result<()>,
{
    while !trainer.is_done() {
        for row in trainer.run_cycle()? {
            sink(&row)?;
        }
    }
    Ok(())
}

pub fn run_training(cfg: &RunConfig) -> Result<RunMetrics> {
    let mut trainer = Trainer::new(cfg)?;
    run_training_with(&mut trainer, |_| Ok(()))?;
    Ok(trainer.metrics)
}
