//! Example-based reset learner.
//!
//! A future-success classifier ensemble is trained by recursive classification
//! from initial-state examples and reset-episode segments. Its classifier
//! ratio `C / (1 - C)` estimates the discounted probability of returning to the
//! initial state, which drives both the reset trigger and the reset policy.

use std::collections::VecDeque;

use rand::Rng;

use crate::buffer::{NStepSegment, RingBuffer};
use crate::envs::{Env, EnvState};
use crate::forward::{actor_ascent_gradients, explore_noise, ActorCriticParams};
use crate::nn::{sigmoid, soft_update, softplus, AdamState, Gradients, Matrix, Mlp, MlpSpec, StepOutcome};
use crate::{Error, Result};

/// Upper clip on classifier outputs so the ratio stays a probability.
pub const C_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ResetParams {
    pub actor_critic: ActorCriticParams,
    pub ensemble_size: usize,
    pub prior_scale: f64,
    pub n_step: usize,
    pub example_batch: usize,
    pub segment_batch: usize,
    pub example_capacity: usize,
    pub segment_capacity: usize,
}

impl Default for ResetParams {
    fn default() -> Self {
        Self {
            actor_critic: ActorCriticParams::default(),
            ensemble_size: 5,
            prior_scale: 3.0,
            n_step: 10,
            example_batch: 128,
            segment_batch: 128,
            example_capacity: 10_000,
            segment_capacity: 500_000,
        }
    }
}

/// `C / (1 - C)` for a classifier value already clipped to `[0, 0.5]`.
pub fn classifier_ratio(c: f64) -> Result<f64> {
    if !(0.0..=C_MAX).contains(&c) {
        return Err(Error::Precondition(format!("classifier value {c} outside [0, 0.5]")));
    }
    Ok(c / (1.0 - c))
}

fn clipped_ratio(c: f64) -> f64 {
    let c = c.clamp(0.0, C_MAX);
    c / (1.0 - c)
}

/// Recursive-classification label from the two bootstrap ratios.
pub fn rce_label(gamma: f64, omega_next: f64, omega_horizon: f64, horizon: usize) -> f64 {
    let g1 = gamma * omega_next;
    let gn = gamma.powi(horizon as i32) * omega_horizon;
    0.5 * (g1 / (g1 + 1.0) + gn / (gn + 1.0))
}

/// Per-member success probabilities with their mean and minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessEstimate {
    pub members: Vec<f64>,
    pub mean: f64,
    pub min: f64,
}

impl SuccessEstimate {
    pub fn from_members(members: Vec<f64>) -> Self {
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        let min = members.iter().copied().fold(f64::INFINITY, f64::min);
        Self { members, mean, min }
    }
}

/// One trainable logit network plus its frozen randomized prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMember {
    pub trainable: Mlp,
    pub target: Mlp,
    pub prior: Mlp,
    pub opt: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEnsemble {
    pub members: Vec<ClassifierMember>,
    pub prior_scale: f64,
}

impl ClassifierEnsemble {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        size: usize,
        prior_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("ensemble size must be >= 1".into()));
        }
        let spec = MlpSpec::state_action(state_dim, action_dim, hidden);
        let members = (0..size as u64)
            .map(|i| {
                let trainable = Mlp::init(&spec, seed.wrapping_add(2 * i))?;
                let prior = Mlp::init(&spec, seed.wrapping_add(2 * i + 1))?;
                Ok(ClassifierMember {
                    target: trainable.clone(),
                    opt: AdamState::new(&trainable),
                    trainable,
                    prior,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, prior_scale })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member logits `z_train + beta * z_prior` for a batch.
    pub fn logits(&self, member: usize, states: &Matrix, actions: &Matrix, use_target: bool) -> Result<Vec<f64>> {
        let m = self.member(member)?;
        let net = if use_target { &m.target } else { &m.trainable };
        let z = net.predict(states, Some(actions))?;
        let p = m.prior.predict(states, Some(actions))?;
        Ok(z.as_slice()
            .iter()
            .zip(p.as_slice())
            .map(|(z, p)| z + self.prior_scale * p)
            .collect())
    }

    fn member(&self, i: usize) -> Result<&ClassifierMember> {
        self.members
            .get(i)
            .ok_or_else(|| Error::Precondition(format!("member index {i} out of range")))
    }

    /// Clipped classifier value `min(sigmoid(z), 0.5)` of one member.
    pub fn classifier_value(&self, member: usize, state: &[f64], action: &[f64], use_target: bool) -> Result<f64> {
        let z = self.logits(member, &Matrix::row_vector(state), &Matrix::row_vector(action), use_target)?;
        Ok(sigmoid(z[0]).min(C_MAX))
    }

    pub fn success_probability(&self, state: &[f64], action: &[f64]) -> Result<SuccessEstimate> {
        let s = Matrix::row_vector(state);
        let a = Matrix::row_vector(action);
        let members = (0..self.len())
            .map(|i| Ok(clipped_ratio(sigmoid(self.logits(i, &s, &a, false)?[0]))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SuccessEstimate::from_members(members))
    }

    /// Strictly `mean p < p_thresh`.
    pub fn should_trigger(&self, state: &[f64], action: &[f64], p_thresh: f64) -> Result<bool> {
        Ok(self.success_probability(state, action)?.mean < p_thresh)
    }

    /// Row-wise ensemble-minimum of clipped classifier values.
    pub fn min_value(&self, states: &Matrix, actions: &Matrix, use_target: bool) -> Result<Vec<f64>> {
        let mut out = vec![f64::INFINITY; states.rows()];
        for i in 0..self.len() {
            for (o, z) in out.iter_mut().zip(self.logits(i, states, actions, use_target)?) {
                *o = o.min(sigmoid(z).min(C_MAX));
            }
        }
        Ok(out)
    }
}

/// Stacked view of sampled segments.
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub next_states: Matrix,
    pub horizon_states: Matrix,
    pub horizons: Vec<usize>,
    pub absorbing: Vec<bool>,
}

impl SegmentBatch {
    pub fn from_segments(batch: &[&NStepSegment]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let col = |f: fn(&NStepSegment) -> &[f64]| Matrix::from_rows(&batch.iter().map(|s| f(s)).collect::<Vec<_>>());
        Ok(Self {
            states: col(|s| &s.state)?,
            actions: col(|s| &s.action)?,
            next_states: col(|s| &s.next_state)?,
            horizon_states: col(|s| &s.horizon_state)?,
            horizons: batch.iter().map(|s| s.horizon).collect(),
            absorbing: batch.iter().map(|s| s.absorbing).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.horizons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizons.is_empty()
    }
}

/// Shared bootstrap labels for a segment batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub y: Vec<f64>,
    /// Ratio at the next state, which also weights the bootstrap term.
    pub omega: Vec<f64>,
}

/// A reset-episode transition awaiting its n-step successor.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingStep {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub absorbing: bool,
}

impl PendingStep {
    fn into_segment(self, horizon_state: Vec<f64>, horizon: usize) -> NStepSegment {
        NStepSegment {
            state: self.state,
            action: self.action,
            next_state: self.next_state,
            horizon_state,
            horizon,
            absorbing: self.absorbing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetAgent {
    pub params: ResetParams,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub actor_opt: AdamState,
    pub ensemble: ClassifierEnsemble,
    pub segments: RingBuffer<NStepSegment>,
    pub examples: RingBuffer<Vec<f64>>,
    /// Transitions of the current reset episode still waiting for their
    /// n-step successor.
    pub pending: VecDeque<PendingStep>,
    pub skipped_updates: u64,
}

impl ResetAgent {
    pub fn new(state_dim: usize, action_dim: usize, params: ResetParams, seed: u64) -> Result<Self> {
        let ac = &params.actor_critic;
        let actor = Mlp::init(&MlpSpec::policy(state_dim, &ac.hidden, action_dim), seed)?;
        let ensemble = ClassifierEnsemble::new(
            state_dim,
            action_dim,
            &ac.hidden,
            params.ensemble_size,
            params.prior_scale,
            seed.wrapping_add(1000),
        )?;
        if params.n_step == 0 {
            return Err(Error::Config("n_step must be >= 1".into()));
        }
        Ok(Self {
            actor_target: actor.clone(),
            actor_opt: AdamState::new(&actor),
            actor,
            ensemble,
            segments: RingBuffer::new(params.segment_capacity),
            examples: RingBuffer::new(params.example_capacity),
            pending: VecDeque::new(),
            params,
            skipped_updates: 0,
        })
    }

    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.actor.predict_one(state, None)?;
        if explore {
            explore_noise(&mut a, self.params.actor_critic.noise_sigma, rng);
        }
        Ok(a)
    }

    /// Stores an initial-state example; only states `env` deems initial are admitted.
    pub fn add_initial_example(&mut self, env: &Env, state: &EnvState) -> Result<()> {
        if !env.is_initial(state) {
            return Err(Error::Precondition("initial-state example is not an initial state".into()));
        }
        self.examples.push(state.observation.clone());
        Ok(())
    }

    /// Records a reset-episode transition; emits the segment whose
    /// n-step successor just became known.
    pub fn observe(&mut self, state: &EnvState, action: &[f64], next: &EnvState) {
        self.pending.push_back(PendingStep {
            state: state.observation.clone(),
            action: action.to_vec(),
            next_state: next.observation.clone(),
            absorbing: state.irrecoverable,
        });
        if self.pending.len() == self.params.n_step {
            let step = self.pending.pop_front().expect("non-empty");
            self.segments
                .push(step.into_segment(next.observation.clone(), self.params.n_step));
        }
    }

    /// Flushes the episode tail with truncated horizons.
    pub fn end_episode(&mut self) {
        let Some(last) = self.pending.back().map(|t| t.next_state.clone()) else {
            return;
        };
        while let Some(step) = self.pending.pop_front() {
            let horizon = self.pending.len() + 1;
            self.segments.push(step.into_segment(last.clone(), horizon));
        }
    }

    /// Ratio of the ensemble-minimum target classifier at `(s, pi_target(s))`.
    fn bootstrap_ratio(&self, states: &Matrix) -> Result<Vec<f64>> {
        let actions = self.actor_target.predict(states, None)?;
        Ok(self
            .ensemble
            .min_value(states, &actions, true)?
            .into_iter()
            .map(clipped_ratio)
            .collect())
    }

    pub fn labels(&self, batch: &SegmentBatch) -> Result<Labels> {
        let gamma = self.params.actor_critic.gamma;
        let omega = self.bootstrap_ratio(&batch.next_states)?;
        let omega_n = self.bootstrap_ratio(&batch.horizon_states)?;
        let y = (0..batch.len())
            .map(|i| rce_label(gamma, omega[i], omega_n[i], batch.horizons[i]))
            .collect();
        Ok(Labels { y, omega })
    }

    /// Cross-entropy loss of member `i` and the gradient of its trainable part,
    /// with labels held fixed.
    pub fn member_gradients(
        &self,
        member: usize,
        examples: &Matrix,
        batch: &SegmentBatch,
        labels: &Labels,
    ) -> Result<(f64, Gradients)> {
        let gamma = self.params.actor_critic.gamma;
        let example_actions = self.actor.predict(examples, None)?;
        let states = vstack(examples, &batch.states)?;
        let actions = vstack(&example_actions, &batch.actions)?;
        let ne = examples.rows();
        let ns = batch.len();
        // Per-row target and weight: examples carry label 1 with weight
        // (1 - gamma) / ne, segments carry y with weight (1 + gamma w) / ns.
        let mut targets = vec![1.0; ne];
        targets.extend_from_slice(&labels.y);
        let mut weights = vec![(1.0 - gamma) / ne as f64; ne];
        weights.extend(labels.omega.iter().map(|w| (1.0 + gamma * w) / ns as f64));

        let m = self.ensemble.member(member)?;
        let (z_train, cache) = m.trainable.forward(&states, Some(&actions))?;
        let z_prior = m.prior.predict(&states, Some(&actions))?;
        let mut loss = 0.0;
        let mut dz = Matrix::zeros(ne + ns, 1);
        for r in 0..ne + ns {
            let z = z_train.get(r, 0) + self.ensemble.prior_scale * z_prior.get(r, 0);
            let y = targets[r];
            loss += weights[r] * (softplus(z) - y * z);
            dz.as_mut_slice()[r] = weights[r] * (sigmoid(z) - y);
        }
        let (grads, _) = m.trainable.backward(&cache, &dz)?;
        Ok((loss, grads))
    }

    /// One recursive-classification step on every member; returns the mean member loss.
    pub fn rce_update(&mut self, examples: &Matrix, batch: &SegmentBatch) -> Result<f64> {
        let labels = self.labels(batch)?;
        let lr = self.params.actor_critic.critic_lr;
        let tau = self.params.actor_critic.tau;
        let mut total = 0.0;
        for i in 0..self.ensemble.len() {
            let (loss, grads) = self.member_gradients(i, examples, batch, &labels)?;
            total += loss;
            if !loss.is_finite() {
                self.skipped_updates += 1;
                continue;
            }
            let m = &mut self.ensemble.members[i];
            if m.opt.step(&mut m.trainable, &grads, lr)? == StepOutcome::SkippedNonFinite {
                self.skipped_updates += 1;
            }
            soft_update(&mut m.target, &m.trainable, tau)?;
        }
        Ok(total / self.ensemble.len() as f64)
    }

    /// Mean ensemble-minimum classifier value under the actor, and the
    /// gradient of its negation (the subgradient flows through the argmin
    /// member). Values at the clip contribute no gradient.
    pub fn actor_gradients(&self, states: &Matrix) -> Result<(f64, Gradients)> {
        let ens = &self.ensemble;
        actor_ascent_gradients(&self.actor, states, |actions| {
            let rows = states.rows();
            let mut best = vec![(f64::INFINITY, 0usize, 0.0f64); rows];
            let mut caches = Vec::with_capacity(ens.len());
            for (i, m) in ens.members.iter().enumerate() {
                let (zt, ct) = m.trainable.forward(states, Some(actions))?;
                let (zp, cp) = m.prior.forward(states, Some(actions))?;
                for (r, b) in best.iter_mut().enumerate() {
                    let z = zt.get(r, 0) + ens.prior_scale * zp.get(r, 0);
                    let c = sigmoid(z);
                    if c < b.0 {
                        *b = (c, i, z);
                    }
                }
                caches.push((ct, cp));
            }
            let mut d_action = Matrix::zeros(rows, actions.cols());
            for (i, m) in ens.members.iter().enumerate() {
                if !best.iter().any(|b| b.1 == i) {
                    continue;
                }
                let mut g = Matrix::zeros(rows, 1);
                for (r, b) in best.iter().enumerate() {
                    if b.1 == i && b.0 < C_MAX {
                        g.as_mut_slice()[r] = b.0 * (1.0 - b.0);
                    }
                }
                let dt = m.trainable.input_gradients(&caches[i].0, &g)?;
                let dp = m.prior.input_gradients(&caches[i].1, &g)?;
                let (dt, dp) = (dt.action.expect("action input"), dp.action.expect("action input"));
                for ((d, t), p) in d_action.as_mut_slice().iter_mut().zip(dt.as_slice()).zip(dp.as_slice()) {
                    *d += t + ens.prior_scale * p;
                }
            }
            Ok((best.iter().map(|b| b.0.min(C_MAX)).collect(), d_action))
        })
    }

    /// Actor step on the batch's recoverable states; the action has no
    /// effect in absorbing ones. Returns `None` when none remain.
    pub fn reset_actor_update(&mut self, batch: &SegmentBatch) -> Result<Option<f64>> {
        let rows: Vec<&[f64]> = (0..batch.len())
            .filter(|&r| !batch.absorbing[r])
            .map(|r| batch.states.row(r))
            .collect();
        if rows.is_empty() {
            return Ok(None);
        }
        let (objective, grads) = self.actor_gradients(&Matrix::from_rows(&rows)?)?;
        let ac = &self.params.actor_critic;
        if self.actor_opt.step(&mut self.actor, &grads, ac.actor_lr)? == StepOutcome::SkippedNonFinite {
            self.skipped_updates += 1;
        }
        soft_update(&mut self.actor_target, &self.actor, ac.tau)?;
        Ok(Some(objective))
    }

    /// Samples both buffers and performs one classifier and one actor step.
    /// Skipped (returns `None`) while either buffer is empty.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<(f64, Option<f64>)>> {
        if self.examples.is_empty() || self.segments.is_empty() {
            return Ok(None);
        }
        let ex: Vec<&[f64]> = self
            .examples
            .sample(rng, self.params.example_batch)?
            .into_iter()
            .map(|v| v.as_slice())
            .collect();
        let examples = Matrix::from_rows(&ex)?;
        let batch = SegmentBatch::from_segments(&self.segments.sample(rng, self.params.segment_batch)?)?;
        let loss = self.rce_update(&examples, &batch)?;
        let obj = self.reset_actor_update(&batch)?;
        Ok(Some((loss, obj)))
    }
}

fn vstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension {
            what: "vstack columns",
            expected: a.cols(),
            got: b.cols(),
        });
    }
    let mut data = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), data)
}

/// A finite MDP for checking learned success probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// `transitions[s][a]` lists `(next_state, probability)`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub initial: Vec<bool>,
}

/// Fixed point of `p(s, a) = (1 - gamma) g(s) + gamma E[p(s', policy(s'))]`
/// by value iteration to `1e-10`. `policy[s]` is the action taken in `s`.
pub fn discounted_success_oracle(mdp: &TabularMdp, policy: &[usize], gamma: f64) -> Result<Vec<Vec<f64>>> {
    let n = mdp.transitions.len();
    if mdp.initial.len() != n || policy.len() != n {
        return Err(Error::Precondition("policy and indicator must cover every state".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Precondition(format!("discount {gamma} must lie in [0, 1)")));
    }
    let mut p: Vec<Vec<f64>> = mdp.transitions.iter().map(|acts| vec![0.0; acts.len()]).collect();
    for _ in 0..1_000_000 {
        let v: Vec<f64> = (0..n).map(|s| p[s][policy[s]]).collect();
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let g = if mdp.initial[s] { 1.0 } else { 0.0 };
            for a in 0..p[s].len() {
                let next: f64 = mdp.transitions[s][a].iter().map(|&(s2, pr)| pr * v[s2]).sum();
                let new = (1.0 - gamma) * g + gamma * next;
                delta = delta.max((new - p[s][a]).abs());
                p[s][a] = new;
            }
        }
        if delta < 1e-10 * (1.0 - gamma) {
            return Ok(p);
        }
    }
    Err(Error::Precondition("value iteration did not converge".into()))
}
