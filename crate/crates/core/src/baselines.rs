//! Reward-based reset learners used for comparison: an ensemble of reset
//! Q-functions trained on a hand-designed reset reward, triggering when the
//! ensemble minimum falls below a threshold.

use rand::Rng;

use crate::buffer::{RingBuffer, Transition};
use crate::envs::RewardMode;
use crate::forward::{actor_ascent_gradients, explore_noise, mse_gradients, ActorCriticParams, TransitionBatch};
use crate::nn::{soft_update, AdamState, Gradients, Matrix, Mlp, MlpSpec, StepOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LntParams {
    pub actor_critic: ActorCriticParams,
    pub ensemble_size: usize,
    pub mode: RewardMode,
    pub q_thresh: f64,
    pub batch: usize,
    pub capacity: usize,
}

impl LntParams {
    /// Threshold paired with each reward flavour by default.
    pub fn default_q_thresh(mode: RewardMode) -> f64 {
        match mode {
            RewardMode::Shaped => 20.0,
            RewardMode::Sparse => 0.1,
        }
    }

    pub fn new(mode: RewardMode) -> Self {
        Self {
            actor_critic: ActorCriticParams::default(),
            ensemble_size: 20,
            mode,
            q_thresh: Self::default_q_thresh(mode),
            batch: 128,
            capacity: 500_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QMember {
    pub online: Mlp,
    pub target: Mlp,
    pub opt: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LntResetAgent {
    pub params: LntParams,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub actor_opt: AdamState,
    pub critics: Vec<QMember>,
    pub transitions: RingBuffer<Transition>,
    pub skipped_updates: u64,
}

impl LntResetAgent {
    pub fn new(state_dim: usize, action_dim: usize, params: LntParams, seed: u64) -> Result<Self> {
        if params.ensemble_size == 0 {
            return Err(Error::Config("ensemble size must be >= 1".into()));
        }
        let ac = &params.actor_critic;
        let actor = Mlp::init(&MlpSpec::policy(state_dim, &ac.hidden, action_dim), seed)?;
        let spec = MlpSpec::state_action(state_dim, action_dim, &ac.hidden);
        let critics = (0..params.ensemble_size as u64)
            .map(|i| {
                let online = Mlp::init(&spec, seed.wrapping_add(1 + i))?;
                Ok(QMember {
                    target: online.clone(),
                    opt: AdamState::new(&online),
                    online,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            actor_target: actor.clone(),
            actor_opt: AdamState::new(&actor),
            actor,
            critics,
            transitions: RingBuffer::new(params.capacity),
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

    pub fn q_values(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let s = Matrix::row_vector(state);
        let a = Matrix::row_vector(action);
        self.critics
            .iter()
            .map(|m| Ok(m.online.predict(&s, Some(&a))?.get(0, 0)))
            .collect()
    }

    pub fn min_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.q_values(state, action)?.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Strictly `min_i Q_i(s, a) < q_thresh`.
    pub fn trigger(&self, state: &[f64], action: &[f64], q_thresh: f64) -> Result<bool> {
        Ok(self.min_q(state, action)? < q_thresh)
    }

    /// Each member regresses on its own target network's bootstrap.
    pub fn critic_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let ac = &self.params.actor_critic;
        let next_actions = self.actor_target.predict(&batch.next_states, None)?;
        let mut total = 0.0;
        for m in &mut self.critics {
            let q_next = m.target.predict(&batch.next_states, Some(&next_actions))?;
            let targets: Vec<f64> = (0..batch.len())
                .map(|i| {
                    let boot = if batch.terminal[i] { 0.0 } else { q_next.get(i, 0) };
                    batch.rewards[i] + ac.gamma * boot
                })
                .collect();
            let (loss, grads) = mse_gradients(&m.online, &batch.states, &batch.actions, &targets)?;
            total += loss;
            if !loss.is_finite() || m.opt.step(&mut m.online, &grads, ac.critic_lr)? == StepOutcome::SkippedNonFinite {
                self.skipped_updates += 1;
                continue;
            }
            soft_update(&mut m.target, &m.online, ac.tau)?;
        }
        Ok(total / self.critics.len() as f64)
    }

    /// Mean ensemble-minimum Q under the actor and the gradient of its negation.
    pub fn actor_gradients(&self, states: &Matrix) -> Result<(f64, Gradients)> {
        let critics = &self.critics;
        actor_ascent_gradients(&self.actor, states, |actions| {
            let rows = states.rows();
            let mut best = vec![(f64::INFINITY, 0usize); rows];
            let mut caches = Vec::with_capacity(critics.len());
            for (i, m) in critics.iter().enumerate() {
                let (q, cache) = m.online.forward(states, Some(actions))?;
                for (r, b) in best.iter_mut().enumerate() {
                    if q.get(r, 0) < b.0 {
                        *b = (q.get(r, 0), i);
                    }
                }
                caches.push(cache);
            }
            let mut d_action = Matrix::zeros(rows, actions.cols());
            for (i, m) in critics.iter().enumerate() {
                if !best.iter().any(|b| b.1 == i) {
                    continue;
                }
                let mut g = Matrix::zeros(rows, 1);
                for (r, b) in best.iter().enumerate() {
                    if b.1 == i {
                        g.as_mut_slice()[r] = 1.0;
                    }
                }
                let d = m.online.input_gradients(&caches[i], &g)?.action.expect("action input");
                for (acc, x) in d_action.as_mut_slice().iter_mut().zip(d.as_slice()) {
                    *acc += x;
                }
            }
            Ok((best.iter().map(|b| b.0).collect(), d_action))
        })
    }

    pub fn actor_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let (objective, grads) = self.actor_gradients(&batch.states)?;
        let ac = &self.params.actor_critic;
        if self.actor_opt.step(&mut self.actor, &grads, ac.actor_lr)? == StepOutcome::SkippedNonFinite {
            self.skipped_updates += 1;
        }
        soft_update(&mut self.actor_target, &self.actor, ac.tau)?;
        Ok(objective)
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<(f64, f64)>> {
        if self.transitions.is_empty() {
            return Ok(None);
        }
        let batch = TransitionBatch::from_transitions(&self.transitions.sample(rng, self.params.batch)?)?;
        let loss = self.critic_update(&batch)?;
        let obj = self.actor_update(&batch)?;
        Ok(Some((loss, obj)))
    }
}
