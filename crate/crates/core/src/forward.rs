//! Task learner: a deterministic-policy actor-critic on environment reward.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::buffer::Transition;
use crate::nn::{soft_update, AdamState, Gradients, Matrix, Mlp, MlpSpec, StepOutcome};
use crate::{Error, Result};

/// Hyperparameters shared by the actor-critic learners.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticParams {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub noise_sigma: f64,
}

impl Default for ActorCriticParams {
    fn default() -> Self {
        Self {
            hidden: vec![400, 300],
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            noise_sigma: 0.1,
        }
    }
}

/// Column-stacked view of a sampled batch of transitions.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminal: Vec<bool>,
}

impl TransitionBatch {
    pub fn from_transitions(batch: &[&Transition]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let actions: Vec<&[f64]> = batch.iter().map(|t| t.action.as_slice()).collect();
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        Ok(Self {
            states: Matrix::from_rows(&states)?,
            actions: Matrix::from_rows(&actions)?,
            rewards: batch.iter().map(|t| t.reward).collect(),
            next_states: Matrix::from_rows(&next)?,
            terminal: batch.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Adds `N(0, sigma)` noise per component and clips to `[-1, 1]`.
pub fn explore_noise<R: Rng + ?Sized>(action: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
        for a in action.iter_mut() {
            *a += normal.sample(rng);
        }
    }
    for a in action.iter_mut() {
        *a = a.clamp(-1.0, 1.0);
    }
}

/// Gradient of `-mean_b f(s_b, actor(s_b))` with respect to the actor,
/// given `df/da` per row from `score`. Returns the objective and gradients.
pub(crate) fn actor_ascent_gradients<F>(actor: &Mlp, states: &Matrix, score: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&Matrix) -> Result<(Vec<f64>, Matrix)>,
{
    let (actions, cache) = actor.forward(states, None)?;
    let (values, mut d_action) = score(&actions)?;
    let n = states.rows() as f64;
    let objective = values.iter().sum::<f64>() / n;
    for g in d_action.as_mut_slice() {
        *g = -*g / n;
    }
    let (grads, _) = actor.backward(&cache, &d_action)?;
    Ok((objective, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardAgent {
    pub params: ActorCriticParams,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    /// Optimizer steps skipped because of non-finite gradients.
    pub skipped_updates: u64,
}

impl ForwardAgent {
    pub fn new(state_dim: usize, action_dim: usize, params: ActorCriticParams, seed: u64) -> Result<Self> {
        let actor = Mlp::init(&MlpSpec::policy(state_dim, &params.hidden, action_dim), seed)?;
        let critic = Mlp::init(
            &MlpSpec::state_action(state_dim, action_dim, &params.hidden),
            seed.wrapping_add(1),
        )?;
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
            params,
            skipped_updates: 0,
        })
    }

    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.actor.predict_one(state, None)?;
        if explore {
            explore_noise(&mut a, self.params.noise_sigma, rng);
        }
        Ok(a)
    }

    /// `r + gamma * (1 - terminal) * Q'(s', pi'(s'))`, from target networks only.
    pub fn td_targets(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        let next_actions = self.actor_target.predict(&batch.next_states, None)?;
        let q_next = self.critic_target.predict(&batch.next_states, Some(&next_actions))?;
        Ok((0..batch.len())
            .map(|i| {
                let boot = if batch.terminal[i] { 0.0 } else { q_next.get(i, 0) };
                batch.rewards[i] + self.params.gamma * boot
            })
            .collect())
    }

    /// Mean squared TD error and its parameter gradient.
    pub fn critic_gradients(&self, batch: &TransitionBatch) -> Result<(f64, Gradients)> {
        let targets = self.td_targets(batch)?;
        mse_gradients(&self.critic, &batch.states, &batch.actions, &targets)
    }

    /// One critic step followed by Polyak updates of both targets.
    pub fn critic_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let (loss, grads) = self.critic_gradients(batch)?;
        if !loss.is_finite() {
            self.skipped_updates += 1;
            return Ok(loss);
        }
        if self.critic_opt.step(&mut self.critic, &grads, self.params.critic_lr)? == StepOutcome::SkippedNonFinite {
            self.skipped_updates += 1;
        }
        soft_update(&mut self.critic_target, &self.critic, self.params.tau)?;
        soft_update(&mut self.actor_target, &self.actor, self.params.tau)?;
        Ok(loss)
    }

    /// Mean `Q(s, pi(s))` and the gradient of its negation.
    pub fn actor_gradients(&self, states: &Matrix) -> Result<(f64, Gradients)> {
        let critic = &self.critic;
        actor_ascent_gradients(&self.actor, states, |actions| {
            let (q, cache) = critic.forward(states, Some(actions))?;
            let ones = Matrix::from_vec(q.rows(), 1, vec![1.0; q.rows()])?;
            let dq = critic.input_gradients(&cache, &ones)?;
            Ok((q.into_vec(), dq.action.expect("critic takes actions")))
        })
    }

    pub fn actor_update(&mut self, batch: &TransitionBatch) -> Result<f64> {
        let (objective, grads) = self.actor_gradients(&batch.states)?;
        if self.actor_opt.step(&mut self.actor, &grads, self.params.actor_lr)? == StepOutcome::SkippedNonFinite {
            self.skipped_updates += 1;
        }
        Ok(objective)
    }
}

/// `mean (net(s, a) - y)^2` and its parameter gradient.
pub(crate) fn mse_gradients(net: &Mlp, states: &Matrix, actions: &Matrix, targets: &[f64]) -> Result<(f64, Gradients)> {
    let (q, cache) = net.forward(states, Some(actions))?;
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut d = Matrix::zeros(targets.len(), 1);
    for (i, &y) in targets.iter().enumerate() {
        let e = q.get(i, 0) - y;
        loss += e * e;
        d.as_mut_slice()[i] = 2.0 * e / n;
    }
    let (grads, _) = net.backward(&cache, &d)?;
    Ok((loss / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ActorCriticParams {
        ActorCriticParams {
            hidden: vec![16, 16],
            ..Default::default()
        }
    }

    fn transition(s: f64, a: f64, r: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![s, -s],
            action: vec![a],
            reward: r,
            next_state: vec![s + 0.1, 0.3],
            terminal,
        }
    }

    #[test]
    fn greedy_action_is_deterministic() {
        let agent = ForwardAgent::new(2, 1, small(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = agent.select_action(&[0.4, 0.1], false, &mut rng).unwrap();
        let b = agent.select_action(&[0.4, 0.1], false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_actor_gives_zero_action() {
        let mut agent = ForwardAgent::new(2, 2, small(), 3).unwrap();
        agent.actor.set_flat(&vec![0.0; agent.actor.param_count()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(agent.select_action(&[1.0, 2.0], false, &mut rng).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn exploratory_actions_stay_bounded() {
        let mut agent = ForwardAgent::new(2, 2, small(), 3).unwrap();
        agent.params.noise_sigma = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut saw_clip = false;
        for i in 0..100_000 {
            let s = [(i as f64 * 0.01).sin() * 3.0, 1.0];
            let a = agent.select_action(&s, true, &mut rng).unwrap();
            assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
            saw_clip |= a.iter().any(|x| x.abs() == 1.0);
        }
        assert!(saw_clip);
    }

    #[test]
    fn terminal_or_zero_discount_targets_equal_reward() {
        let mut agent = ForwardAgent::new(2, 1, small(), 1).unwrap();
        let ts = [transition(0.2, 0.5, 0.7, true), transition(-0.3, 0.1, 0.25, false)];
        let batch = TransitionBatch::from_transitions(&[&ts[0], &ts[1]]).unwrap();
        let y = agent.td_targets(&batch).unwrap();
        assert_eq!(y[0], 0.7);
        assert_ne!(y[1], 0.25);
        agent.params.gamma = 0.0;
        assert_eq!(agent.td_targets(&batch).unwrap(), vec![0.7, 0.25]);
    }

    #[test]
    fn duplicated_batch_matches_single_transition_gradient() {
        let agent = ForwardAgent::new(2, 1, small(), 5).unwrap();
        let t = transition(0.4, -0.2, 0.6, false);
        let one = TransitionBatch::from_transitions(&[&t]).unwrap();
        let many = TransitionBatch::from_transitions(&vec![&t; 32]).unwrap();
        let (l1, g1) = agent.critic_gradients(&one).unwrap();
        let (l32, g32) = agent.critic_gradients(&many).unwrap();
        assert!((l1 - l32).abs() <= 1e-12 * l1.abs().max(1.0));
        for (a, b) in g1.flat().iter().zip(g32.flat()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn targets_are_computed_before_the_update() {
        let mut agent = ForwardAgent::new(2, 1, small(), 5).unwrap();
        let t = transition(0.4, -0.2, 0.6, false);
        let batch = TransitionBatch::from_transitions(&[&t]).unwrap();
        let y = agent.td_targets(&batch).unwrap()[0];
        let q = agent.critic.predict_one(&t.state, Some(&t.action)).unwrap()[0];
        let loss = agent.critic_update(&batch).unwrap();
        assert_eq!(loss, (q - y) * (q - y));
    }

    #[test]
    fn zero_critic_gives_zero_actor_gradient() {
        let mut agent = ForwardAgent::new(2, 1, small(), 5).unwrap();
        agent.critic.set_flat(&vec![0.0; agent.critic.param_count()]).unwrap();
        let states = Matrix::from_rows(&[[0.1, 0.2], [0.5, -0.4]]).unwrap();
        let (obj, g) = agent.actor_gradients(&states).unwrap();
        assert_eq!(obj, 0.0);
        assert!(g.flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut agent = ForwardAgent::new(2, 1, small(), 5).unwrap();
        agent.params.actor_lr = 0.0;
        agent.params.critic_lr = 0.0;
        agent.params.tau = 0.0;
        let before = agent.clone();
        let ts = [transition(0.1, 0.3, 0.2, false), transition(0.2, -0.9, 0.9, true)];
        let batch = TransitionBatch::from_transitions(&[&ts[0], &ts[1]]).unwrap();
        agent.critic_update(&batch).unwrap();
        agent.actor_update(&batch).unwrap();
        assert_eq!(agent.actor, before.actor);
        assert_eq!(agent.critic, before.critic);
        assert_eq!(agent.actor_target, before.actor_target);
    }

    #[test]
    fn actor_climbs_a_quadratic_critic() {
        // Q(a) = -(a - 0.3)^2 with a single-layer tanh policy.
        let spec = MlpSpec::policy(1, &[], 1);
        let mut actor = Mlp::init(&spec, 4).unwrap();
        let mut opt = AdamState::new(&actor);
        let states = Matrix::from_rows(&[[1.0], [-0.5], [0.25]]).unwrap();
        let start = actor.predict(&states, None).unwrap();
        for _ in 0..3000 {
            let (_, g) = actor_ascent_gradients(&actor, &states, |a| {
                let vals = a.as_slice().iter().map(|x| -(x - 0.3) * (x - 0.3)).collect();
                let d = a.as_slice().iter().map(|x| -2.0 * (x - 0.3)).collect();
                Ok((vals, Matrix::from_vec(a.rows(), 1, d)?))
            })
            .unwrap();
            opt.step(&mut actor, &g, 1e-2).unwrap();
        }
        let end = actor.predict(&states, None).unwrap();
        // An affine-then-tanh policy cannot map all three states to 0.3
        // unless the weight vanishes; the bias then carries atanh(0.3).
        for (s, e) in start.as_slice().iter().zip(end.as_slice()) {
            assert!((e - 0.3).abs() < (s - 0.3).abs());
            assert!((e - 0.3).abs() < 1e-3, "{e}");
        }
    }

    #[test]
    fn bandit_critic_converges_to_reward() {
        let mut agent = ForwardAgent::new(2, 1, small(), 11).unwrap();
        let ts = [
            transition(0.1, 0.3, 0.2, true),
            transition(-0.6, -0.9, 0.9, true),
            transition(0.8, 0.0, 0.5, true),
        ];
        let batch = TransitionBatch::from_transitions(&[&ts[0], &ts[1], &ts[2]]).unwrap();
        for _ in 0..10_000 {
            agent.critic_update(&batch).unwrap();
        }
        for t in &ts {
            let q = agent.critic.predict_one(&t.state, Some(&t.action)).unwrap()[0];
            assert!((q - t.reward).abs() <= 1e-2, "{q} vs {}", t.reward);
        }
    }
}
