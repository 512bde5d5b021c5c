//! A scripted joint-space policy on planar-peg against an upper bound on the
//! achievable return.

use autoreset::envs::{Env, EnvState, PegTask, PlanarPeg};

/// Per-step reward is `1 - d/D`, and the tip distance can shrink by at most
/// `v_max * dt` per step. Under `|a_i| <= 1` the fastest tip speed is attained
/// at the box corner `(1, 1)`: `sqrt(l1^2 + 4 l2^2 + 4 l1 l2 cos th2)`, or `l1`
/// at `(1, -1)`. The elbow moves at most `dt` per step, so after `k` steps
/// `|th2| >= |th2_0| - k dt`, which bounds `cos th2` from above.
fn return_upper_bound(start_elbow: f64, goal_distance: f64, dt: f64, steps: usize) -> f64 {
    let (l1, l2) = (PlanarPeg::LINK1, PlanarPeg::LINK2);
    let mut moved = 0.0;
    let mut total = 0.0;
    for k in 1..=steps {
        let elbow = (start_elbow.abs() - k as f64 * dt).max(0.0);
        let v = (l1 * l1 + 4.0 * l2 * l2 + 4.0 * l1 * l2 * elbow.cos()).sqrt().max(l1);
        moved += v * dt;
        total += (moved / goal_distance).min(1.0);
    }
    total
}

fn scripted_return(task: PegTask) -> (f64, f64) {
    let peg = PlanarPeg::new(task);
    let goal = match task {
        PegTask::Insert => PlanarPeg::POSE_IN,
        PegTask::Remove => PlanarPeg::POSE_OUT,
    };
    let env = Env::PlanarPeg(peg.clone());
    let spec = env.spec().clone();
    let [t1, t2] = peg.initial_pose;
    let mut state = EnvState {
        observation: vec![t1.cos(), t1.sin(), t2.cos(), t2.sin()],
        irrecoverable: false,
    };
    let mut ret = 0.0;
    for _ in 0..spec.max_forward_steps {
        let o = &state.observation;
        let theta = [o[1].atan2(o[0]), o[3].atan2(o[2])];
        let action: Vec<f64> = (0..2).map(|i| ((goal[i] - theta[i]) / spec.dt).clamp(-1.0, 1.0)).collect();
        let step = env.step(&state, &action).unwrap();
        ret += step.reward;
        state = step.next_state;
    }
    let d = {
        let (a, b) = (peg.initial_tip, peg.goal_tip);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    };
    (ret, return_upper_bound(peg.initial_pose[1], d, spec.dt, spec.max_forward_steps))
}

#[test]
fn scripted_policy_is_within_five_percent_of_best_return() {
    for task in [PegTask::Insert, PegTask::Remove] {
        let (ret, best) = scripted_return(task);
        assert!(ret <= best + 1e-9, "{task:?}: {ret} exceeds the bound {best}");
        assert!(ret >= 0.95 * best, "{task:?}: {ret} vs best {best}");
    }
}

#[test]
fn scripted_policy_ends_at_the_goal() {
    let (ret, _) = scripted_return(PegTask::Insert);
    // 24 steps to cover the larger joint gap, then reward 1 for the remaining 76.
    assert!(ret > 76.0);
}
