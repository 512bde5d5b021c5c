//! End-to-end acceptance criteria A1-A8. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=A2,A8` restricts the run to the listed criteria.
//! Independent training runs are spread over the available cores.

use std::collections::BTreeMap;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use autoreset::buffer::NStepSegment;
use autoreset::envs::CLIFF_X;
use autoreset::forward::ActorCriticParams;
use autoreset::nn::{Matrix, Mlp, MlpSpec};
use autoreset::orchestrator::{BaselineMode, EpisodeKind, RunConfig, RunMetrics, Termination, Trainer};
use autoreset::reset::{
    discounted_success_oracle, rce_label, ResetAgent, ResetParams, SegmentBatch, TabularMdp,
};
use autoreset_cli::sink;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ─── shared training runs ──────────────────────────────────────────────────

/// Network and batch sizes that fit the single-core time budgets.
fn base(env: &str, task: &str, steps: u64, seed: u64) -> RunConfig {
    RunConfig {
        env: env.into(),
        task: task.into(),
        total_steps: steps,
        hidden: vec![32, 32],
        forward_batch: 64,
        example_batch: 32,
        segment_batch: 32,
        lnt_batch: 32,
        tau: 0.01,
        eval_interval: steps / 20,
        seed,
        ..Default::default()
    }
}

fn peg(task: &str, steps: u64, seed: u64) -> RunConfig {
    base("planar-peg", task, steps, seed)
}

fn cliff(seed: u64, trigger: bool) -> RunConfig {
    RunConfig {
        warmup_steps: 20_000,
        warmup_updates: true,
        trigger_enabled: trigger,
        ..base("cliff-runner", "", 150_000, seed)
    }
}

fn train(cfg: &RunConfig) -> RunMetrics {
    let mut t = Trainer::new(cfg).expect("valid config");
    while !t.is_done() {
        t.run_cycle().expect("training cycle");
    }
    t.metrics
}

/// Runs every configuration once, concurrently where cores allow.
fn run_all(jobs: Vec<(String, RunConfig)>) -> BTreeMap<String, RunMetrics> {
    let next = AtomicUsize::new(0);
    let out = Mutex::new(BTreeMap::new());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((key, cfg)) = jobs.get(i) else { break };
                let t0 = Instant::now();
                let m = train(cfg);
                eprintln!("  run {key}: {:.0} s", t0.elapsed().as_secs_f64());
                out.lock().unwrap().insert(key.clone(), m);
            });
        }
    });
    out.into_inner().unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Mean eval return over the first and last quarter of the eval log.
fn eval_quartiles(m: &RunMetrics) -> (f64, f64) {
    let r: Vec<f64> = m.eval_returns.iter().map(|e| e.1).collect();
    let q = (r.len() / 4).max(1);
    (mean(&r[..q]), mean(&r[r.len() - q..]))
}

// ─── A1 ────────────────────────────────────────────────────────────────────

fn a1() -> Verdict {
    const H: f64 = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(610);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 100 {
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=12)).collect();
        let sd = rng.random_range(1..=6);
        let od = rng.random_range(1..=3);
        let spec = if rng.random_bool(0.5) {
            MlpSpec::policy(sd, &hidden, od)
        } else {
            MlpSpec::state_action(sd, od, &hidden)
        };
        let mut net = Mlp::init(&spec, rng.random()).unwrap();
        let flat: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-0.6..0.6)).collect();
        net.set_flat(&flat).unwrap();
        let rows = rng.random_range(1..=3);
        let mut draw = |r: usize, c: usize, s: f64| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect()).unwrap()
        };
        let x = draw(rows, spec.input_dim, 1.5);
        let a = spec.action_dim().map(|d| draw(rows, d, 1.0));
        let g = draw(rows, spec.output_dim, 1.0);
        // A difference straddling a ReLU kink measures the kink, not the
        // gradient; such draws are replaced.
        if near_kink(&net, &x, a.as_ref(), 1e-3) {
            continue;
        }
        let loss = |n: &Mlp, x: &Matrix, a: Option<&Matrix>| -> f64 {
            n.predict(x, a).unwrap().as_slice().iter().zip(g.as_slice()).map(|(o, w)| o * w).sum()
        };
        let (_, cache) = net.forward(&x, a.as_ref()).unwrap();
        let (grads, inputs) = net.backward(&cache, &g).unwrap();
        let analytic = grads.flat();
        let mut case_worst: f64 = 0.0;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += H;
            net.set_flat(&p).unwrap();
            let up = loss(&net, &x, a.as_ref());
            p[i] -= 2.0 * H;
            net.set_flat(&p).unwrap();
            let down = loss(&net, &x, a.as_ref());
            case_worst = case_worst.max(rel(analytic[i], (up - down) / (2.0 * H)));
        }
        net.set_flat(&flat).unwrap();
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += H;
            let up = loss(&net, &xp, a.as_ref());
            xp.as_mut_slice()[i] -= 2.0 * H;
            let down = loss(&net, &xp, a.as_ref());
            case_worst = case_worst.max(rel(inputs.state.as_slice()[i], (up - down) / (2.0 * H)));
        }
        if let (Some(a), Some(ag)) = (a.as_ref(), inputs.action.as_ref()) {
            for i in 0..a.as_slice().len() {
                let mut ap = a.clone();
                ap.as_mut_slice()[i] += H;
                let up = loss(&net, &x, Some(&ap));
                ap.as_mut_slice()[i] -= 2.0 * H;
                let down = loss(&net, &x, Some(&ap));
                case_worst = case_worst.max(rel(ag.as_slice()[i], (up - down) / (2.0 * H)));
            }
        }
        worst = worst.max(case_worst);
        cases += 1;
    }
    verdict(worst < 1e-4, format!("{cases} cases, max relative error {worst:.2e} (limit 1e-4)"))
}

/// Some hidden pre-activation lies within `eps` of zero.
fn near_kink(net: &Mlp, x: &Matrix, a: Option<&Matrix>, eps: f64) -> bool {
    let inject = net.spec().action_inject.is_some();
    let n = net.layers().len();
    for r in 0..x.rows() {
        let mut h: Vec<f64> = x.row(r).to_vec();
        for (idx, layer) in net.layers().iter().enumerate() {
            if idx == 1 && inject {
                h.extend_from_slice(a.unwrap().row(r));
            }
            let mut z = layer.bias.clone();
            for (i, hi) in h.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += hi * layer.weights[i * layer.fan_out + j];
                }
            }
            if idx + 1 < n {
                if z.iter().any(|v| v.abs() < eps) {
                    return true;
                }
                h = z.iter().map(|v| v.max(0.0)).collect();
            }
        }
    }
    false
}

// ─── A2 ────────────────────────────────────────────────────────────────────

const CHAIN: usize = 6;

fn one_hot(s: usize) -> Vec<f64> {
    let mut v = vec![0.0; CHAIN];
    v[s] = 1.0;
    v
}

fn a2() -> Verdict {
    // The example term only labels (s*, pi(s*)), so the away action at state 0
    // settles at gamma rather than 1. Keep that gap (1 - gamma) inside tolerance.
    let gamma = 0.97;
    // Action 0 moves toward state 0, action 1 away; state 0 is initial and absorbing.
    let step = |s: usize, a: usize| if s == 0 { 0 } else if a == 0 { s - 1 } else { (s + 1).min(CHAIN - 1) };
    let mdp = TabularMdp {
        transitions: (0..CHAIN).map(|s| (0..2).map(|a| vec![(step(s, a), 1.0)]).collect()).collect(),
        initial: (0..CHAIN).map(|s| s == 0).collect(),
    };
    let oracle = discounted_success_oracle(&mdp, &[0; CHAIN], gamma).unwrap();

    let params = ResetParams {
        actor_critic: ActorCriticParams {
            hidden: vec![32, 32],
            gamma,
            ..Default::default()
        },
        n_step: 1,
        example_batch: 64,
        segment_batch: 64,
        ..Default::default()
    };
    let mut agent = ResetAgent::new(CHAIN, 1, params, 11).unwrap();
    // Frozen policy: a constant action toward state 0.
    for net in [&mut agent.actor, &mut agent.actor_target] {
        let last = net.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias[0] = -3.0;
    }
    let toward = agent.actor.predict_one(&one_hot(3), None).unwrap()[0];
    let actions = [toward, -toward];
    let segments: Vec<NStepSegment> = (0..CHAIN)
        .flat_map(|s| {
            (0..2).map(move |a| NStepSegment {
                state: one_hot(s),
                action: vec![actions[a]],
                next_state: one_hot(step(s, a)),
                horizon_state: one_hot(step(s, a)),
                horizon: 1,
                absorbing: false,
            })
        })
        .collect();
    let examples = Matrix::from_rows(&vec![one_hot(0); 64]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    let errors = |agent: &ResetAgent| -> Vec<f64> {
        (0..CHAIN)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| (agent.ensemble.success_probability(&one_hot(s), &[actions[a]]).unwrap().mean - oracle[s][a]).abs())
            .collect()
    };
    let max_err = |agent: &ResetAgent| errors(agent).into_iter().fold(0.0, f64::max);
    let (mut updates, mut err) = (0, f64::INFINITY);
    while updates < 50_000 {
        let batch: Vec<&NStepSegment> = (0..64).map(|_| &segments[rng.random_range(0..segments.len())]).collect();
        agent.rce_update(&examples, &SegmentBatch::from_segments(&batch).unwrap()).unwrap();
        updates += 1;
        if updates % 1000 == 0 {
            err = max_err(&agent);
            if err <= 0.05 && updates >= 5000 {
                break;
            }
        }
    }
    let rest = errors(&agent).into_iter().skip(2).fold(0.0, f64::max);
    verdict(
        err <= 0.05,
        format!(
            "max |ratio - oracle| {err:.4} over 12 state-action pairs after {updates} updates (gamma {gamma}, n 1); \
             {rest:.4} excluding state 0"
        ),
    )
}

// ─── A3 / A5 ───────────────────────────────────────────────────────────────

fn cliff_runs() -> BTreeMap<String, RunMetrics> {
    let mut jobs = Vec::new();
    for s in SEEDS {
        jobs.push((format!("cliff-on-{s}"), cliff(s, true)));
        jobs.push((format!("cliff-off-{s}"), cliff(s, false)));
    }
    run_all(jobs)
}

fn a3(runs: &BTreeMap<String, RunMetrics>) -> Verdict {
    let falls = |k: &str| -> Vec<u64> { SEEDS.iter().map(|s| runs[&format!("cliff-{k}-{s}")].irrecoverable_entries).collect() };
    let (on, off) = (falls("on"), falls("off"));
    let (on_sum, off_sum): (u64, u64) = (on.iter().sum(), off.iter().sum());
    let pass_a = off_sum > 0 && on_sum as f64 <= 0.25 * off_sum as f64;
    let q: Vec<(f64, f64)> = SEEDS.iter().map(|s| eval_quartiles(&runs[&format!("cliff-on-{s}")])).collect();
    let q1 = mean(&q.iter().map(|x| x.0).collect::<Vec<_>>());
    let q4 = mean(&q.iter().map(|x| x.1).collect::<Vec<_>>());
    let pass_b = q4 >= 2.0 * q1;
    verdict(
        pass_a && pass_b,
        format!(
            "(a) falls with trigger {on_sum} {on:?} vs without {off_sum} {off:?}: ratio {:.2} (limit 0.25) {}; \
             (b) eval first quarter {q1:.2}, last quarter {q4:.2} (need 2x) {}",
            on_sum as f64 / off_sum.max(1) as f64,
            if pass_a { "ok" } else { "FAIL" },
            if pass_b { "ok" } else { "FAIL" },
        ),
    )
}

fn a5(runs: &BTreeMap<String, RunMetrics>) -> Verdict {
    let total = 150_000u64;
    let mut thirds = [(0.0f64, 0usize); 3];
    let mut max_late_x = f64::NEG_INFINITY;
    for s in SEEDS {
        for e in &runs[&format!("cliff-on-{s}")].trigger_events {
            let k = ((e.step * 3 / total) as usize).min(2);
            thirds[k].0 += e.distance_to_initial;
            thirds[k].1 += 1;
            if k == 2 {
                max_late_x = max_late_x.max(e.state[0]);
            }
        }
    }
    let means: Vec<Option<f64>> = thirds.iter().map(|&(sum, n)| (n > 0).then(|| sum / n as f64)).collect();
    let rising = match (means[0], means[1], means[2]) {
        (Some(a), Some(b), Some(c)) => b >= 0.9 * a && c >= 0.9 * b,
        _ => false,
    };
    let below = max_late_x < CLIFF_X;
    let show: Vec<String> = means
        .iter()
        .zip(&thirds)
        .map(|(m, t)| m.map_or("none".into(), |m| format!("{m:.3} ({} events)", t.1)))
        .collect();
    verdict(
        rising && below,
        format!(
            "mean trigger distance per third: {} (non-decreasing within 10%: {}); max x in final third {} (below {CLIFF_X}: {})",
            show.join(", "),
            rising,
            if max_late_x.is_finite() { format!("{max_late_x:.3}") } else { "none logged".into() },
            below
        ),
    )
}

// ─── A4 / A6 ───────────────────────────────────────────────────────────────

const THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

fn peg_runs() -> BTreeMap<String, RunMetrics> {
    let mut jobs = Vec::new();
    for p in THRESHOLDS {
        for s in SEEDS {
            let cfg = RunConfig {
                p_thresh: Some(p),
                ..peg("insert", 100_000, s)
            };
            jobs.push((format!("insert-p{p}-{s}"), cfg));
        }
    }
    run_all(jobs)
}

fn a4(runs: &BTreeMap<String, RunMetrics>) -> Verdict {
    let total = 100_000u64;
    let (mut late, mut late_ok, mut manual, mut manual_late) = (0u64, 0u64, 0u64, 0u64);
    let mut per_seed = Vec::new();
    for s in SEEDS {
        let m = &runs[&format!("insert-p0.1-{s}")];
        let (mut a, mut ok) = (0u64, 0u64);
        for e in m.episodes.iter().filter(|e| e.outcome.kind == EpisodeKind::Reset) {
            if e.global_step * 4 > total * 3 {
                a += 1;
                ok += (e.outcome.termination == Termination::ResetSuccess) as u64;
            }
            if e.outcome.termination == Termination::ManualReset && e.global_step * 10 > total * 9 {
                manual_late += 1;
            }
        }
        late += a;
        late_ok += ok;
        manual += m.manual_resets;
        per_seed.push(format!("{:.2}", ok as f64 / a.max(1) as f64));
    }
    let rate = late_ok as f64 / late.max(1) as f64;
    let frac = manual_late as f64 / manual.max(1) as f64;
    verdict(
        rate >= 0.8 && frac <= 0.15,
        format!(
            "final-quarter reset success {rate:.3} (per seed {}; need 0.80); manual resets in final 10% {manual_late}/{manual} = {frac:.3} (limit 0.15)",
            per_seed.join(", ")
        ),
    )
}

fn a6(runs: &BTreeMap<String, RunMetrics>) -> Verdict {
    let shares: Vec<f64> = THRESHOLDS
        .iter()
        .map(|p| mean(&SEEDS.iter().map(|s| runs[&format!("insert-p{p}-{s}")].forward_share()).collect::<Vec<_>>()))
        .collect();
    let rises: Vec<f64> = shares.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    let pass = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.05);
    let show: Vec<String> = THRESHOLDS
        .iter()
        .zip(&shares)
        .map(|(p, s)| {
            let per: Vec<String> =
                SEEDS.iter().map(|k| format!("{:.2}", runs[&format!("insert-p{p}-{k}")].forward_share())).collect();
            format!("{p}: {s:.3} ({})", per.join(" "))
        })
        .collect();
    verdict(pass, format!("forward share by p_thresh {}; increases {rises:.3?}", show.join(", ")))
}

// ─── A7 ────────────────────────────────────────────────────────────────────

fn a7() -> Verdict {
    let mut jobs = Vec::new();
    for s in SEEDS {
        jobs.push((format!("ours-{s}"), peg("remove", 100_000, s)));
        let lnt = RunConfig {
            baseline: BaselineMode::LntSparse,
            ..peg("remove", 100_000, s)
        };
        jobs.push((format!("lnt-sparse-{s}"), lnt));
    }
    let runs = run_all(jobs);
    let share = |k: &str| mean(&SEEDS.iter().map(|s| runs[&format!("{k}-{s}")].forward_share()).collect::<Vec<_>>());
    let (ours, lnt) = (share("ours"), share("lnt-sparse"));
    let per = |k: &str| {
        let v: Vec<String> = SEEDS
            .iter()
            .map(|s| {
                let m = &runs[&format!("{k}-{s}")];
                format!("{:.2}/{:.2}", m.forward_share(), m.success_rate())
            })
            .collect();
        v.join(" ")
    };
    verdict(
        ours >= 2.0 * lnt,
        format!(
            "forward share ours {ours:.3} vs LNT-sparse {lnt:.3} (need 2x); per seed share/success ours {}, LNT-sparse {}",
            per("ours"),
            per("lnt-sparse")
        ),
    )
}

// ─── A8 ────────────────────────────────────────────────────────────────────

fn a8() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    // Byte-identical output for identical config and seed.
    let tmp = tempfile::tempdir().unwrap();
    for (env, task) in [("planar-peg", "insert"), ("cliff-runner", ""), ("spill-reacher", "")] {
        let cfg = RunConfig {
            warmup_steps: 500,
            ..base(env, task, 6000, 9)
        };
        let mut bytes = Vec::new();
        for k in 0..2 {
            let dir = tmp.path().join(format!("{env}-{k}"));
            autoreset_cli::train(Trainer::new(&cfg).unwrap(), &dir, 0, None).unwrap();
            bytes.push((fs::read(dir.join(sink::CSV_FILE)).unwrap(), dir));
        }
        let same = bytes[0].0 == bytes[1].0;
        pass &= same;
        notes.push(format!("{env} csv identical {same}"));

        // Accounting recomputed from the logged rows alone.
        let rows = sink::read_csv(&bytes[0].1.join(sink::CSV_FILE)).unwrap();
        let (mut forwards, mut attempts, mut successes, mut manual) = (0u64, 0u64, 0u64, 0u64);
        let mut bad = 0;
        for r in &rows {
            match r.kind.as_str() {
                "forward" => forwards += 1,
                "reset" => {
                    attempts += 1;
                    match r.termination.as_deref() {
                        Some("reset_success") => successes += 1,
                        Some("manual_reset") => manual += 1,
                        _ => bad += 1,
                    }
                }
                _ => {}
            }
            let open = forwards - attempts;
            let ok = open <= 1
                && r.manual_resets == manual
                && attempts == successes + manual
                && r.triggered + r.requested == attempts + open
                && (r.success_rate - if attempts == 0 { 0.0 } else { successes as f64 / attempts as f64 }).abs() < 1e-12;
            bad += (!ok) as usize;
        }
        pass &= bad == 0;
        notes.push(format!("{} rows, {bad} violating accounting", rows.len()));
    }

    // n = 1 recovers the one-step label gamma w / (gamma w + 1) exactly.
    let params = ResetParams {
        actor_critic: ActorCriticParams {
            hidden: vec![16, 16],
            ..Default::default()
        },
        n_step: 1,
        ..Default::default()
    };
    let agent = ResetAgent::new(3, 2, params, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let segs: Vec<NStepSegment> = (0..64)
        .map(|_| {
            let v = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
            let next = v(&mut rng, 3);
            NStepSegment {
                state: v(&mut rng, 3),
                action: v(&mut rng, 2),
                horizon_state: next.clone(),
                next_state: next,
                horizon: 1,
                absorbing: false,
            }
        })
        .collect();
    let batch = SegmentBatch::from_segments(&segs.iter().collect::<Vec<_>>()).unwrap();
    let labels = agent.labels(&batch).unwrap();
    let gamma = agent.params.actor_critic.gamma;
    let acts = agent.actor_target.predict(&batch.next_states, None).unwrap();
    let mut exact = true;
    for r in 0..segs.len() {
        // Ensemble-minimum target value, clipped, as a ratio.
        let c = (0..agent.ensemble.len())
            .map(|i| {
                let z = agent.ensemble.logits(i, &Matrix::row_vector(batch.next_states.row(r)), &Matrix::row_vector(acts.row(r)), true).unwrap()[0];
                (1.0 / (1.0 + (-z).exp())).min(0.5)
            })
            .fold(f64::INFINITY, f64::min);
        let w = c / (1.0 - c);
        let want = gamma * w / (gamma * w + 1.0);
        exact &= (labels.y[r] - want).abs() <= 1e-12;
    }
    for _ in 0..1000 {
        let w: f64 = rng.random_range(0.0..=1.0);
        let g: f64 = rng.random_range(0.01..0.999);
        exact &= rce_label(g, w, w, 1) == g * w / (g * w + 1.0);
    }
    pass &= exact;
    notes.push(format!("n=1 label equals the one-step label: {exact}"));
    verdict(pass, notes.join("; "))
}

// ─── driver ────────────────────────────────────────────────────────────────

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let mut results: Vec<(&str, Verdict, f64)> = Vec::new();
    let mut record = |id: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(id) {
            let t0 = Instant::now();
            let v = f();
            let secs = t0.elapsed().as_secs_f64();
            println!("{id} {} ({secs:.0} s) {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((id, v, secs));
        }
    };

    record("A1", &mut a1);
    record("A2", &mut a2);
    record("A8", &mut a8);
    if wanted("A4") || wanted("A6") {
        let t0 = Instant::now();
        let runs = peg_runs();
        eprintln!("  planar-peg insert runs: {:.0} s", t0.elapsed().as_secs_f64());
        record("A4", &mut || a4(&runs));
        record("A6", &mut || a6(&runs));
    }
    record("A7", &mut a7);
    if wanted("A3") || wanted("A5") {
        let t0 = Instant::now();
        let runs = cliff_runs();
        eprintln!("  cliff-runner runs: {:.0} s", t0.elapsed().as_secs_f64());
        record("A3", &mut || a3(&runs));
        record("A5", &mut || a5(&runs));
    }

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
