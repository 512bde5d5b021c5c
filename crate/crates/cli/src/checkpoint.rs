//! Checkpoint directory: `manifest.txt` (TOML) plus `arrays.bin`, a flat run
//! of little-endian f64 values addressed by the manifest's array table.
//!
//! Everything a run needs to continue bit-for-bit is stored: parameters,
//! optimizer moments, buffers in slot order, both RNG positions and the
//! metric logs. Integers and flags travel as exactly representable f64.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use autoreset::buffer::{NStepSegment, RingBuffer, Transition};
use autoreset::envs::EnvState;
use autoreset::nn::{AdamState, Mlp};
use autoreset::orchestrator::{
    EpisodeKind, EpisodeOutcome, EpisodeSummary, ResetLearner, RunConfig, RunMetrics, Termination, Trainer,
    TriggerEvent,
};
use autoreset::reset::PendingStep;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const ARRAYS_FILE: &str = "arrays.bin";
const FORMAT: &str = "autoreset-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    seed: u64,
    global_step: u64,
    value_count: u64,
    arrays_sha256: String,
    counters: BTreeMap<String, u64>,
    rng: RngState,
    eval_rng: RngState,
    config: RunConfig,
    networks: Vec<NetworkEntry>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: String,
    stream: u64,
    /// u128 does not fit a TOML integer.
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkEntry {
    name: String,
    spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    offset: u64,
    len: u64,
    sha256: String,
}

fn sha256_of(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: hex::encode(rng.get_seed()),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn restore_rng(state: &RngState) -> Result<ChaCha8Rng> {
    let bytes = hex::decode(&state.seed).context("rng seed is not hex")?;
    let seed: [u8; 32] = bytes
        .try_into()
        .map_err(|_| anyhow::anyhow!("rng seed must be 32 bytes"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos.parse().context("rng word position")?);
    Ok(rng)
}

#[derive(Default)]
struct Writer {
    values: Vec<f64>,
    arrays: Vec<ArrayEntry>,
    networks: Vec<NetworkEntry>,
    counters: BTreeMap<String, u64>,
}

impl Writer {
    fn array(&mut self, name: &str, data: &[f64]) {
        self.arrays.push(ArrayEntry {
            name: name.to_string(),
            offset: self.values.len() as u64,
            len: data.len() as u64,
            sha256: sha256_of(data),
        });
        self.values.extend_from_slice(data);
    }

    fn counter(&mut self, name: &str, v: u64) {
        self.counters.insert(name.to_string(), v);
    }

    fn network(&mut self, name: &str, net: &Mlp) {
        self.networks.push(NetworkEntry {
            name: name.to_string(),
            spec: net.spec().describe(),
        });
        self.array(name, &net.flat());
    }

    fn adam(&mut self, name: &str, opt: &AdamState) {
        let (m, v) = opt.flat_moments();
        self.array(&format!("{name}.m"), &m);
        self.array(&format!("{name}.v"), &v);
        self.counter(&format!("{name}.steps"), opt.step_count);
    }

    fn rows<T>(&mut self, name: &str, buf: &RingBuffer<T>, encode: impl Fn(&T, &mut Vec<f64>)) {
        let (items, head) = buf.raw_parts();
        let mut flat = Vec::new();
        for it in items {
            encode(it, &mut flat);
        }
        self.array(name, &flat);
        self.counter(&format!("{name}.len"), items.len() as u64);
        self.counter(&format!("{name}.head"), head as u64);
    }
}

struct Reader {
    values: Vec<f64>,
    arrays: HashMap<String, (usize, usize)>,
    networks: HashMap<String, String>,
    counters: BTreeMap<String, u64>,
}

impl Reader {
    fn array(&mut self, name: &str) -> Result<&[f64]> {
        let (off, len) = self
            .arrays
            .remove(name)
            .with_context(|| format!("checkpoint lacks array {name}"))?;
        Ok(&self.values[off..off + len])
    }

    fn array_len(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let a = self.array(name)?;
        ensure!(a.len() == len, "array {name}: expected {len} values, found {}", a.len());
        Ok(a.to_vec())
    }

    fn counter(&mut self, name: &str) -> Result<u64> {
        self.counters
            .remove(name)
            .with_context(|| format!("checkpoint lacks counter {name}"))
    }

    fn network(&mut self, name: &str, net: &mut Mlp) -> Result<()> {
        let spec = self
            .networks
            .remove(name)
            .with_context(|| format!("checkpoint lacks network {name}"))?;
        ensure!(
            spec == net.spec().describe(),
            "network {name}: stored architecture `{spec}` differs from `{}`",
            net.spec().describe()
        );
        let flat = self.array_len(name, net.param_count())?;
        net.set_flat(&flat)?;
        Ok(())
    }

    fn adam(&mut self, name: &str, opt: &mut AdamState) -> Result<()> {
        let n = opt.flat_moments().0.len();
        let m = self.array_len(&format!("{name}.m"), n)?;
        let v = self.array_len(&format!("{name}.v"), n)?;
        opt.set_flat_moments(&m, &v)?;
        opt.step_count = self.counter(&format!("{name}.steps"))?;
        Ok(())
    }

    fn rows<T>(
        &mut self,
        name: &str,
        capacity: usize,
        width: usize,
        decode: impl Fn(&[f64]) -> Result<T>,
    ) -> Result<RingBuffer<T>> {
        let len = self.counter(&format!("{name}.len"))? as usize;
        let head = self.counter(&format!("{name}.head"))? as usize;
        let flat = self.array_len(name, len * width)?;
        let items = flat.chunks(width.max(1)).take(len).map(decode).collect::<Result<Vec<_>>>()?;
        Ok(RingBuffer::from_raw_parts(capacity, items, head)?)
    }

    fn finish(self) -> Result<()> {
        let mut left: Vec<String> = self.arrays.into_keys().chain(self.networks.into_keys()).collect();
        left.extend(self.counters.into_keys());
        left.sort();
        ensure!(left.is_empty(), "checkpoint has unexpected entries: {}", left.join(", "));
        Ok(())
    }
}

fn flag(v: f64) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => bail!("expected a 0/1 flag, found {v}"),
    }
}

fn int(v: f64) -> Result<u64> {
    ensure!(
        v.fract() == 0.0 && (0.0..=9_007_199_254_740_992.0).contains(&v),
        "expected a non-negative integer, found {v}"
    );
    Ok(v as u64)
}

fn put_transition(t: &Transition, out: &mut Vec<f64>) {
    out.extend_from_slice(&t.state);
    out.extend_from_slice(&t.action);
    out.push(t.reward);
    out.extend_from_slice(&t.next_state);
    out.push(t.terminal as u8 as f64);
}

fn get_transition(r: &[f64], sd: usize, ad: usize) -> Result<Transition> {
    Ok(Transition {
        state: r[..sd].to_vec(),
        action: r[sd..sd + ad].to_vec(),
        reward: r[sd + ad],
        next_state: r[sd + ad + 1..2 * sd + ad + 1].to_vec(),
        terminal: flag(r[2 * sd + ad + 1])?,
    })
}

fn put_segment(s: &NStepSegment, out: &mut Vec<f64>) {
    out.extend_from_slice(&s.state);
    out.extend_from_slice(&s.action);
    out.extend_from_slice(&s.next_state);
    out.extend_from_slice(&s.horizon_state);
    out.push(s.horizon as f64);
    out.push(s.absorbing as u8 as f64);
}

fn get_segment(r: &[f64], sd: usize, ad: usize) -> Result<NStepSegment> {
    let mut at = 0;
    let mut take = |n: usize| {
        let v = r[at..at + n].to_vec();
        at += n;
        v
    };
    Ok(NStepSegment {
        state: take(sd),
        action: take(ad),
        next_state: take(sd),
        horizon_state: take(sd),
        horizon: int(r[3 * sd + ad])? as usize,
        absorbing: flag(r[3 * sd + ad + 1])?,
    })
}

const KINDS: [EpisodeKind; 3] = [EpisodeKind::Forward, EpisodeKind::Reset, EpisodeKind::Eval];
const ENDS: [Termination; 4] = [
    Termination::Triggered,
    Termination::Requested,
    Termination::ResetSuccess,
    Termination::ManualReset,
];

fn code<T: PartialEq>(table: &[T], v: &T) -> f64 {
    table.iter().position(|x| x == v).expect("listed") as f64
}

fn decode<T: Copy>(table: &[T], v: f64) -> Result<T> {
    table
        .get(int(v)? as usize)
        .copied()
        .with_context(|| format!("unknown code {v}"))
}

fn write_metrics(w: &mut Writer, m: &RunMetrics, sd: usize) {
    for (name, v) in [
        ("metrics.manual_resets", m.manual_resets),
        ("metrics.triggered_resets", m.triggered_resets),
        ("metrics.requested_resets", m.requested_resets),
        ("metrics.reset_attempts", m.reset_attempts),
        ("metrics.reset_successes", m.reset_successes),
        ("metrics.forward_steps", m.forward_steps),
        ("metrics.reset_steps", m.reset_steps),
        ("metrics.irrecoverable_entries", m.irrecoverable_entries),
        ("metrics.forced_steps", m.forced_steps),
    ] {
        w.counter(name, v);
    }
    let evals: Vec<f64> = m.eval_returns.iter().flat_map(|&(s, r)| [s as f64, r]).collect();
    w.array("metrics.eval_returns", &evals);
    let mut trig = Vec::with_capacity(m.trigger_events.len() * (sd + 3));
    for e in &m.trigger_events {
        trig.extend([e.step as f64, e.distance_to_initial, e.score]);
        trig.extend_from_slice(&e.state);
    }
    w.array("metrics.trigger_events", &trig);
    let mut eps = Vec::with_capacity(m.episodes.len() * 6);
    for e in &m.episodes {
        let o = &e.outcome;
        eps.extend([
            e.global_step as f64,
            e.index as f64,
            code(&KINDS, &o.kind),
            o.steps as f64,
            o.ret,
            code(&ENDS, &o.termination),
        ]);
    }
    w.array("metrics.episodes", &eps);
    w.counter("metrics.episodes.len", m.episodes.len() as u64);
    w.counter("metrics.trigger_events.len", m.trigger_events.len() as u64);
}

fn read_metrics(r: &mut Reader, sd: usize) -> Result<RunMetrics> {
    let mut m = RunMetrics {
        manual_resets: r.counter("metrics.manual_resets")?,
        triggered_resets: r.counter("metrics.triggered_resets")?,
        requested_resets: r.counter("metrics.requested_resets")?,
        reset_attempts: r.counter("metrics.reset_attempts")?,
        reset_successes: r.counter("metrics.reset_successes")?,
        forward_steps: r.counter("metrics.forward_steps")?,
        reset_steps: r.counter("metrics.reset_steps")?,
        irrecoverable_entries: r.counter("metrics.irrecoverable_entries")?,
        forced_steps: r.counter("metrics.forced_steps")?,
        ..Default::default()
    };
    let evals = r.array("metrics.eval_returns")?.to_vec();
    ensure!(evals.len() % 2 == 0, "eval log has odd length");
    m.eval_returns = evals
        .chunks(2)
        .map(|c| Ok((int(c[0])?, c[1])))
        .collect::<Result<_>>()?;
    let n = r.counter("metrics.trigger_events.len")? as usize;
    let trig = r.array_len("metrics.trigger_events", n * (sd + 3))?;
    m.trigger_events = trig
        .chunks(sd + 3)
        .take(n)
        .map(|c| {
            Ok(TriggerEvent {
                step: int(c[0])?,
                distance_to_initial: c[1],
                score: c[2],
                state: c[3..].to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    let n = r.counter("metrics.episodes.len")? as usize;
    let eps = r.array_len("metrics.episodes", n * 6)?;
    m.episodes = eps
        .chunks(6)
        .take(n)
        .map(|c| {
            Ok(EpisodeSummary {
                global_step: int(c[0])?,
                index: int(c[1])?,
                outcome: EpisodeOutcome {
                    kind: decode(&KINDS, c[2])?,
                    steps: int(c[3])? as usize,
                    ret: c[4],
                    termination: decode(&ENDS, c[5])?,
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(m)
}

fn encode(t: &Trainer) -> (Manifest, Vec<f64>) {
    let sd = t.env.spec().state_dim;
    let mut w = Writer::default();

    let mut st = t.state.observation.clone();
    st.push(t.state.irrecoverable as u8 as f64);
    w.array("env.state", &st);

    let f = &t.forward;
    w.network("forward.actor", &f.actor);
    w.network("forward.actor_target", &f.actor_target);
    w.network("forward.critic", &f.critic);
    w.network("forward.critic_target", &f.critic_target);
    w.adam("forward.actor_opt", &f.actor_opt);
    w.adam("forward.critic_opt", &f.critic_opt);
    w.counter("forward.skipped_updates", f.skipped_updates);
    w.rows("forward.buffer", &t.forward_buffer, put_transition);

    match &t.reset {
        ResetLearner::Rce(r) => {
            w.network("reset.actor", &r.actor);
            w.network("reset.actor_target", &r.actor_target);
            w.adam("reset.actor_opt", &r.actor_opt);
            for (i, m) in r.ensemble.members.iter().enumerate() {
                w.network(&format!("reset.member{i}.trainable"), &m.trainable);
                w.network(&format!("reset.member{i}.target"), &m.target);
                w.network(&format!("reset.member{i}.prior"), &m.prior);
                w.adam(&format!("reset.member{i}.opt"), &m.opt);
            }
            w.rows("reset.segments", &r.segments, put_segment);
            w.rows("reset.examples", &r.examples, |e, out| out.extend_from_slice(e));
            let mut pend = Vec::new();
            for p in &r.pending {
                pend.extend_from_slice(&p.state);
                pend.extend_from_slice(&p.action);
                pend.extend_from_slice(&p.next_state);
                pend.push(p.absorbing as u8 as f64);
            }
            w.array("reset.pending", &pend);
            w.counter("reset.pending.len", r.pending.len() as u64);
            w.counter("reset.skipped_updates", r.skipped_updates);
        }
        ResetLearner::Lnt(r) => {
            w.network("lnt.actor", &r.actor);
            w.network("lnt.actor_target", &r.actor_target);
            w.adam("lnt.actor_opt", &r.actor_opt);
            for (i, q) in r.critics.iter().enumerate() {
                w.network(&format!("lnt.critic{i}.online"), &q.online);
                w.network(&format!("lnt.critic{i}.target"), &q.target);
                w.adam(&format!("lnt.critic{i}.opt"), &q.opt);
            }
            w.rows("lnt.transitions", &r.transitions, put_transition);
            w.counter("lnt.skipped_updates", r.skipped_updates);
        }
    }

    write_metrics(&mut w, &t.metrics, sd);
    w.counter("episode_index", t.episode_index);
    w.counter("next_eval", t.next_eval);
    w.counter("stalled", t.stalled as u64);

    let manifest = Manifest {
        format: FORMAT.to_string(),
        seed: t.cfg.seed,
        global_step: t.global_step,
        value_count: w.values.len() as u64,
        arrays_sha256: sha256_of(&w.values),
        counters: w.counters,
        rng: rng_state(&t.rng),
        eval_rng: rng_state(&t.eval_rng),
        config: t.cfg.clone(),
        networks: w.networks,
        arrays: w.arrays,
    };
    (manifest, w.values)
}

/// Manifest text and array bytes exactly as `save` writes them.
pub fn to_bytes(trainer: &Trainer) -> Result<(String, Vec<u8>)> {
    let (manifest, values) = encode(trainer);
    let text = toml::to_string(&manifest).context("serializing the manifest")?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in &values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok((text, bytes))
}

pub fn save(trainer: &Trainer, dir: &Path) -> Result<()> {
    let (text, bytes) = to_bytes(trainer)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(ARRAYS_FILE), bytes).with_context(|| format!("writing {}", dir.join(ARRAYS_FILE).display()))?;
    fs::write(dir.join(MANIFEST_FILE), text)
        .with_context(|| format!("writing {}", dir.join(MANIFEST_FILE).display()))?;
    Ok(())
}

pub fn from_bytes(manifest_text: &str, bytes: &[u8]) -> Result<Trainer> {
    let manifest: Manifest = toml::from_str(manifest_text).context("malformed checkpoint manifest")?;
    ensure!(manifest.format == FORMAT, "unsupported checkpoint format {}", manifest.format);
    let expected = manifest.value_count as usize * 8;
    ensure!(
        bytes.len() == expected,
        "array file holds {} bytes, manifest expects {expected} (truncated or corrupt)",
        bytes.len()
    );
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ensure!(sha256_of(&values) == manifest.arrays_sha256, "array file digest mismatch");
    let mut arrays = HashMap::new();
    for e in &manifest.arrays {
        let (off, len) = (e.offset as usize, e.len as usize);
        ensure!(
            off.checked_add(len).is_some_and(|end| end <= values.len()),
            "array {} lies outside the array file",
            e.name
        );
        ensure!(sha256_of(&values[off..off + len]) == e.sha256, "array {} digest mismatch", e.name);
        ensure!(arrays.insert(e.name.clone(), (off, len)).is_none(), "array {} listed twice", e.name);
    }
    let mut r = Reader {
        values,
        arrays,
        networks: manifest.networks.iter().map(|n| (n.name.clone(), n.spec.clone())).collect(),
        counters: manifest.counters.clone(),
    };

    let mut t = Trainer::new(&manifest.config)?;
    ensure!(t.cfg == manifest.config, "stored configuration is not in resolved form");
    let spec = t.env.spec().clone();
    let (sd, ad) = (spec.state_dim, spec.action_dim);

    let st = r.array_len("env.state", sd + 1)?;
    t.state = EnvState {
        observation: st[..sd].to_vec(),
        irrecoverable: flag(st[sd])?,
    };

    let f = &mut t.forward;
    r.network("forward.actor", &mut f.actor)?;
    r.network("forward.actor_target", &mut f.actor_target)?;
    r.network("forward.critic", &mut f.critic)?;
    r.network("forward.critic_target", &mut f.critic_target)?;
    r.adam("forward.actor_opt", &mut f.actor_opt)?;
    r.adam("forward.critic_opt", &mut f.critic_opt)?;
    f.skipped_updates = r.counter("forward.skipped_updates")?;
    let tw = 2 * sd + ad + 2;
    t.forward_buffer = r.rows("forward.buffer", t.cfg.buffer_capacity, tw, |c| get_transition(c, sd, ad))?;

    match &mut t.reset {
        ResetLearner::Rce(a) => {
            r.network("reset.actor", &mut a.actor)?;
            r.network("reset.actor_target", &mut a.actor_target)?;
            r.adam("reset.actor_opt", &mut a.actor_opt)?;
            for (i, m) in a.ensemble.members.iter_mut().enumerate() {
                r.network(&format!("reset.member{i}.trainable"), &mut m.trainable)?;
                r.network(&format!("reset.member{i}.target"), &mut m.target)?;
                r.network(&format!("reset.member{i}.prior"), &mut m.prior)?;
                r.adam(&format!("reset.member{i}.opt"), &mut m.opt)?;
            }
            let (seg_cap, ex_cap) = (a.params.segment_capacity, a.params.example_capacity);
            a.segments = r.rows("reset.segments", seg_cap, 3 * sd + ad + 2, |c| get_segment(c, sd, ad))?;
            a.examples = r.rows("reset.examples", ex_cap, sd, |c| Ok(c.to_vec()))?;
            let n = r.counter("reset.pending.len")? as usize;
            let pw = 2 * sd + ad + 1;
            let pend = r.array_len("reset.pending", n * pw)?;
            a.pending = pend
                .chunks(pw)
                .take(n)
                .map(|c| {
                    Ok(PendingStep {
                        state: c[..sd].to_vec(),
                        action: c[sd..sd + ad].to_vec(),
                        next_state: c[sd + ad..2 * sd + ad].to_vec(),
                        absorbing: flag(c[2 * sd + ad])?,
                    })
                })
                .collect::<Result<VecDeque<_>>>()?;
            a.skipped_updates = r.counter("reset.skipped_updates")?;
        }
        ResetLearner::Lnt(a) => {
            r.network("lnt.actor", &mut a.actor)?;
            r.network("lnt.actor_target", &mut a.actor_target)?;
            r.adam("lnt.actor_opt", &mut a.actor_opt)?;
            for (i, q) in a.critics.iter_mut().enumerate() {
                r.network(&format!("lnt.critic{i}.online"), &mut q.online)?;
                r.network(&format!("lnt.critic{i}.target"), &mut q.target)?;
                r.adam(&format!("lnt.critic{i}.opt"), &mut q.opt)?;
            }
            let cap = a.params.capacity;
            a.transitions = r.rows("lnt.transitions", cap, tw, |c| get_transition(c, sd, ad))?;
            a.skipped_updates = r.counter("lnt.skipped_updates")?;
        }
    }

    t.metrics = read_metrics(&mut r, sd)?;
    t.episode_index = r.counter("episode_index")?;
    t.next_eval = r.counter("next_eval")?;
    t.stalled = r.counter("stalled")? != 0;
    t.global_step = manifest.global_step;
    t.rng = restore_rng(&manifest.rng)?;
    t.eval_rng = restore_rng(&manifest.eval_rng)?;
    r.finish()?;
    ensure!(
        t.metrics.total_steps() == t.global_step,
        "step counters disagree with the stored global step"
    );
    Ok(t)
}

pub fn load(dir: &Path) -> Result<Trainer> {
    let mp = dir.join(MANIFEST_FILE);
    let ap = dir.join(ARRAYS_FILE);
    let text = fs::read_to_string(&mp).with_context(|| format!("reading {}", mp.display()))?;
    let bytes = fs::read(&ap).with_context(|| format!("reading {}", ap.display()))?;
    from_bytes(&text, &bytes).with_context(|| format!("loading checkpoint {}", dir.display()))
}
