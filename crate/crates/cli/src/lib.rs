//! Command-line harness: single runs, p_thresh sweeps and baseline
//! comparisons, with CSV/JSONL metrics and resumable checkpoints.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, unreadable
//! or invalid configuration, missing files) and 2 for failures during a run.

pub mod checkpoint;
pub mod config;
pub mod sink;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use anyhow::{bail, ensure, Context, Result};
use autoreset::orchestrator::{BaselineMode, Trainer};
use clap::{ArgGroup, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Directory inside a run's output directory holding its latest checkpoint.
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Invalid invocation or input; reported with exit status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "autoreset", version, about = "Train forward/reset agent pairs and compare reset learners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// One training run writing metrics, the resolved config and a checkpoint.
    #[command(group(ArgGroup::new("source").required(true).args(["config", "resume"])))]
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "resume")]
        seed: Option<u64>,
        /// Override a configuration key, e.g. `--set p_thresh=0.2`.
        #[arg(long = "set", value_name = "KEY=VALUE", conflicts_with = "resume")]
        overrides: Vec<String>,
        /// Continue from a checkpoint directory instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Save a checkpoint whenever this many more steps have run (0: only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
        /// Stop after this many total steps even if the configured budget is larger.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Greedy evaluation episodes of a checkpointed agent pair.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// One child run per (threshold, seed), one output directory per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "p-thresh", value_delimiter = ',', required = true)]
        p_thresh: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Concurrent child processes (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Runs each reset learner on the same configuration and tabulates them.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ours,lnt,lnt-sparse")]
        modes: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train {
            config,
            seed,
            mut overrides,
            resume,
            out,
            checkpoint_every,
            stop_at,
        } => {
            let trainer = match (config, resume) {
                (_, Some(dir)) => load_checkpoint(&dir)?,
                (Some(path), None) => {
                    if let Some(s) = seed {
                        overrides.push(format!("seed={s}"));
                    }
                    Trainer::new(&config::load(&path, &overrides)?)?
                }
                (None, None) => bail!(UsageError("train needs --config or --resume".into())),
            };
            let t = train(trainer, &out, checkpoint_every, stop_at)?;
            let m = &t.metrics;
            println!(
                "steps {} forward_share {:.4} manual_resets {} success_rate {:.4} irrecoverable {}",
                t.global_step,
                m.forward_share(),
                m.manual_resets,
                m.success_rate(),
                m.irrecoverable_entries
            );
            Ok(())
        }
        Cmd::Eval { checkpoint, episodes } => {
            let mut t = load_checkpoint(&checkpoint)?;
            let mut total = 0.0;
            for i in 0..episodes {
                let r = t.evaluate_snapshot()?;
                total += r;
                println!("episode {i} return {r}");
            }
            if episodes > 0 {
                println!("mean_return {}", total / episodes as f64);
            }
            Ok(())
        }
        Cmd::Sweep {
            config,
            p_thresh,
            seeds,
            out,
            overrides,
            jobs,
        } => {
            config::load(&config, &overrides)?;
            for p in &p_thresh {
                let mut o = overrides.clone();
                o.push(format!("p_thresh={p}"));
                config::load(&config, &o)?;
            }
            let points: Vec<(String, String)> = p_thresh
                .iter()
                .map(|p| (format!("p_thresh={p}"), format!("p_thresh={p}")))
                .collect();
            let table = batch(&config, &overrides, &points, seeds, &out, jobs)?;
            print!("{table}");
            Ok(())
        }
        Cmd::Compare {
            config,
            modes,
            seeds,
            out,
            overrides,
            jobs,
        } => {
            let mut points = Vec::new();
            for m in &modes {
                let mode = BaselineMode::parse(m).ok_or_else(|| UsageError(format!("unknown mode `{m}`")))?;
                points.push((m.clone(), format!("baseline={}", mode.name())));
            }
            config::load(&config, &overrides)?;
            let table = batch(&config, &overrides, &points, seeds, &out, jobs)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    if !dir.join(checkpoint::MANIFEST_FILE).is_file() {
        bail!(UsageError(format!("{} is not a checkpoint directory", dir.display())));
    }
    checkpoint::load(dir)
}

/// Runs `trainer` to its budget (or `stop_at`), logging into `out`.
pub fn train(mut trainer: Trainer, out: &Path, checkpoint_every: u64, stop_at: Option<u64>) -> Result<Trainer> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    config::echo(&trainer.cfg, out)?;
    let mut sink = sink::Sink::create(out)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let stop = stop_at.map_or(trainer.cfg.total_steps, |s| s.min(trainer.cfg.total_steps));
    let mut next_save = trainer.global_step + checkpoint_every;
    while trainer.global_step < stop {
        for row in trainer.run_cycle()? {
            sink.log(&row)?;
        }
        if checkpoint_every > 0 && trainer.global_step >= next_save {
            checkpoint::save(&trainer, &ckpt)?;
            while next_save <= trainer.global_step {
                next_save += checkpoint_every;
            }
        }
    }
    checkpoint::save(&trainer, &ckpt)?;
    Ok(trainer)
}

/// Per-label averages over seeds, read back from finished runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub average_return: f64,
    pub manual_resets: f64,
    pub forward_share: f64,
    pub success_rate: f64,
}

pub fn summarize(label: &str, runs: &[PathBuf]) -> Result<SummaryRow> {
    let (mut ret, mut manual, mut share, mut success) = (0.0, 0.0, 0.0, 0.0);
    for dir in runs {
        let rows = sink::read_csv(&dir.join(sink::CSV_FILE))?;
        let last = rows.last().with_context(|| format!("{} logged no rows", dir.display()))?;
        let evals: Vec<f64> = rows.iter().filter(|r| r.kind == "eval").map(|r| r.ret).collect();
        ret += if evals.is_empty() {
            0.0
        } else {
            evals.iter().sum::<f64>() / evals.len() as f64
        };
        manual += last.manual_resets as f64;
        share += last.forward_share;
        success += last.success_rate;
    }
    let n = runs.len().max(1) as f64;
    Ok(SummaryRow {
        label: label.to_string(),
        average_return: ret / n,
        manual_resets: manual / n,
        forward_share: share / n,
        success_rate: success / n,
    })
}

pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>14} {:>14} {:>14} {:>14}",
        "run", "average return", "manual resets", "forward share", "success rate"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>14.3} {:>14.1} {:>14.3} {:>14.3}",
            r.label, r.average_return, r.manual_resets, r.forward_share, r.success_rate
        );
    }
    s
}

fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["run", "average_return", "manual_resets", "forward_share", "success_rate"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.average_return.to_string(),
            r.manual_resets.to_string(),
            r.forward_share.to_string(),
            r.success_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Spawns one `train` child per (point, seed) under `out/<point>/seed<k>`,
/// seeds 1..=`seeds`, then summarizes every point.
fn batch(
    config: &Path,
    overrides: &[String],
    points: &[(String, String)],
    seeds: u64,
    out: &Path,
    jobs: Option<usize>,
) -> Result<String> {
    ensure!(seeds > 0, UsageError("--seeds must be at least 1".into()));
    let exe = std::env::current_exe().context("locating the executable")?;
    let jobs = jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let mut queue = Vec::new();
    for (label, setting) in points {
        for seed in 1..=seeds {
            let dir = out.join(dir_name(label)).join(format!("seed{seed}"));
            let mut cmd = Command::new(&exe);
            cmd.arg("train").arg("--config").arg(config).arg("--seed").arg(seed.to_string());
            for o in overrides.iter().chain(std::iter::once(setting)) {
                cmd.arg("--set").arg(o);
            }
            cmd.arg("--out").arg(&dir);
            queue.push((dir, cmd));
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut running = Vec::new();
    let mut failures = Vec::new();
    let mut pending = queue.into_iter();
    loop {
        while running.len() < jobs {
            let Some((dir, mut cmd)) = pending.next() else { break };
            fs::create_dir_all(&dir)?;
            let log = fs::File::create(dir.join("run.log"))?;
            let child = cmd
                .stdout(log)
                .stderr(Stdio::inherit())
                .spawn()
                .context("spawning a training run")?;
            running.push((dir, child));
        }
        if running.is_empty() {
            break;
        }
        let (dir, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            failures.push(format!("{} ({status})", dir.display()));
        }
    }
    if !failures.is_empty() {
        bail!("child runs failed: {}", failures.join(", "));
    }

    let mut rows = Vec::new();
    for (label, _) in points {
        let runs: Vec<PathBuf> = (1..=seeds)
            .map(|s| out.join(dir_name(label)).join(format!("seed{s}")))
            .collect();
        rows.push(summarize(label, &runs)?);
    }
    write_summary(&rows, &out.join(SUMMARY_FILE))?;
    Ok(format_table(&rows))
}
