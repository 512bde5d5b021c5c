//! Metrics persistence: `metrics.csv` plus a `metrics.jsonl` mirror holding
//! the same records.
//!
//! CSV columns, in order:
//! `global_step, episode_index, kind, return, termination, manual_resets,
//! triggered, requested, forward_share, success_rate, p_bar_at_trigger,
//! distance_at_trigger`. The last two are empty unless the episode ended
//! with a trigger; `termination` is empty on eval rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use autoreset::orchestrator::MetricsRow;
use serde::{Deserialize, Serialize};

pub const CSV_FILE: &str = "metrics.csv";
pub const JSONL_FILE: &str = "metrics.jsonl";

pub const HEADER: [&str; 12] = [
    "global_step",
    "episode_index",
    "kind",
    "return",
    "termination",
    "manual_resets",
    "triggered",
    "requested",
    "forward_share",
    "success_rate",
    "p_bar_at_trigger",
    "distance_at_trigger",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub global_step: u64,
    pub episode_index: u64,
    pub kind: String,
    #[serde(rename = "return")]
    pub ret: f64,
    pub termination: Option<String>,
    pub manual_resets: u64,
    pub triggered: u64,
    pub requested: u64,
    pub forward_share: f64,
    pub success_rate: f64,
    pub p_bar_at_trigger: Option<f64>,
    pub distance_at_trigger: Option<f64>,
}

impl From<&MetricsRow> for Record {
    fn from(r: &MetricsRow) -> Self {
        Record {
            global_step: r.global_step,
            episode_index: r.episode_index,
            kind: r.kind.name().to_string(),
            ret: r.ret,
            termination: r.termination.map(|t| t.name().to_string()),
            manual_resets: r.manual_resets,
            triggered: r.triggered,
            requested: r.requested,
            forward_share: r.forward_share,
            success_rate: r.success_rate,
            p_bar_at_trigger: r.p_bar_at_trigger,
            distance_at_trigger: r.distance_at_trigger,
        }
    }
}

pub struct Sink {
    csv: csv::Writer<File>,
    jsonl: BufWriter<File>,
}

impl Sink {
    /// Creates both files, truncating old ones, and writes the CSV header.
    pub fn create(dir: &Path) -> Result<Self> {
        let csv_path = dir.join(CSV_FILE);
        let json_path = dir.join(JSONL_FILE);
        let mut csv = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&csv_path)
            .with_context(|| format!("creating {}", csv_path.display()))?;
        csv.write_record(HEADER)?;
        csv.flush()?;
        let jsonl = BufWriter::new(File::create(&json_path).with_context(|| format!("creating {}", json_path.display()))?);
        Ok(Self { csv, jsonl })
    }

    pub fn log(&mut self, row: &MetricsRow) -> Result<()> {
        let rec = Record::from(row);
        self.csv.serialize(&rec).context("writing metrics.csv")?;
        self.csv.flush().context("writing metrics.csv")?;
        serde_json::to_writer(&mut self.jsonl, &rec).context("writing metrics.jsonl")?;
        self.jsonl.write_all(b"\n").context("writing metrics.jsonl")?;
        self.jsonl.flush().context("writing metrics.jsonl")?;
        Ok(())
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<Record>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == HEADER, "{}: unexpected header {header:?}", path.display());
    r.deserialize()
        .collect::<Result<Vec<Record>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing {}", path.display())))
        .collect()
}
