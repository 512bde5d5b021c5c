//! Run configuration files: TOML holding any subset of the `RunConfig` keys.
//! Missing keys take the defaults, unknown keys are refused by name.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use autoreset::orchestrator::RunConfig;

use crate::UsageError;

/// File name of the resolved configuration echoed into every output directory.
pub const RESOLVED_FILE: &str = "config.toml";

/// Parses configuration text with `key=value` overrides applied on top.
/// Override values use TOML syntax; bare words are taken as strings.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e| UsageError(format!("config: {e}")))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| UsageError(format!("override `{item}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("parsed"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        table.insert(key.to_string(), value);
    }
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| UsageError(format!("config: {e}")))?;
    cfg.resolve().map_err(|e| UsageError(e.to_string()).into())
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides).with_context(|| format!("in {}", path.display()))
}

pub fn to_text(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).context("serializing the configuration")
}

/// Writes the resolved configuration so the directory alone allows a rerun.
pub fn echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join(RESOLVED_FILE);
    fs::write(&path, to_text(cfg)?).with_context(|| format!("writing {}", path.display()))
}
