//! Reproducibility bookkeeping: every run directory holds the resolved
//! config plus exactly one manifest whose hash covers that stored config.

use std::collections::BTreeMap;
use std::path::Path;

use mcvd_locate::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of the bytes of `config.json` in the same directory.
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub created_utc: String,
    /// Files this run wrote, relative to the run directory.
    pub outputs: Vec<String>,
}

/// Writes `config.json` and `manifest.json` into `dir`. Call after all
/// other artifacts exist so `outputs` is complete; `outputs` should list
/// everything except the manifest itself (config.json is added here).
pub fn write_run_dir<C: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    seeds: BTreeMap<String, u64>,
    outputs: &[&str],
) -> Result<()> {
    let mut cfg_text = serde_json::to_string_pretty(config).expect("run config always serializes");
    cfg_text.push('\n');
    std::fs::write(dir.join("config.json"), &cfg_text)?;

    let mut all: Vec<String> = vec!["config.json".to_string()];
    all.extend(outputs.iter().map(|s| s.to_string()));
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_sha256: hex::encode(Sha256::digest(cfg_text.as_bytes())),
        seeds,
        created_utc: chrono::Utc::now().to_rfc3339(),
        outputs: all,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}
