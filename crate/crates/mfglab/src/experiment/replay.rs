//! Determinism audit: rebuilds the report from the stored config and raw
//! traces and compares it byte-for-byte with the stored report.

use super::config::ExperimentConfig;
use super::runner::{config_hash, report_from_traces, Manifest};
use super::traces::TraceSet;
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Match,
    Mismatch { diff: String },
}

pub fn replay(dir: &Path) -> Result<ReplayOutcome> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::ArtifactCorrupt("missing manifest.json".into()));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::ArtifactCorrupt(format!("manifest: {e}")))?;
    let config_text = std::fs::read_to_string(dir.join("config.toml"))
        .map_err(|_| Error::ArtifactCorrupt("missing config.toml".into()))?;
    let stored_report = std::fs::read_to_string(dir.join("report.json"))
        .map_err(|_| Error::ArtifactCorrupt("missing report.json".into()))?;
    let hash = config_hash(&config_text);
    if hash != manifest.config_sha256 {
        return Ok(ReplayOutcome::Mismatch {
            diff: "config hash does not match the manifest".into(),
        });
    }
    let cfg = ExperimentConfig::parse(&config_text)?;
    let traces = TraceSet::load(dir)?;
    let rebuilt = report_from_traces(&cfg, &traces, hash)?.to_json();
    if rebuilt == stored_report {
        Ok(ReplayOutcome::Match)
    } else {
        let diff = first_difference(&stored_report, &rebuilt);
        Ok(ReplayOutcome::Mismatch { diff })
    }
}

fn first_difference(a: &str, b: &str) -> String {
    for (i, (la, lb)) in a.lines().zip(b.lines()).enumerate() {
        if la != lb {
            return format!("line {}: stored `{la}` vs recomputed `{lb}`", i + 1);
        }
    }
    format!(
        "length mismatch: stored {} lines vs recomputed {}",
        a.lines().count(),
        b.lines().count()
    )
}
