//! Run manifests written next to every output file.

use std::path::{Path, PathBuf};

use musmse::config::{ConfigFile, SystemConfig};
use musmse::montecarlo::SweepPlan;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::OutputFormat;

/// What produced an output, in enough detail to produce it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum RunSpec {
    Energy { config: ConfigFile, block_lengths: Vec<usize>, snr_db: Vec<f64> },
    Sweep { plan: SweepPlan, workers: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub run: RunSpec,
    /// Scenario after flag overrides, for the reference block length.
    pub resolved_config: SystemConfig,
    pub format: OutputFormat,
    pub outputs: Vec<PathBuf>,
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn parse_manifest(text: &str) -> CliResult<RunManifest> {
    let m: RunManifest = serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
    if let RunSpec::Sweep { plan, .. } = &m.run {
        plan.config.validate()?;
        if plan.trials == 0 || plan.snr_db.is_empty() || plan.policies.is_empty() {
            return Err(CliError::Config("manifest describes an empty sweep".into()));
        }
    }
    Ok(m)
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_manifest(&text)
}

/// `out/run.csv` pairs with `out/run.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
