use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Path → SHA-256 of every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Path → SHA-256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn digests(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
        .collect()
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest {}: {e}", path.display())))
    }

    /// Adds or replaces one stage. A manifest written for a different config
    /// or tool version is started afresh.
    pub fn record(
        path: &Path,
        config_hash: &str,
        stage: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        wall_clock_seconds: f64,
    ) -> Result<Self> {
        let mut m = match Self::load(path) {
            Ok(m) if m.config_hash == config_hash && m.tool_version == TOOL_VERSION => m,
            _ => Self {
                tool_version: TOOL_VERSION.to_string(),
                config_hash: config_hash.to_string(),
                stages: BTreeMap::new(),
            },
        };
        m.stages.insert(
            stage.to_string(),
            StageRecord {
                inputs: digests(inputs)?,
                outputs: digests(outputs)?,
                wall_clock_seconds,
            },
        );
        let text = serde_json::to_string_pretty(&m).expect("manifest serialises");
        std::fs::write(path, text + "\n")?;
        Ok(m)
    }
}
