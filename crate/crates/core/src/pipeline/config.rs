//! Run configuration: a TOML file plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::net::{LayerDef, SgdConfig, SyntheticSpec};
use crate::quant::QuantizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: Vec<LayerDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding every artifact of the run.
    pub dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("run") }
    }
}

impl PathsConfig {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("float.dnq")
    }
    pub fn train_report(&self) -> PathBuf {
        self.dir.join("train_report.json")
    }
    pub fn sequence(&self) -> PathBuf {
        self.dir.join("sequence.json")
    }
    pub fn search_log(&self) -> PathBuf {
        self.dir.join("search_log.csv")
    }
    pub fn packed(&self) -> PathBuf {
        self.dir.join("model.dnqp")
    }
    pub fn quant_metrics(&self) -> PathBuf {
        self.dir.join("quant_metrics.csv")
    }
    pub fn quantize_report(&self) -> PathBuf {
        self.dir.join("quantize_report.json")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.dir.join("eval_report.json")
    }
    pub fn export(&self) -> PathBuf {
        self.dir.join("dequantized.dnq")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own generator from it.
    pub seed: Option<u64>,
    pub data: SyntheticSpec,
    pub model: ModelConfig,
    pub train: SgdConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub quantizer: QuantizerConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

/// Per-stage seed offsets.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Data,
    Init,
    Train,
    Policy,
    Search,
    Quantize,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::Config("missing required `seed` (no entropy-based default)".into()));
        }
        if self.model.layers.is_empty() {
            return Err(Error::Config("model.layers must not be empty".into()));
        }
        let d = &self.data;
        if d.num_classes < 2 || d.n_train == 0 || d.n_eval == 0 || d.input_shape.is_empty() {
            return Err(Error::Config("data needs ≥2 classes, positive split sizes and an input shape".into()));
        }
        if !(self.train.lr > 0.0) || self.train.batch_size == 0 {
            return Err(Error::Config("train.lr and train.batch_size must be positive".into()));
        }
        self.controller.validate()?;
        if let Some(b) = self.controller.fc_fixed_bits {
            crate::quant::BitWidth::new(b).map_err(|e| Error::Config(format!("controller.fc_fixed_bits: {e}")))?;
        }
        if self.quantizer.distance_clusters == 0 {
            return Err(Error::Config("quantizer.distance_clusters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        // splitmix64 finaliser over (seed, stage)
        let mut z = self.seed().wrapping_add((stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

/// Applies `a.b.c=value`; the value is read as a TOML literal, falling back
/// to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[data]
num_classes = 3
n_train = 30
n_eval = 12
input_shape = [4]
[model]
layers = [{ kind = "dense", units = 5 }, { kind = "dense", units = 3 }]
[train]
steps = 10
lr = 0.1
batch_size = 8
"#;

    #[test]
    fn defaults_fill_optional_sections() {
        let c = PipelineConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(c.controller.reward.lambda, 0.05);
        assert_eq!(c.controller.iterations, 1000);
        assert_eq!(c.controller.batch, 5);
        assert_eq!(c.controller.fc_fixed_bits, Some(3));
        assert_eq!(c.quantizer.distance_clusters, 12);
        assert_eq!(c.paths.dir, PathBuf::from("run"));
    }

    #[test]
    fn missing_seed_rejected() {
        let text = MINIMAL.replace("seed = 7", "");
        let err = PipelineConfig::from_toml_str(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn overrides_apply_with_types() {
        let c = PipelineConfig::from_toml_str(
            MINIMAL,
            &[
                "controller.reward.lambda=0.5".into(),
                "paths.dir=out/x".into(),
                "seed=9".into(),
                "controller.policy.cell=\"lstm\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.controller.reward.lambda, 0.5);
        assert_eq!(c.paths.dir, PathBuf::from("out/x"));
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.controller.policy.cell, crate::controller::CellKind::Lstm);
        assert!(PipelineConfig::from_toml_str(MINIMAL, &["nonsense".into()]).is_err());
        assert!(PipelineConfig::from_toml_str(MINIMAL, &["train.bogus=1".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::from_toml_str(MINIMAL, &[]).unwrap();
        let b = PipelineConfig::from_toml_str(MINIMAL, &["train.steps=11".into()]).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.stage_seed(Stage::Data), a.stage_seed(Stage::Train));
    }
}
