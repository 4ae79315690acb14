//! Experiment configuration: TOML files, `key.path=value` overrides, per-stage
//! seed derivation and the config hash stamped on every artifact.
//!
//! A config file only needs the keys it changes; everything else falls back to
//! [`ExperimentConfig::default`]. The `seed` fields of the stage sections are
//! ignored: every stage seed is derived from the top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advantage::Algorithm;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::metrics::Decoding;
use crate::rl::RlConfig;
use crate::sft::SftConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingKind {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of held-out samples.
    pub size: usize,
    pub decoding: DecodingKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            size: 20000,
            decoding: DecodingKind::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub sft: SftConfig,
    pub rl: RlConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            sft: SftConfig::default(),
            rl: RlConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// The dataset splits written by `gen-data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Sft,
    Rl,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Sft, Split::Rl, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Sft => "sft",
            Split::Rl => "rl",
            Split::Eval => "eval",
        }
    }
}

/// Derives an independent 64-bit seed for a named stage.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(global.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl ExperimentConfig {
    /// Loads a TOML file, applies `key.path=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config file {}: {e}", p.display()))
            })?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default())
            .map_err(|e| Error::InvalidConfig(format!("default config: {e}")))?;
        let file: toml::Table = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        merge(&mut table, file);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sft.validate()?;
        self.rl.validate()?;
        if self.eval.size == 0 {
            return Err(Error::InvalidConfig("eval.size must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the config, excluding the
    /// output directory so that the same experiment in two places shares a
    /// hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// Generator config for one dataset split.
    pub fn env_for(&self, split: Split) -> EnvConfig {
        EnvConfig {
            seed: derive_seed(self.seed, &format!("data/{}", split.as_str())),
            ..self.env.clone()
        }
    }

    pub fn sft_config(&self) -> SftConfig {
        SftConfig {
            seed: derive_seed(self.seed, "sft"),
            ..self.sft.clone()
        }
    }

    /// RL config for `algorithm`. Both algorithms get the same seed, so a
    /// comparison differs only in the advantage used.
    pub fn rl_config(&self, algorithm: Algorithm) -> RlConfig {
        RlConfig {
            algorithm,
            seed: derive_seed(self.seed, "rl"),
            ..self.rl.clone()
        }
    }

    pub fn decoding(&self) -> Decoding {
        match self.eval.decoding {
            DecodingKind::Greedy => Decoding::Greedy,
            DecodingKind::Sample => Decoding::Sample {
                seed: derive_seed(self.seed, "eval"),
            },
        }
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Sft => self.sft.dataset_size,
            Split::Rl => self.rl.dataset_size,
            Split::Eval => self.eval.size,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is parsed as a TOML value and falls back
/// to a bare string; the literal `none` removes the key (for optional fields).
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidConfig(format!("override `{item}` has an empty key")));
    }
    let raw = raw.trim();
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        cur = match cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(Error::InvalidConfig(format!("override `{item}`: `{k}` is not a section"))),
        };
    }
    if raw == "none" {
        cur.remove(*last);
        return Ok(());
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    cur.insert(last.to_string(), value);
    Ok(())
}
