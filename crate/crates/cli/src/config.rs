//! Experiment configuration: a TOML file, layered over a preset, with
//! command-line overrides applied to the raw table before deserialization.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};
use wsadapt::student::Architecture;
use wsadapt::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Learning rates and clipping that converge in minutes on one core.
    #[default]
    Desk,
    /// Optimizer settings for long runs of a large network, no clipping.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Splits {
    pub train: String,
    pub val: String,
    pub test: String,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: "train".into(),
            val: "val".into(),
            test: "test".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Ground truth used every `sparse_gt`-th frame (1 = dense).
    pub sparse_gt: usize,
    /// `student`, `oracle`, `stay` or `teacher:<name>`.
    pub tracker: String,
    pub svg: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sparse_gt: 1,
            tracker: "student".into(),
            svg: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset root holding one directory per split.
    pub data: PathBuf,
    /// Domain preset name; also keys teacher skills.
    pub domain: String,
    /// Master seed. Drives training, initialization and teacher noise.
    pub seed: u64,
    pub out: PathBuf,
    pub preset: Preset,
    pub splits: Splits,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            data: PathBuf::from("data"),
            domain: "source".into(),
            seed: 0,
            out: PathBuf::from("runs"),
            preset,
            splits: Splits::default(),
            arch: Architecture::default(),
            train: match preset {
                Preset::Desk => TrainConfig::desk(),
                Preset::Full => TrainConfig::default(),
            },
            eval: EvalOptions::default(),
        }
    }

    /// Reads `path` (if any), applies `overrides` (dotted keys), and fills
    /// everything else from the chosen preset.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut raw = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .map_err(|e| config_err(format!("{}: {}", p.display(), one_line(&e))))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            set_path(&mut raw, key, value.clone())?;
        }
        let preset: Preset = match raw.get("preset") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| config_err(format!("preset: {}", one_line(&e))))?,
            None => Preset::Desk,
        };
        let mut merged =
            Table::try_from(Self::for_preset(preset)).map_err(|e| config_err(one_line(&e)))?;
        merge(&mut merged, raw);
        let mut cfg: Self = Value::Table(merged)
            .try_into()
            .map_err(|e| config_err(one_line(&e)))?;
        cfg.train.seed = cfg.seed;
        if cfg.train.domain.is_empty() {
            cfg.train.domain = cfg.domain.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        wsadapt::synthworld::DomainSpec::preset(&self.domain)?;
        self.train.validate()?;
        if self.eval.sparse_gt == 0 {
            return Err(config_err("eval.sparse_gt must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering; the hash is taken over this text.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Hash of everything that can change results; the output location
    /// is left out so identical runs in different directories agree.
    pub fn hash(&self) -> String {
        let keyed = Self {
            out: PathBuf::new(),
            ..self.clone()
        };
        short_hash(keyed.canonical().as_bytes())
    }

    /// `# config_hash=.. seed=..` line for CSV outputs.
    pub fn preamble(&self, command: &str) -> String {
        format!(
            "# config_hash={} seed={} command={command}\n",
            self.hash(),
            self.seed
        )
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn config_err(msg: String) -> anyhow::Error {
    CliError::new("config", msg).into()
}

fn one_line(e: &dyn std::fmt::Display) -> String {
    e.to_string()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses `key=value`; the value is read as TOML, falling back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    let v = v.trim();
    let value = format!("x = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("cannot set {key}: {p} is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
