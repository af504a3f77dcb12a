//! Flat run configuration shared by every subcommand.
//!
//! A single flat key-value namespace drives a whole run: training
//! hyperparameters, encoder shape, synthetic data settings, and evaluation
//! knobs. Values layer in a fixed order (built-in defaults, then a preset,
//! then a TOML file, then command line flags, then `--set` pairs), and the
//! fully resolved configuration is echoed into each output directory next
//! to its content hash so a run can always be reproduced from its artifacts
//! alone. Unknown keys are rejected rather than ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use deaps_core::model::EncoderConfig;
use deaps_core::trainer::{Method, TrainConfig};
use deaps_core::Error;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Objective and optimization.
    pub method: String,
    pub iterations: usize,
    pub batch_size: usize,
    pub window_size_s: u32,
    pub min_offset_s: u32,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub alpha: f64,
    pub n_selected: usize,
    pub temperature: f64,
    pub checkpoint_every: usize,
    pub dtype: String,

    // Encoder shape.
    pub input_len: usize,
    pub patch_len: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub head_hidden: usize,
    pub head_out: usize,

    // Synthetic data generation.
    pub subjects: usize,
    pub records: usize,
    pub duration_s: f64,

    // Evaluation.
    pub kfold_k: usize,
    pub embed_batch: usize,
    pub max_components: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_train(&TrainConfig::full(Method::Deaps))
    }
}

impl RunConfig {
    fn from_train(tc: &TrainConfig) -> Self {
        RunConfig {
            method: tc.method.to_string(),
            iterations: tc.iterations,
            batch_size: tc.batch_size,
            window_size_s: tc.window_size_s,
            min_offset_s: tc.min_offset_s,
            seed: tc.seed,
            lr: tc.lr,
            weight_decay: tc.weight_decay,
            tau: tc.tau,
            alpha: tc.alpha,
            n_selected: tc.n_selected,
            temperature: tc.temperature,
            checkpoint_every: tc.checkpoint_every,
            dtype: tc.dtype.to_string(),
            input_len: tc.encoder.input_len,
            patch_len: tc.encoder.patch_len,
            n_blocks: tc.encoder.n_blocks,
            n_heads: tc.encoder.n_heads,
            model_dim: tc.encoder.model_dim,
            head_hidden: tc.encoder.head_hidden,
            head_out: tc.encoder.head_out,
            subjects: 16,
            records: 2,
            duration_s: 300.0,
            kfold_k: 5,
            embed_batch: 64,
            max_components: 6,
        }
    }

    /// Named bundle of training settings used as the layering base.
    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "full" => Ok(Self::from_train(&TrainConfig::full(Method::Deaps))),
            "smoke" => Ok(Self::from_train(&TrainConfig::smoke(Method::Deaps))),
            other => Err(CliError::usage(format!(
                "unknown preset {other}; expected full or smoke"
            ))),
        }
    }

    /// The training view of the configuration. String fields are parsed
    /// here so a typo surfaces before any data is touched.
    pub fn train_config(&self) -> Result<TrainConfig, Error> {
        Ok(TrainConfig {
            method: self.method.parse()?,
            iterations: self.iterations,
            batch_size: self.batch_size,
            window_size_s: self.window_size_s,
            min_offset_s: self.min_offset_s,
            seed: self.seed,
            lr: self.lr,
            weight_decay: self.weight_decay,
            tau: self.tau,
            alpha: self.alpha,
            n_selected: self.n_selected,
            temperature: self.temperature,
            checkpoint_every: self.checkpoint_every,
            dtype: self.dtype.parse()?,
            encoder: EncoderConfig {
                input_len: self.input_len,
                patch_len: self.patch_len,
                n_blocks: self.n_blocks,
                n_heads: self.n_heads,
                model_dim: self.model_dim,
                head_hidden: self.head_hidden,
                head_out: self.head_out,
            },
        })
    }
}

/// Builds the effective configuration for one invocation.
///
/// `flags` carries the subcommand's explicit flag overrides as key-value
/// pairs; `sets` are raw `KEY=VALUE` strings applied last. All layers are
/// merged as TOML tables and the result is deserialized once, so unknown
/// keys and type mismatches are caught no matter which layer introduced
/// them.
pub fn layer(
    preset: Option<&str>,
    file: Option<&Path>,
    flags: &[(&str, toml::Value)],
    sets: &[String],
) -> Result<RunConfig, CliError> {
    let base = match preset {
        Some(name) => RunConfig::preset(name)?,
        None => RunConfig::default(),
    };
    let mut table = match toml::Value::try_from(&base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("a flat struct serializes to a table"),
    };

    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: toml::Table = text
            .parse()
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        for (k, v) in overrides {
            table.insert(k, v);
        }
    }

    for (key, value) in flags {
        table.insert(key.to_string(), value.clone());
    }

    for pair in sets {
        let (key, value) = parse_set(pair)?;
        table.insert(key, value);
    }

    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::usage(format!("invalid config: {e}")))
}

/// Parses one `KEY=VALUE` override. The value is read as a TOML literal;
/// bare words fall back to strings so `method=byol` works unquoted.
fn parse_set(pair: &str) -> Result<(String, toml::Value), CliError> {
    let Some((key, raw)) = pair.split_once('=') else {
        return Err(CliError::usage(format!(
            "--set expects KEY=VALUE, got {pair:?}"
        )));
    };
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || raw.is_empty() {
        return Err(CliError::usage(format!(
            "--set expects KEY=VALUE, got {pair:?}"
        )));
    }
    let doc = format!("v = {raw}");
    let quoted = format!("v = {raw:?}");
    let parsed: toml::Table = doc
        .parse()
        .or_else(|_| quoted.parse())
        .map_err(|e| CliError::usage(format!("--set {pair}: {e}")))?;
    Ok((key.to_string(), parsed["v"].clone()))
}

/// Writes `config.toml` and `config.sha256` into `dir`, returning the hex
/// digest. The digest covers the serialized file bytes, so recomputing the
/// hash of the echo reproduces it.
pub fn echo(dir: &Path, cfg: &RunConfig) -> Result<String, Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::config(format!("config serialization failed: {e}")))?;
    let digest = config_hash(&text);
    let toml_path = dir.join("config.toml");
    fs::write(&toml_path, &text).map_err(|e| Error::io(&toml_path, e))?;
    let sha_path = dir.join("config.sha256");
    fs::write(&sha_path, format!("{digest}  config.toml\n")).map_err(|e| Error::io(&sha_path, e))?;
    Ok(digest)
}

/// Hex SHA-256 of the serialized configuration text.
pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in out {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}
