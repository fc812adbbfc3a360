//! Experiment configuration: TOML file plus flag overrides, fully validated
//! before any work starts. The effective (resolved) config is echoed into
//! every run directory together with its provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ullm_core::decoding::DecodingConfig;
use ullm_core::model::ModelConfig;
use ullm_core::training::{config_hash, FinetuneConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub mode: ullm_core::corpus::TokenizeMode,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// Fixed training-block length L.
    pub block_len: usize,
    /// Existing vocabulary file; omitted = build from the train split.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
}

fn default_min_count() -> usize {
    1
}

/// Model section; `vocab_size` may be omitted to derive it from the built
/// vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelSection {
    pub fn resolve(&self, vocab_size: usize) -> Result<ModelConfig, CliError> {
        if let Some(declared) = self.vocab_size {
            if declared != vocab_size {
                return Err(CliError::Config(format!(
                    "model.vocab_size {declared} does not match vocabulary size {vocab_size}"
                )));
            }
        }
        let config = ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ffn: self.d_ffn,
            vocab_size,
            max_len: self.max_len,
            seed: self.seed,
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub prefix_len: usize,
    pub continuation_len: usize,
    #[serde(default = "default_rep_window")]
    pub rep_window: usize,
    #[serde(default = "default_seq_rep_ns")]
    pub seq_rep_ns: Vec<u32>,
    #[serde(default = "default_decoding")]
    pub decoding: Vec<DecodingConfig>,
}

fn default_rep_window() -> usize {
    128
}

fn default_seq_rep_ns() -> Vec<u32> {
    vec![4]
}

fn default_decoding() -> Vec<DecodingConfig> {
    vec![DecodingConfig {
        strategy: ullm_core::decoding::DecodeStrategy::Greedy,
        max_new_tokens: 30,
        seed: 0,
    }]
}

/// Where the effective config came from; output-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_path: String,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub finetune: Option<FinetuneConfig>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_deserializing)]
    pub provenance: Option<Provenance>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::Missing(format!("config file {}: {e}", path.display()))
        })?;
        let mut config: ExperimentConfig =
            toml::from_str(&raw).map_err(|e| CliError::Config(format!("config: {e}")))?;
        config.provenance =
            Some(Provenance { config_path: path.display().to_string(), overrides: Vec::new() });
        Ok(config)
    }

    pub fn note_override(&mut self, name: &str, value: impl std::fmt::Display) {
        if let Some(p) = &mut self.provenance {
            p.overrides.push(format!("{name}={value}"));
        }
    }

    /// Hash of everything that affects results (provenance excluded).
    pub fn result_hash(&self) -> String {
        config_hash(&(&self.corpus, &self.model, &self.train, &self.finetune, &self.eval))
    }

    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn train_section(&self) -> Result<&TrainConfig, CliError> {
        self.train.as_ref().ok_or_else(|| CliError::Config("missing [train] section".into()))
    }

    pub fn finetune_section(&self) -> Result<&FinetuneConfig, CliError> {
        self.finetune
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [finetune] section".into()))
    }

    pub fn eval_section(&self) -> Result<&EvalSection, CliError> {
        self.eval.as_ref().ok_or_else(|| CliError::Config("missing [eval] section".into()))
    }
}

/// Run directory name: config hash plus the optional run tag.
pub fn run_dir(out_dir: &Path, hash: &str, run_tag: Option<&str>) -> PathBuf {
    match run_tag {
        Some(tag) => out_dir.join(format!("{hash}-{tag}")),
        None => out_dir.join(hash),
    }
}
