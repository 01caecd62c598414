//! Declarative run configuration. Precedence is CLI flags over config
//! file over built-in defaults, and every benchmark run writes a resolved
//! snapshot of the values it actually used.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub tokenizer: TokenizerConfig,
    pub dataset: DatasetConfig,
    pub endpoints: EndpointsConfig,
    pub bench: BenchConfig,
    pub lora: LoraConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            tokenizer: TokenizerConfig::default(),
            dataset: DatasetConfig::default(),
            endpoints: EndpointsConfig::default(),
            bench: BenchConfig::default(),
            lora: LoraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub bundles_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub assets_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub num_operations: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            num_operations: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub chunk_len: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            chunk_len: 2048,
            train_fraction: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfigEntry {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for EndpointConfigEntry {
    fn default() -> Self {
        EndpointConfigEntry {
            endpoint: "http://localhost:8000".to_string(),
            model: "default".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointsConfig {
    /// Data-generation model for VIT examples.
    pub generator: EndpointConfigEntry,
    /// Model under evaluation.
    pub candidate: EndpointConfigEntry,
    /// Judge for short-answer grading.
    pub judge: EndpointConfigEntry,
}

impl Default for EndpointsConfig {
    fn default() -> Self {
        EndpointsConfig {
            generator: EndpointConfigEntry {
                temperature: 0.7,
                ..EndpointConfigEntry::default()
            },
            candidate: EndpointConfigEntry::default(),
            judge: EndpointConfigEntry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub trials: usize,
    pub max_in_flight: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 5,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub r: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            r: 16,
            alpha: 32.0,
            sigma: 0.02,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by the file when one is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))
            }
        }
    }

    /// Resolved snapshot of what this run used.
    pub fn write_snapshot(&self, path: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self).context("serializing config snapshot")?;
        std::fs::write(path, text)
            .with_context(|| format!("writing config snapshot {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_cited_values() {
        let config = RunConfig::default();
        assert_eq!(config.dataset.chunk_len, 2048);
        assert_eq!(config.dataset.train_fraction, 0.95);
        assert_eq!(config.bench.trials, 5);
        assert_eq!(config.lora.r, 16);
        assert_eq!(config.lora.alpha, 32.0);
        assert_eq!(config.endpoints.generator.temperature, 0.7);
        assert_eq!(config.endpoints.candidate.temperature, 0.0);
    }

    #[test]
    fn file_overrides_defaults_partially() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.toml");
        std::fs::write(&path, "[bench]\ntrials = 2\n").unwrap();
        let config = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(config.bench.trials, 2);
        assert_eq!(config.dataset.chunk_len, 2048);
    }

    #[test]
    fn unknown_keys_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.toml");
        std::fs::write(&path, "[bench]\ntrails = 2\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("snapshot.toml");
        let config = RunConfig::default();
        config.write_snapshot(&path).unwrap();
        assert_eq!(RunConfig::load(Some(&path)).unwrap(), config);
    }
}
