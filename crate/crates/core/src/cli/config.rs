use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sha256_hex, AugmentConfig, CompressionConfig};
use crate::model::Architecture;
use crate::splits::SplitConfig;
use crate::synth::SynthConfig;
use crate::training::{AttributeSubset, BenchmarkConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub architectures: Vec<Architecture>,
    pub subsets: Vec<AttributeSubset>,
    pub subset_architecture: Architecture,
    /// Augment each fold's training side with the `[augment]` settings.
    pub augment: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        BenchmarkSection {
            architectures: b.architectures,
            subsets: b.subsets,
            subset_architecture: b.subset_architecture,
            augment: false,
        }
    }
}

/// Every tunable of a run. File paths are command-line only and never part
/// of the config or its hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for split selection.
    pub seed: u64,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub split: SplitConfig,
    pub compression: CompressionConfig,
    pub synth: SynthConfig,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Overrides every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.augment.seed = seed;
        self.synth.seed = seed;
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            train: self.train.clone(),
            augment: self.benchmark.augment.then_some(self.augment),
            architectures: self.benchmark.architectures.clone(),
            subsets: self.benchmark.subsets.clone(),
            subset_architecture: self.benchmark.subset_architecture,
        }
    }
}
