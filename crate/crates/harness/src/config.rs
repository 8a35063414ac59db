//! Experiment configuration: a TOML tree with a default for every key.

use std::path::{Path, PathBuf};

use protoshape_core::completion::NetConfig;
use protoshape_core::losses::ObjectiveConfig;
use protoshape_core::pretext::{DifficultyWeight, PrototypeMode};
use protoshape_core::synth::DatasetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub components: usize,
    pub em_iterations: usize,
    pub mode: PrototypeMode,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            components: 4,
            em_iterations: 20,
            mode: PrototypeMode::WeightedMean,
        }
    }
}

/// Per-sample loss weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `w = 1` for every sample.
    None,
    /// Logistic weight of the cosine gap between complete and partial
    /// features.
    #[default]
    Cos,
    /// The same logistic curve applied to the Euclidean feature gap,
    /// divided by the category radius.
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Feed the soft prior into the SPF gates; `false` pins `u = 1`.
    pub use_prior: bool,
    pub sampling: Sampling,
    /// Views of each validation shape evaluated every epoch.
    pub val_views: usize,
    /// Distance threshold of the reported F-score.
    pub f_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
            use_prior: true,
            sampling: Sampling::Cos,
            val_views: 2,
            f_threshold: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub data: DatasetConfig,
    pub pretext: PretextConfig,
    pub prototype: PrototypeConfig,
    pub weighting: DifficultyWeight,
    pub network: NetConfig,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            data: DatasetConfig::default(),
            pretext: PretextConfig::default(),
            prototype: PrototypeConfig::default(),
            weighting: DifficultyWeight::default(),
            network: NetConfig::default(),
            objective: ObjectiveConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_of<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config serializes").as_bytes())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies the master seed to the corpus as well.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.data.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.network
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.pretext.latent_dim < 2 || self.pretext.batch_size == 0 {
            return bad("pretext needs latent_dim >= 2 and a positive batch size".into());
        }
        if self.prototype.components == 0 {
            return bad("prototype.components must be positive".into());
        }
        if self.train.batch_size == 0 || self.train.val_views == 0 || self.train.val_views > self.data.views {
            return bad("train needs a positive batch size and 1 <= val_views <= data.views".into());
        }
        if !(self.train.f_threshold > 0.0) {
            return bad("train.f_threshold must be positive".into());
        }
        if !(self.train.lr > 0.0 && self.pretext.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.network.n_sparse > self.data.n_complete {
            return bad("network.n_sparse exceeds the complete cloud size".into());
        }
        Ok(())
    }

    pub fn dataset(&self) -> DatasetConfig {
        self.data
    }

    /// Hash of the whole configuration.
    pub fn hash(&self) -> String {
        hash_of(self)
    }

    /// Hash of everything that determines the corpus and the extractor.
    pub fn pretext_hash(&self) -> String {
        hash_of(&(self.seed, &self.data, &self.pretext))
    }

    /// Extractor inputs plus the mixture settings.
    pub fn prototype_hash(&self) -> String {
        hash_of(&(self.pretext_hash(), &self.prototype))
    }

    /// Everything that determines a completion run; output paths excluded.
    pub fn train_hash(&self) -> String {
        hash_of(&(
            self.prototype_hash(),
            &self.weighting,
            &self.network,
            &self.objective,
            &self.train,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_the_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ExperimentConfig::default().with_seed(7);
        cfg.train.sampling = Sampling::L2;
        cfg.network.spf_levels = 1;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let e = ExperimentConfig::from_toml("[train]\nepoch = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml("[network]\ngrid_resolution = 12\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn stage_hashes_ignore_later_stages() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.lr = 5e-4;
        assert_eq!(a.pretext_hash(), b.pretext_hash());
        assert_eq!(a.prototype_hash(), b.prototype_hash());
        assert_ne!(a.train_hash(), b.train_hash());
        let mut c = a.clone();
        c.out_dir = "elsewhere".into();
        assert_eq!(a.train_hash(), c.train_hash());
    }

    #[test]
    fn sha256_reference_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
