//! TOML run configuration for the `train` and `toy-matrix` commands.
//!
//! ```toml
//! [data]
//! dataset = 2
//! test_domain = 3
//!
//! [train]
//! steps = 2000
//! lr = 0.01
//!
//! [weights]
//! v_a1 = 0.1
//!
//! [variant]
//! use_psi = true
//!
//! [output]
//! dir = "runs/data2"
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::DEFAULT_RIDGE;
use crate::losses::{LossWeights, VariantFlags};
use crate::model::OptimizerKind;
use crate::synth::{NoiseMode, SynthSpec};
use crate::trainer::{OptimizerConfig, OracleConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dataset: u8,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub test_domain: u8,
    pub noise: NoiseMode,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            dataset: s.dataset_id,
            seed: s.seed,
            n_train: s.n_train,
            n_val: s.n_val,
            n_test: s.n_test,
            test_domain: 3,
            noise: s.noise,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            dataset_id: self.dataset,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            seed: self.seed,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: usize,
    pub dz: usize,
    pub layers: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub ridge: f64,
    pub oracle_pretrain_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: t.hidden,
            dz: t.dz,
            layers: t.layers,
            optimizer: t.optimizer.kind,
            lr: t.optimizer.lr,
            clip_norm: t.optimizer.clip_norm.unwrap_or(0.0),
            steps: t.steps,
            batch_size: t.batch_size,
            eval_interval: t.eval_interval,
            seed: t.seed,
            ridge: DEFAULT_RIDGE,
            oracle_pretrain_steps: t.oracle.pretrain_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub train: TrainSection,
    pub weights: LossWeights,
    pub variant: VariantFlags,
    pub output: OutputSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {}", e.message())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            hidden: t.hidden,
            dz: t.dz,
            layers: t.layers,
            optimizer: OptimizerConfig {
                kind: t.optimizer,
                lr: t.lr,
                clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
            },
            steps: t.steps,
            batch_size: t.batch_size,
            eval_interval: t.eval_interval,
            seed: t.seed,
            ridge: t.ridge,
            weights: self.weights,
            variant: self.variant,
            oracle: OracleConfig {
                pretrain_steps: t.oracle_pretrain_steps,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.spec().validate()?;
        if !(1..=3).contains(&self.data.test_domain) {
            return Err(Error::InvalidArgument(format!(
                "data.test_domain must be 1..=3, got {}",
                self.data.test_domain
            )));
        }
        if !(self.train.clip_norm >= 0.0 && self.train.clip_norm.is_finite()) {
            return Err(Error::InvalidArgument("train.clip_norm must be >= 0".into()));
        }
        self.train_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.train_config(), TrainConfig::default());
    }

    #[test]
    fn partial_sections_override() {
        let c = Config::from_toml("[data]\ndataset = 4\n[weights]\nv_r2 = 0.0\n[variant]\ncfs_norm = \"spectral\"\n").unwrap();
        assert_eq!(c.data.dataset, 4);
        assert_eq!(c.weights.v_r2, 0.0);
        assert_eq!(c.weights.v_a1, LossWeights::TOY.v_a1);
        assert_eq!(c.variant.cfs_norm, crate::losses::CfsNorm::Spectral);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = Config::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = Config::from_toml("[bogus]\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[data]\ndataset = 5\n").is_err());
        assert!(Config::from_toml("[data]\ntest_domain = 0\n").is_err());
        assert!(Config::from_toml("[train]\nsteps = 0\n").is_err());
        assert!(Config::from_toml("[train]\nlr = -1.0\n").is_err());
    }
}
