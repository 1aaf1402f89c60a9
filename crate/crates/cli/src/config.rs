//! Experiment configuration file. TOML, one table per stage:
//!
//! ```toml
//! format_version = 1
//! label = "sym60-corr40"
//! out_dir = "runs/sym60-corr40"
//! dataset_dir = "data/sym60-corr40"
//!
//! [generator]
//! class_separation = 4.0
//!
//! [noise]
//! label_mode = "symmetric"
//! label_rate = 0.6
//! correspondence_rate = 0.4
//!
//! [train]
//! epochs = 40
//! ```
//!
//! Every key is optional; missing keys take the library defaults. Unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ntml_core::trainer::TrainConfig;
use ntml_core::{GeneratorConfig, NoiseConfig};
use serde::{Deserialize, Serialize};

/// Version of the configuration file layout.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub label: String,
    pub out_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format_version: CONFIG_VERSION,
            label: "run".into(),
            out_dir: "runs/run".into(),
            dataset_dir: "data".into(),
            generator: GeneratorConfig::default(),
            noise: NoiseConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// A parsed config along with the exact text it came from.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub text: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        if cfg.format_version != CONFIG_VERSION {
            bail!(
                "config format_version {} is not supported (expected {CONFIG_VERSION})",
                cfg.format_version
            );
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Loaded> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Loaded { config, text })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.noise.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.gamma.final_ = 0.9;
        cfg.noise.label_rate = 0.4;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\nepoch = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("format_version = 2\n").is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        for text in [
            include_str!("../../../configs/noisy.toml"),
            include_str!("../../../configs/clean.toml"),
            include_str!("../../../configs/quick.toml"),
        ] {
            ExperimentConfig::from_toml(text).unwrap().validate().unwrap();
        }
        let noisy = ExperimentConfig::from_toml(include_str!("../../../configs/noisy.toml")).unwrap();
        let defaults = ExperimentConfig::default();
        assert_eq!(noisy.generator, defaults.generator);
        assert_eq!(noisy.train, defaults.train);
    }

    #[test]
    fn nested_keys_parse() {
        let cfg = ExperimentConfig::from_toml(
            "[noise]\nlabel_mode = \"asymmetric\"\nlabel_rate = 0.2\n[train.gamma]\nfinal = 1.0\n",
        )
        .unwrap();
        assert_eq!(cfg.noise.label_rate, 0.2);
        assert_eq!(cfg.train.gamma.final_, 1.0);
    }
}
