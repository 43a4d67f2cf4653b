use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::hatch::HatchSynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthdata::SynthConfig;

/// Settings of one experiment, read from TOML. Relative paths are resolved
/// against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Replaces the dropout rate of the model section.
    pub dropout: f64,
    /// Frames per training window (`m`).
    pub window: usize,
    /// Half-width of the temporal averaging filter (`k`).
    pub half_window: usize,
    pub stride: usize,
    /// Share of power-velocity combinations used for training.
    pub split_fraction: f64,
    /// Share of the training combinations seen while fine-tuning.
    pub finetune_fraction: f64,
    /// Upper bound on windows drawn per track and epoch; all when absent.
    pub max_windows_per_track: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub hatch_manifest: Option<PathBuf>,
    pub sweep: SweepConfig,
    pub synth: SynthConfig,
    /// Multi-hatch cases written next to the grid dataset by `generate`.
    pub hatch: Option<HatchSynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lengths: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Runs per setting, seeded `seed, seed + 1, ...`.
    pub replicates: usize,
    /// Epochs spent fine-tuning in the fraction sweep.
    pub finetune_epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1, 10, 20, 30, 40, 50],
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            replicates: 1,
            finetune_epochs: 10,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            epochs: 50,
            learning_rate: 1e-4,
            batch_size: 12,
            weight_decay: 1e-3,
            dropout: 0.1,
            window: 50,
            half_window: 2,
            stride: 1,
            split_fraction: 0.75,
            finetune_fraction: 1.0,
            max_windows_per_track: None,
            manifest: None,
            pretrained: None,
            checkpoint: None,
            hatch_manifest: None,
            sweep: SweepConfig::default(),
            synth: SynthConfig::default(),
            hatch: None,
        }
    }
}

fn fraction_ok(f: f64) -> bool {
    f > 0.0 && f <= 1.0
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.window == 0 || self.stride == 0 {
            return Err(Error::validation("batch size, window and stride must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::validation("learning rate and weight decay must be non-negative"));
        }
        if !fraction_ok(self.split_fraction) || !fraction_ok(self.finetune_fraction) {
            return Err(Error::validation("fractions must lie in (0, 1]"));
        }
        if self.sweep.fractions.iter().any(|&f| !fraction_ok(f)) {
            return Err(Error::validation("sweep fractions must lie in (0, 1]"));
        }
        if self.sweep.lengths.contains(&0) || self.sweep.replicates == 0 {
            return Err(Error::validation("sweep lengths and replicates must be at least 1"));
        }
        if self.max_windows_per_track == Some(0) {
            return Err(Error::validation("max_windows_per_track must be at least 1"));
        }
        Ok(())
    }

    /// Model section with the experiment's dropout rate applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        match &mut m {
            ModelConfig::Temporal(c) => c.dropout = self.dropout,
            ModelConfig::Vit(c) => c.dropout = self.dropout,
            ModelConfig::Unet(_) => {}
        }
        m
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("missing `{what}` path in the configuration")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_toml() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 12);
        assert_eq!(c.weight_decay, 1e-3);
        assert_eq!(c.epochs, 50);
        assert_eq!((c.window, c.half_window), (50, 2));
        assert_eq!(c.split_fraction, 0.75);
    }

    #[test]
    fn nested_model_and_validation() {
        let c = ExperimentConfig::from_toml_str(
            "dropout = 0.2\n[model]\narchitecture = \"temporal\"\ntoken_dim = 64\npos_dim = 16\n",
        )
        .unwrap();
        match c.model_config() {
            ModelConfig::Temporal(t) => assert_eq!((t.token_dim, t.dropout), (64, 0.2)),
            _ => panic!("wrong architecture"),
        }
        assert!(ExperimentConfig::from_toml_str("split_fraction = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("epochs = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown = 1").is_err());
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }
}
