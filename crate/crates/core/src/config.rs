//! The JSON run configuration shared by training, evaluation and the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::{DecoderKind, GeneratorConfig};
use crate::imaging::{DEFAULT_LR_SUFFIX, IMAGE_SIZE};
use crate::losses::{LossWeights, RANDOM_PYRAMID};
use crate::metrics::ColorSpace;

/// Learning rate forced by the `low_lr` ablation.
pub const LOW_LR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    LowLr,
    PlainDecoder,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "low_lr" => Ok(Ablation::LowLr),
            "plain_decoder" => Ok(Ablation::PlainDecoder),
            other => Err(Error::invalid(format!(
                "unknown ablation `{other}` (expected none, low_lr or plain_decoder)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_steps: u64,
    pub val_every: u64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Global-norm gradient clip for both networks; `null` disables it.
    pub grad_clip: Option<f64>,
    /// Training timesteps are drawn uniformly from `0..num_timesteps`.
    pub num_timesteps: u64,
    /// Registered name of the perceptual feature extractor.
    pub extractor: String,
    pub color_space: ColorSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: 1000,
            val_every: 100,
            seed: 0,
            ablation: Ablation::None,
            grad_clip: Some(1.0),
            num_timesteps: 1000,
            extractor: RANDOM_PYRAMID.to_string(),
            color_space: ColorSpace::Rgb,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.val_every == 0 || self.num_timesteps == 0 {
            return Err(Error::invalid(
                "batch_size, val_every and num_timesteps must be positive",
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::invalid("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Synthetic data drawn by [`crate::imaging::synth_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 16,
            val: 4,
        }
    }
}

/// Where training and validation pairs come from. Directories hold `hr/`
/// and `lr/` subdirectories; without them the synthetic source is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub image_size: usize,
    pub lr_suffix: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            val_dir: None,
            synth: SynthConfig::default(),
            image_size: IMAGE_SIZE,
            lr_suffix: DEFAULT_LR_SUFFIX.to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub losses: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Small networks on 32x32 synthetic images; runs on one CPU core.
    pub fn tiny() -> Self {
        Self {
            generator: GeneratorConfig::tiny(),
            discriminator: DiscriminatorConfig::tiny(),
            data: DataConfig {
                image_size: 32,
                ..DataConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Apply the ablation to the settings it overrides and validate.
    pub fn resolve(mut self) -> Result<Self> {
        match self.train.ablation {
            Ablation::None => {}
            Ablation::LowLr => self.train.learning_rate = LOW_LR,
            Ablation::PlainDecoder => self.generator.decoder = DecoderKind::Plain,
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.losses.validate()?;
        self.train.validate()?;
        let s = self.data.image_size;
        if s == 0 || !s.is_multiple_of(crate::generator::LATENT_STRIDE) {
            return Err(Error::invalid(format!(
                "image_size {s} must be a positive multiple of 8"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"learning_rate": 1e-4, "lr": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::tiny();
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn ablations_override_their_settings() {
        let mut c = RunConfig::tiny();
        c.train.ablation = Ablation::LowLr;
        assert_eq!(c.clone().resolve().unwrap().train.learning_rate, LOW_LR);
        c.train.ablation = Ablation::PlainDecoder;
        assert_eq!(c.resolve().unwrap().generator.decoder, DecoderKind::Plain);
        assert!("bogus".parse::<Ablation>().is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::tiny();
        c.train.learning_rate = 0.0;
        assert!(c.resolve().is_err());
    }
}
