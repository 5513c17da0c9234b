use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder body used by both SR decoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// RRDB groups before every upsampling stage.
    Rrdb,
    /// One plain conv + LeakyReLU in place of each RRDB group.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub latent_channels: usize,
    pub encoder_channels: [usize; 3],
    pub main_tx_layers: usize,
    pub main_tx_heads: usize,
    pub noise_tx_layers: usize,
    pub noise_tx_heads: usize,
    pub rrdb_main_per_stage: usize,
    pub rrdb_aux_per_stage: usize,
    pub rrdb_growth: usize,
    /// Feature width inside both decoders.
    pub decoder_channels: usize,
    pub proj_dim: usize,
    /// Standard deviation of the latent noise injected by the noise branch.
    pub sigma: f64,
    pub residual_scale: f64,
    /// Largest latent grid side covered by the learned positional table.
    pub max_latent_size: usize,
    pub decoder: DecoderKind,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_channels: 256,
            encoder_channels: [64, 128, 256],
            main_tx_layers: 4,
            main_tx_heads: 8,
            noise_tx_layers: 2,
            noise_tx_heads: 4,
            rrdb_main_per_stage: 8,
            rrdb_aux_per_stage: 4,
            rrdb_growth: 32,
            decoder_channels: 64,
            proj_dim: 128,
            sigma: 0.1,
            residual_scale: 0.2,
            max_latent_size: 16,
            decoder: DecoderKind::Rrdb,
        }
    }
}

impl GeneratorConfig {
    /// Desk-scale configuration used by the overfit and ablation runs.
    pub fn tiny() -> Self {
        Self {
            latent_channels: 64,
            encoder_channels: [32, 64, 64],
            main_tx_layers: 1,
            main_tx_heads: 4,
            noise_tx_layers: 1,
            noise_tx_heads: 2,
            rrdb_main_per_stage: 2,
            rrdb_aux_per_stage: 1,
            rrdb_growth: 16,
            decoder_channels: 32,
            proj_dim: 32,
            ..Self::default()
        }
    }

    /// Smallest sensible network; used for double-precision gradient checks.
    pub fn micro() -> Self {
        Self {
            latent_channels: 8,
            encoder_channels: [4, 8, 8],
            main_tx_layers: 1,
            main_tx_heads: 2,
            noise_tx_layers: 1,
            noise_tx_heads: 2,
            rrdb_main_per_stage: 1,
            rrdb_aux_per_stage: 1,
            rrdb_growth: 4,
            decoder_channels: 4,
            proj_dim: 4,
            max_latent_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.latent_channels;
        if c == 0 || !c.is_multiple_of(2) {
            return Err(Error::invalid(format!("latent_channels must be even, got {c}")));
        }
        if self.encoder_channels[2] != c {
            return Err(Error::invalid(format!(
                "last encoder stage has {} channels but latent_channels is {c}",
                self.encoder_channels[2]
            )));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::invalid("encoder channels must be positive"));
        }
        for (heads, which) in [(self.main_tx_heads, "main"), (self.noise_tx_heads, "noise")] {
            if heads == 0 || !c.is_multiple_of(heads) {
                return Err(Error::invalid(format!(
                    "{which} branch: {c} channels not divisible by {heads} heads"
                )));
            }
        }
        if self.rrdb_growth == 0 || self.decoder_channels == 0 || self.proj_dim == 0 || self.max_latent_size == 0 {
            return Err(Error::invalid(
                "growth, decoder width, proj_dim and max_latent_size must be positive",
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.residual_scale != 0.2 {
            return Err(Error::invalid(format!(
                "residual_scale is fixed at 0.2, got {}",
                self.residual_scale
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        GeneratorConfig::default().validate().unwrap();
        GeneratorConfig::tiny().validate().unwrap();
        GeneratorConfig::micro().validate().unwrap();
    }

    #[test]
    fn faithful_defaults() {
        let c = GeneratorConfig::default();
        assert_eq!(c.encoder_channels, [64, 128, 256]);
        assert_eq!((c.rrdb_main_per_stage, c.rrdb_aux_per_stage), (8, 4));
        assert_eq!(c.residual_scale, 0.2);
    }

    #[test]
    fn rejects_bad_values() {
        let base = GeneratorConfig::default();
        for bad in [
            GeneratorConfig {
                sigma: -0.1,
                ..base.clone()
            },
            GeneratorConfig {
                residual_scale: 0.3,
                ..base.clone()
            },
            GeneratorConfig {
                main_tx_heads: 7,
                ..base.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<GeneratorConfig>(r#"{"latent_chanels": 3}"#);
        assert!(err.is_err());
        let c: GeneratorConfig = serde_json::from_str(r#"{"sigma": 0.0}"#).unwrap();
        assert_eq!(c.latent_channels, 256);
    }
}
