//! The dual-branch super-resolution generator.
//!
//! `forward` composes: hierarchical encoder → {deterministic transformer
//! branch, noise-injected transformer branch} → 1x1 fusion → {main RRDB
//! decoder, auxiliary RRDB decoder} and a projection head per branch.

mod blocks;
mod branch;
mod config;
mod decoder;

use rand::Rng;

pub use blocks::{DenseBlock, ResidualBlock, Rrdb, LEAKY_SLOPE, RESIDUAL_OUT_GAIN, RRDB_RESIDUAL_SCALE};
pub use branch::{inject_noise, sample_noise, TransformerUNet};
pub use config::{DecoderKind, GeneratorConfig};
pub use decoder::{global_avg_pool, ProjectionHead, SrDecoder, UPSAMPLE_STAGES};

use crate::error::{Error, Result};
use crate::nn::{time_embedding, Bound, Conv2d, ConvSpec, ParamLayout, ParamSet, Scalar, TimestepEmbedding, Var};

/// Spatial reduction between image and latent grid.
pub const LATENT_STRIDE: usize = 8;

/// One `conv(k4, s2, p1) → ReLU → residual block` encoder stage.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub down: Conv2d,
    pub refine: ResidualBlock,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<EncoderStage>,
}

impl Encoder {
    fn new(layout: &mut ParamLayout, channels: [usize; 3], residual_scale: f64) -> Self {
        let mut in_ch = 3;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let stage = EncoderStage {
                    down: Conv2d::new(layout, &format!("enc.f{}", i + 1), ConvSpec::new(in_ch, out, 4, 2, 1)),
                    refine: ResidualBlock::new(layout, &format!("enc.rb{}", i + 1), out, residual_scale),
                };
                in_ch = out;
                stage
            })
            .collect();
        Self { stages }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        check_image(x)?;
        let mut h = x.clone();
        for s in &self.stages {
            h = s.down.forward(p, &h)?.relu();
            h = s.refine.forward(p, &h)?;
        }
        Ok(h)
    }
}

/// Reject anything that is not a `(B, 3, H, W)` batch with `H`, `W`
/// divisible by the latent stride.
pub fn check_image<T: Scalar>(x: &Var<T>) -> Result<()> {
    let (_, c, h, w) = x.value().dims4()?;
    if c != 3 {
        return Err(Error::invalid(format!("expected 3 image channels, got {c}")));
    }
    if h % LATENT_STRIDE != 0 || w % LATENT_STRIDE != 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "image size {h}x{w} is not divisible by {LATENT_STRIDE}"
        )));
    }
    Ok(())
}

/// `(sr_final, sr_aux, v_denoised, v_noise, z_denoised, z_noise)`.
#[derive(Clone)]
pub struct GeneratorOutput<T> {
    pub sr_final: Var<T>,
    pub sr_aux: Var<T>,
    pub v_denoised: Var<T>,
    pub v_noise: Var<T>,
    pub z_denoised: Var<T>,
    pub z_noise: Var<T>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub layout: ParamLayout,
    pub encoder: Encoder,
    pub main: TransformerUNet,
    pub noise: TransformerUNet,
    pub fusion: Conv2d,
    pub decoder_main: SrDecoder,
    pub decoder_aux: SrDecoder,
    pub proj_main: ProjectionHead,
    pub proj_noise: ProjectionHead,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let c = config.latent_channels;
        let mut layout = ParamLayout::new();
        let encoder = Encoder::new(&mut layout, config.encoder_channels, config.residual_scale);
        let main = TransformerUNet::new(
            &mut layout,
            "main",
            c,
            config.main_tx_layers,
            config.main_tx_heads,
            config.max_latent_size,
            false,
        )?;
        let noise = TransformerUNet::new(
            &mut layout,
            "noise",
            c,
            config.noise_tx_layers,
            config.noise_tx_heads,
            config.max_latent_size,
            true,
        )?;
        let fusion = Conv2d::new(&mut layout, "fuse", ConvSpec::new(2 * c, c, 1, 1, 0));
        let decoder_main = SrDecoder::new(
            &mut layout,
            "dec_main",
            c,
            config.decoder_channels,
            config.rrdb_main_per_stage,
            config.rrdb_growth,
            config.decoder,
        );
        let decoder_aux = SrDecoder::new(
            &mut layout,
            "dec_aux",
            c,
            config.decoder_channels,
            config.rrdb_aux_per_stage,
            config.rrdb_growth,
            config.decoder,
        );
        let proj_main = ProjectionHead::new(&mut layout, "proj_main", c, config.proj_dim);
        let proj_noise = ProjectionHead::new(&mut layout, "proj_noise", c, config.proj_dim);
        Ok(Self {
            config,
            layout,
            encoder,
            main,
            noise,
            fusion,
            decoder_main,
            decoder_aux,
            proj_main,
            proj_noise,
        })
    }

    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamSet<T> {
        self.layout.init(rng)
    }

    pub fn embedding(&self, t: f64) -> Result<TimestepEmbedding> {
        time_embedding(t, self.config.latent_channels)
    }

    pub fn encode<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        self.encoder.forward(p, x)
    }

    pub fn main_branch<T: Scalar>(&self, p: &Bound<T>, z: &Var<T>, e_t: &TimestepEmbedding) -> Result<Var<T>> {
        self.main.forward(p, z, e_t)
    }

    pub fn noise_branch<T: Scalar, R: Rng>(
        &self,
        p: &Bound<T>,
        z: &Var<T>,
        e_t: &TimestepEmbedding,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Var<T>> {
        let z_noisy = inject_noise(z, sigma, rng)?;
        self.noise.forward(p, &z_noisy, e_t)
    }

    /// `conv1x1(concat(z_denoised, z_noise))`.
    pub fn fuse<T: Scalar>(&self, p: &Bound<T>, z_denoised: &Var<T>, z_noise: &Var<T>) -> Result<Var<T>> {
        if z_denoised.shape() != z_noise.shape() {
            return Err(Error::shape("fuse", z_denoised.shape(), z_noise.shape()));
        }
        self.fusion
            .forward(p, &Var::cat(&[z_denoised.clone(), z_noise.clone()], 1)?)
    }

    pub fn decode_main<T: Scalar>(&self, p: &Bound<T>, z_fused: &Var<T>) -> Result<Var<T>> {
        self.decoder_main.forward(p, z_fused)
    }

    pub fn decode_aux<T: Scalar>(&self, p: &Bound<T>, z_noise: &Var<T>) -> Result<Var<T>> {
        self.decoder_aux.forward(p, z_noise)
    }

    fn check_latent_grid<T: Scalar>(&self, x: &Var<T>) -> Result<()> {
        let (_, _, h, w) = x.value().dims4()?;
        let side = h.max(w) / LATENT_STRIDE;
        if side > self.config.max_latent_size {
            return Err(Error::invalid(format!(
                "image {h}x{w} needs a {side}-wide latent grid; max_latent_size is {}",
                self.config.max_latent_size
            )));
        }
        Ok(())
    }

    pub fn forward<T: Scalar, R: Rng>(
        &self,
        p: &Bound<T>,
        x_lr: &Var<T>,
        t: f64,
        sigma: f64,
        rng: &mut R,
    ) -> Result<GeneratorOutput<T>> {
        check_image(x_lr)?;
        self.check_latent_grid(x_lr)?;
        let e_t = self.embedding(t)?;
        let z = self.encode(p, x_lr)?;
        let z_denoised = self.main_branch(p, &z, &e_t)?;
        let z_noise = self.noise_branch(p, &z, &e_t, sigma, rng)?;
        let z_fused = self.fuse(p, &z_denoised, &z_noise)?;
        let sr_final = self.decode_main(p, &z_fused)?;
        let sr_aux = self.decode_aux(p, &z_noise)?;
        let v_denoised = self.proj_main.forward(p, &z_denoised)?;
        let v_noise = self.proj_noise.forward(p, &z_noise)?;
        Ok(GeneratorOutput {
            sr_final,
            sr_aux,
            v_denoised,
            v_noise,
            z_denoised,
            z_noise,
        })
    }

    /// Contrastive target: `project_main(main_branch(encode(hr), e_t))`.
    /// Callers bind parameters as constants so no gradient reaches them.
    pub fn target_projection<T: Scalar>(&self, p: &Bound<T>, hr: &Var<T>, t: f64) -> Result<Var<T>> {
        check_image(hr)?;
        self.check_latent_grid(hr)?;
        let e_t = self.embedding(t)?;
        let z = self.encode(p, hr)?;
        let z = self.main_branch(p, &z, &e_t)?;
        self.proj_main.forward(p, &z)
    }
}
