//! Generator and discriminator objectives.
//!
//! Every term is a pure function of graph values returning a scalar
//! [`Var`]; L1 and L2 terms use mean reduction throughout.

mod extractor;

use serde::{Deserialize, Serialize};

pub use extractor::{
    Extractor, ExtractorRegistry, PyramidStage, IDENTITY, PYRAMID_CHANNELS, PYRAMID_SEED, RANDOM_PYRAMID,
};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor, Var};

/// Floor on `|a| |b|` in the cosine term.
pub const COSINE_EPS: f64 = 1e-8;
/// Added under the square root of Sobel gradient magnitudes.
pub const EDGE_EPS: f64 = 1e-6;
/// Added under the square root when unit-normalizing feature channels.
pub const FEATURE_NORM_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_pixel: f64,
    pub lambda_aux: f64,
    pub lambda_lr: f64,
    pub lambda_contrastive: f64,
    pub lambda_perceptual: f64,
    pub lambda_vgg: f64,
    pub lambda_edge: f64,
    pub lambda_latent: f64,
    pub lambda_branch: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 0.005,
            lambda_pixel: 1.0,
            lambda_aux: 0.5,
            lambda_lr: 0.5,
            lambda_contrastive: 0.1,
            lambda_perceptual: 1.0,
            lambda_vgg: 0.1,
            lambda_edge: 0.1,
            lambda_latent: 0.01,
            lambda_branch: 0.1,
        }
    }
}

impl LossWeights {
    /// Every weight zero except `lambda_pixel` (and `lambda_aux`, which
    /// lives inside the pixel term).
    pub fn pixel_only() -> Self {
        Self {
            lambda_adv: 0.0,
            lambda_lr: 0.0,
            lambda_contrastive: 0.0,
            lambda_perceptual: 0.0,
            lambda_edge: 0.0,
            lambda_latent: 0.0,
            lambda_branch: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_adv,
            self.lambda_pixel,
            self.lambda_aux,
            self.lambda_lr,
            self.lambda_contrastive,
            self.lambda_perceptual,
            self.lambda_vgg,
            self.lambda_edge,
            self.lambda_latent,
            self.lambda_branch,
        ];
        if all.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// The eight coefficients of the unified objective, in term order.
    pub fn term_weights(&self) -> [f64; 8] {
        [
            self.lambda_adv,
            self.lambda_pixel,
            self.lambda_lr,
            self.lambda_contrastive,
            self.lambda_perceptual,
            self.lambda_edge,
            self.lambda_latent,
            self.lambda_branch,
        ]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_adv: self.lambda_adv * k,
            lambda_pixel: self.lambda_pixel * k,
            lambda_aux: self.lambda_aux * k,
            lambda_lr: self.lambda_lr * k,
            lambda_contrastive: self.lambda_contrastive * k,
            lambda_perceptual: self.lambda_perceptual * k,
            lambda_vgg: self.lambda_vgg * k,
            lambda_edge: self.lambda_edge * k,
            lambda_latent: self.lambda_latent * k,
            lambda_branch: self.lambda_branch * k,
        }
    }
}

/// Values of the eight generator terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub adv: f64,
    pub pixel: f64,
    pub lr_consistency: f64,
    pub contrastive: f64,
    pub perceptual: f64,
    pub edge: f64,
    pub latent: f64,
    pub branch: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 8] = [
        "adv",
        "pixel",
        "lr_consistency",
        "contrastive",
        "perceptual",
        "edge",
        "latent",
        "branch",
    ];

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.adv,
            self.pixel,
            self.lr_consistency,
            self.contrastive,
            self.perceptual,
            self.edge,
            self.latent,
            self.branch,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        let [adv, pixel, lr_consistency, contrastive, perceptual, edge, latent, branch] = v;
        Self {
            adv,
            pixel,
            lr_consistency,
            contrastive,
            perceptual,
            edge,
            latent,
            branch,
        }
    }

    pub fn splat(v: f64) -> Self {
        Self {
            adv: v,
            pixel: v,
            lr_consistency: v,
            contrastive: v,
            perceptual: v,
            edge: v,
            latent: v,
            branch: v,
        }
    }
}

/// Named term values plus their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
}

/// `sum_k lambda_k * L_k` over the eight generator terms.
pub fn generator_total(terms: &LossTerms, weights: &LossWeights) -> LossReport {
    let total = terms
        .as_array()
        .iter()
        .zip(weights.term_weights())
        .map(|(l, w)| l * w)
        .sum();
    LossReport { terms: *terms, total }
}

fn scalar_of<T: Scalar>(v: &Var<T>) -> f64 {
    v.value().data()[0].as_f64()
}

/// Differentiable loss terms of one generator step.
pub struct GeneratorLoss<T> {
    pub terms: [Var<T>; 8],
    pub total: Var<T>,
}

impl<T: Scalar> GeneratorLoss<T> {
    /// Weight and sum the eight differentiable terms (order of
    /// [`LossTerms::NAMES`]).
    pub fn combine(terms: [Var<T>; 8], weights: &LossWeights) -> Result<Self> {
        let mut total: Option<Var<T>> = None;
        for (t, w) in terms.iter().zip(weights.term_weights()) {
            let part = t.scale(w);
            total = Some(match total {
                None => part,
                Some(acc) => acc.add(&part)?,
            });
        }
        Ok(Self {
            total: total.expect("eight terms"),
            terms,
        })
    }

    pub fn report(&self) -> LossReport {
        let v: Vec<f64> = self.terms.iter().map(scalar_of).collect();
        LossReport {
            terms: LossTerms {
                adv: v[0],
                pixel: v[1],
                lr_consistency: v[2],
                contrastive: v[3],
                perceptual: v[4],
                edge: v[5],
                latent: v[6],
                branch: v[7],
            },
            total: scalar_of(&self.total),
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms
            .iter()
            .zip(LossTerms::NAMES)
            .find(|(t, _)| !scalar_of(*t).is_finite())
            .map(|(_, n)| n)
            .or_else(|| (!scalar_of(&self.total).is_finite()).then_some("total"))
    }
}

/// Mean binary cross-entropy of logits against a constant target label.
pub fn bce_with_logits<T: Scalar>(logits: &Var<T>, target_is_real: bool) -> Var<T> {
    // -log(sigmoid(x)) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    if target_is_real {
        logits.neg().softplus().mean_all()
    } else {
        logits.softplus().mean_all()
    }
}

/// Generator adversarial term: fakes labelled real.
pub fn adv_loss_g<T: Scalar>(logits_fake: &Var<T>) -> Var<T> {
    bce_with_logits(logits_fake, true)
}

/// `(BCE(real, 1) + BCE(fake, 0)) / 2`.
pub fn discriminator_loss<T: Scalar>(logits_real: &Var<T>, logits_fake: &Var<T>) -> Result<Var<T>> {
    Ok(bce_with_logits(logits_real, true)
        .add(&bce_with_logits(logits_fake, false))?
        .scale(0.5))
}

pub fn l1<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    Ok(a.sub(b)?.abs().mean_all())
}

pub fn mse<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    Ok(a.sub(b)?.square().mean_all())
}

/// `L1(sr_final, hr) + lambda_aux * L1(sr_aux, hr)`.
pub fn pixel_loss<T: Scalar>(sr_final: &Var<T>, sr_aux: &Var<T>, hr: &Var<T>, lambda_aux: f64) -> Result<Var<T>> {
    l1(sr_final, hr)?.add(&l1(sr_aux, hr)?.scale(lambda_aux))
}

/// L1 between the block-mean downsample of `sr_final` and the native LR.
pub fn lr_consistency_loss<T: Scalar>(sr_final: &Var<T>, lr_native: &Var<T>) -> Result<Var<T>> {
    let (b, c, h, w) = sr_final.value().dims4()?;
    let (lb, lc, lh, lw) = lr_native.value().dims4()?;
    if b != lb || c != lc || lh == 0 || lw == 0 || h % lh != 0 || w % lw != 0 || h / lh != w / lw {
        return Err(Error::shape("lr_consistency", sr_final.shape(), lr_native.shape()));
    }
    l1(&sr_final.avg_pool(h / lh)?, lr_native)
}

fn row_sums<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    x.sum_axis(1)
}

/// `1 - cos(v_denoised, v_hr)` per row, averaged over the batch.
pub fn contrastive_loss<T: Scalar>(v_denoised: &Var<T>, v_hr: &Var<T>) -> Result<Var<T>> {
    if v_denoised.shape() != v_hr.shape() || v_denoised.shape().len() != 2 {
        return Err(Error::shape("contrastive", v_denoised.shape(), v_hr.shape()));
    }
    let dot = row_sums(&v_denoised.mul(v_hr)?)?;
    let na = row_sums(&v_denoised.square())?;
    let nb = row_sums(&v_hr.square())?;
    // sqrt(|a|^2 |b|^2) makes aligned vectors give exactly cos = 1.
    let denom = na.mul(&nb)?.clamp_min(COSINE_EPS * COSINE_EPS).sqrt();
    let cos = dot.div(&denom)?;
    Ok(cos.neg().add_scalar(1.0).mean_all())
}

/// Divide every feature vector (over channels) by its L2 norm.
pub fn unit_normalize_channels<T: Scalar>(f: &Var<T>) -> Result<Var<T>> {
    let norm = f
        .square()
        .sum_axis(1)?
        .add_scalar(FEATURE_NORM_EPS)
        .sqrt()
        .broadcast_as(f.shape())?;
    f.div(&norm)
}

/// Weighted squared distance between unit-normalized features, summed over
/// channels and averaged over positions and batch.
pub fn lpips_style<T: Scalar>(fa: &[Var<T>], fb: &[Var<T>], layer_weights: &[f64]) -> Result<Var<T>> {
    if fa.len() != fb.len() || fa.len() != layer_weights.len() {
        return Err(Error::invalid(format!(
            "{} / {} feature layers for {} weights",
            fa.len(),
            fb.len(),
            layer_weights.len()
        )));
    }
    let mut total: Option<Var<T>> = None;
    for ((a, b), &w) in fa.iter().zip(fb).zip(layer_weights) {
        let d = unit_normalize_channels(a)?
            .sub(&unit_normalize_channels(b)?)?
            .square()
            .sum_axis(1)?
            .mean_all()
            .scale(w);
        total = Some(match total {
            None => d,
            Some(acc) => acc.add(&d)?,
        });
    }
    total.ok_or_else(|| Error::invalid("no feature layers"))
}

/// LPIPS-style term plus `lambda_vgg` times the summed feature L1.
pub fn perceptual_loss<T: Scalar>(
    sr_final: &Var<T>,
    hr: &Var<T>,
    extractor: &Extractor,
    layer_weights: &[f64],
    lambda_vgg: f64,
) -> Result<Var<T>> {
    if sr_final.shape() != hr.shape() {
        return Err(Error::shape("perceptual", sr_final.shape(), hr.shape()));
    }
    let fa = extractor.features(sr_final)?;
    let fb = extractor.features(hr)?;
    let mut loss = lpips_style(&fa, &fb, layer_weights)?;
    for (a, b) in fa.iter().zip(&fb) {
        loss = loss.add(&l1(a, b)?.scale(lambda_vgg))?;
    }
    Ok(loss)
}

/// Per-channel Sobel gradient magnitude `sqrt(gx^2 + gy^2 + eps)` with
/// reflect padding.
pub fn sobel_magnitude<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (b, c, h, w) = x.value().dims4()?;
    let sx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let sy = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let kernel = Tensor::new(
        &[2, 1, 3, 3],
        sx.iter().chain(&sy).map(|&v| T::from_f64_lossy(v)).collect(),
    )?;
    let planes = x.reshape(&[b * c, 1, h, w])?.pad_reflect(1)?;
    let g = planes.conv2d(&Var::constant(kernel), None, 1, 0)?;
    let gx = g.narrow(1, 0, 1)?;
    let gy = g.narrow(1, 1, 1)?;
    gx.square()
        .add(&gy.square())?
        .add_scalar(EDGE_EPS)
        .sqrt()
        .reshape(&[b, c, h, w])
}

/// L1 between Sobel gradient magnitudes.
pub fn edge_loss<T: Scalar>(sr_final: &Var<T>, hr: &Var<T>) -> Result<Var<T>> {
    if sr_final.shape() != hr.shape() {
        return Err(Error::shape("edge", sr_final.shape(), hr.shape()));
    }
    l1(&sobel_magnitude(sr_final)?, &sobel_magnitude(hr)?)
}

/// `mean((v_d - v_n)^2) + mean((z_d - z_n)^2)`.
pub fn latent_consistency_loss<T: Scalar>(
    v_denoised: &Var<T>,
    v_noise: &Var<T>,
    z_denoised: &Var<T>,
    z_noise: &Var<T>,
) -> Result<Var<T>> {
    mse(v_denoised, v_noise)?.add(&mse(z_denoised, z_noise)?)
}

/// `mean((sr_final - sr_aux)^2)`.
pub fn branch_consistency_loss<T: Scalar>(sr_final: &Var<T>, sr_aux: &Var<T>) -> Result<Var<T>> {
    mse(sr_final, sr_aux)
}
