//! Transformer U-Net used by both latent branches.

use crate::error::{Error, Result};
use crate::generator::blocks::{LEAKY_SLOPE, RESIDUAL_OUT_GAIN};
use crate::nn::{
    Bound, Conv2d, ConvSpec, Init, Linear, ParamId, ParamLayout, Scalar, Tensor, TimestepEmbedding, TransformerBlock,
    Var,
};

/// Timestep conditioning → conv embedding → tokens with a learned
/// positional table → transformer blocks → conv decoder with a skip from
/// the conditioned input.
#[derive(Clone, Debug)]
pub struct TransformerUNet {
    pub channels: usize,
    pub max_latent_size: usize,
    /// Learned projection of the timestep embedding; `None` adds it as is.
    pub time_proj: Option<Linear>,
    pub embed: Conv2d,
    pub pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub dec1: Conv2d,
    pub dec2: Conv2d,
}

impl TransformerUNet {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        channels: usize,
        layers: usize,
        heads: usize,
        max_latent_size: usize,
        project_time: bool,
    ) -> Result<Self> {
        let time_proj = project_time.then(|| {
            Linear::with_init(
                layout,
                &format!("{name}.time_proj"),
                channels,
                channels,
                true,
                Init::Eye,
            )
        });
        let embed = Conv2d::new(layout, &format!("{name}.embed"), ConvSpec::same3(channels, channels));
        let pos = layout.register(
            format!("{name}.pos"),
            &[max_latent_size, max_latent_size, channels],
            Init::Normal(0.02),
        );
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(layout, &format!("{name}.block{i}"), channels, heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            channels,
            max_latent_size,
            time_proj,
            embed,
            pos,
            blocks,
            dec1: Conv2d::new(layout, &format!("{name}.dec1"), ConvSpec::same3(2 * channels, channels)),
            dec2: Conv2d::with_gain(
                layout,
                &format!("{name}.dec2"),
                ConvSpec::same3(channels, channels),
                RESIDUAL_OUT_GAIN,
            ),
        })
    }

    /// `z + e_t` (through `time_proj` when present), broadcast per channel.
    pub fn condition<T: Scalar>(&self, p: &Bound<T>, z: &Var<T>, e_t: &TimestepEmbedding) -> Result<Var<T>> {
        let (b, c, _, _) = z.value().dims4()?;
        if e_t.dim != c || c != self.channels {
            return Err(Error::invalid(format!(
                "timestep embedding dim {} does not match {c} latent channels",
                e_t.dim
            )));
        }
        let e = match &self.time_proj {
            None => Var::constant(e_t.as_channel_tensor::<T>(b)),
            Some(proj) => proj
                .forward(p, &Var::constant(e_t.as_rows::<T>(b)))?
                .reshape(&[b, c, 1, 1])?,
        };
        z.add(&e.broadcast_as(z.shape())?)
    }

    /// Run the U-Net on an already-conditioned latent.
    pub fn refine<T: Scalar>(&self, p: &Bound<T>, z_cond: &Var<T>) -> Result<Var<T>> {
        let (b, c, h, w) = z_cond.value().dims4()?;
        if h > self.max_latent_size || w > self.max_latent_size {
            return Err(Error::invalid(format!(
                "latent grid {h}x{w} exceeds the positional table ({0}x{0})",
                self.max_latent_size
            )));
        }
        let n = h * w;
        let tokens = self
            .embed
            .forward(p, z_cond)?
            .reshape(&[b, c, n])?
            .permute(&[0, 2, 1])?;
        let pos = p
            .var(self.pos)
            .narrow(0, 0, h)?
            .narrow(1, 0, w)?
            .reshape(&[1, n, c])?
            .broadcast_as(&[b, n, c])?;
        let mut m = tokens.add(&pos)?;
        for block in &self.blocks {
            m = block.forward(p, &m)?;
        }
        let m_map = m.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])?;
        let d = self.dec1.forward(p, &Var::cat(&[m_map, z_cond.clone()], 1)?)?;
        let d = self.dec2.forward(p, &d.leaky_relu(LEAKY_SLOPE))?;
        z_cond.add(&d)
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, z: &Var<T>, e_t: &TimestepEmbedding) -> Result<Var<T>> {
        let z_cond = self.condition(p, z, e_t)?;
        self.refine(p, &z_cond)
    }
}

/// Add `N(0, sigma^2)` noise elementwise.
pub fn inject_noise<T: Scalar, R: rand::Rng>(z: &Var<T>, sigma: f64, rng: &mut R) -> Result<Var<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(z.clone());
    }
    let noise = sample_noise::<T, R>(z.shape(), sigma, rng);
    z.add(&Var::constant(noise))
}

pub fn sample_noise<T: Scalar, R: rand::Rng>(shape: &[usize], sigma: f64, rng: &mut R) -> Tensor<T> {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, sigma).expect("validated sigma");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}
