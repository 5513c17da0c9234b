use crate::error::{Error, Result};
use crate::generator::blocks::{Rrdb, LEAKY_SLOPE};
use crate::generator::DecoderKind;
use crate::nn::{Bound, Conv2d, ConvSpec, Linear, ParamLayout, Scalar, Var};

pub const UPSAMPLE_STAGES: usize = 3;

#[derive(Clone, Debug)]
enum StageBody {
    Rrdb(Vec<Rrdb>),
    Plain(Conv2d),
}

#[derive(Clone, Debug)]
struct Stage {
    body: StageBody,
    up_conv: Conv2d,
}

/// Latent → image decoder: three x2 stages, each a body (RRDB group or a
/// plain conv) followed by nearest upsampling, conv and LeakyReLU; then a
/// 3-channel conv and `tanh`.
#[derive(Clone, Debug)]
pub struct SrDecoder {
    pub latent_channels: usize,
    head: Conv2d,
    stages: Vec<Stage>,
    tail: Conv2d,
}

impl SrDecoder {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        latent_channels: usize,
        width: usize,
        blocks_per_stage: usize,
        growth: usize,
        kind: DecoderKind,
    ) -> Self {
        let head = Conv2d::new(layout, &format!("{name}.head"), ConvSpec::same3(latent_channels, width));
        let stages = (0..UPSAMPLE_STAGES)
            .map(|s| {
                let body = match kind {
                    DecoderKind::Rrdb => StageBody::Rrdb(
                        (0..blocks_per_stage)
                            .map(|i| Rrdb::new(layout, &format!("{name}.stage{s}.rrdb{i}"), width, growth))
                            .collect(),
                    ),
                    DecoderKind::Plain => StageBody::Plain(Conv2d::new(
                        layout,
                        &format!("{name}.stage{s}.plain"),
                        ConvSpec::same3(width, width),
                    )),
                };
                let up_conv = Conv2d::new(layout, &format!("{name}.stage{s}.up"), ConvSpec::same3(width, width));
                Stage { body, up_conv }
            })
            .collect();
        let tail = Conv2d::new(layout, &format!("{name}.tail"), ConvSpec::same3(width, 3));
        Self {
            latent_channels,
            head,
            stages,
            tail,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, z: &Var<T>) -> Result<Var<T>> {
        let (_, c, _, _) = z.value().dims4()?;
        if c != self.latent_channels {
            return Err(Error::shape("decoder input", z.shape(), &[self.latent_channels]));
        }
        let mut h = self.head.forward(p, z)?;
        for stage in &self.stages {
            match &stage.body {
                StageBody::Rrdb(blocks) => {
                    for b in blocks {
                        h = b.forward(p, &h)?;
                    }
                }
                StageBody::Plain(conv) => h = conv.forward(p, &h)?.leaky_relu(LEAKY_SLOPE),
            }
            h = stage
                .up_conv
                .forward(p, &h.upsample_nearest(2)?)?
                .leaky_relu(LEAKY_SLOPE);
        }
        Ok(self.tail.forward(p, &h)?.tanh())
    }
}

/// Global average pool → linear → ReLU → linear.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub channels: usize,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ProjectionHead {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, proj_dim: usize) -> Self {
        Self {
            channels,
            fc1: Linear::new(layout, &format!("{name}.fc1"), channels, channels, true),
            fc2: Linear::new(layout, &format!("{name}.fc2"), channels, proj_dim, true),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, z: &Var<T>) -> Result<Var<T>> {
        let pooled = global_avg_pool(z)?;
        if pooled.shape()[1] != self.channels {
            return Err(Error::shape("projection head", z.shape(), &[self.channels]));
        }
        let h = self.fc1.forward(p, &pooled)?.relu();
        self.fc2.forward(p, &h)
    }
}

/// Mean over spatial positions: `(B, C, H, W)` → `(B, C)`.
pub fn global_avg_pool<T: Scalar>(z: &Var<T>) -> Result<Var<T>> {
    let (b, c, h, w) = z.value().dims4()?;
    z.reshape(&[b, c, h * w])?.mean_axis(2)?.reshape(&[b, c])
}
