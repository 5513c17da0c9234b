use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ConvSpec, ParamLayout, Scalar, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Scale applied to dense sub-block and RRDB residual paths.
pub const RRDB_RESIDUAL_SCALE: f64 = 0.2;
/// Initial gain of the last convolution on every residual path.
pub const RESIDUAL_OUT_GAIN: f64 = 0.1;

fn check_channels<T: Scalar>(x: &Var<T>, channels: usize, op: &'static str) -> Result<()> {
    let (_, c, _, _) = x.value().dims4()?;
    if c != channels {
        return Err(Error::shape(op, x.shape(), &[channels]));
    }
    Ok(())
}

/// `x + scale * conv2(relu(conv1(x)))` with channel-preserving 3x3 convs.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub channels: usize,
    pub scale: f64,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, scale: f64) -> Self {
        Self {
            channels,
            scale,
            conv1: Conv2d::new(layout, &format!("{name}.conv1"), ConvSpec::same3(channels, channels)),
            conv2: Conv2d::with_gain(
                layout,
                &format!("{name}.conv2"),
                ConvSpec::same3(channels, channels),
                RESIDUAL_OUT_GAIN,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels(x, self.channels, "residual_block")?;
        let h = self.conv1.forward(p, x)?.relu();
        let h = self.conv2.forward(p, &h)?;
        x.add(&h.scale(self.scale))
    }
}

/// Five densely connected 3x3 convs growing by `growth` channels.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub convs: Vec<Conv2d>,
}

impl DenseBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, growth: usize) -> Self {
        let convs = (0..5)
            .map(|i| {
                let spec = ConvSpec::same3(channels + i * growth, if i == 4 { channels } else { growth });
                let gain = if i == 4 { RESIDUAL_OUT_GAIN } else { 1.0 };
                Conv2d::with_gain(layout, &format!("{name}.conv{}", i + 1), spec, gain)
            })
            .collect();
        Self { convs }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut feats = vec![x.clone()];
        for conv in &self.convs[..4] {
            let input = Var::cat(&feats, 1)?;
            feats.push(conv.forward(p, &input)?.leaky_relu(LEAKY_SLOPE));
        }
        let out = self.convs[4].forward(p, &Var::cat(&feats, 1)?)?;
        x.add(&out.scale(RRDB_RESIDUAL_SCALE))
    }
}

/// Residual-in-residual dense block: three dense blocks under a scaled skip.
///
/// The outer residual is the change the dense chain makes to its input,
/// `x + 0.2 * (chain(x) - x)`, so a block with zero weights is the identity.
#[derive(Clone, Debug)]
pub struct Rrdb {
    pub channels: usize,
    pub blocks: [DenseBlock; 3],
}

impl Rrdb {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, growth: usize) -> Self {
        Self {
            channels,
            blocks: [1, 2, 3].map(|i| DenseBlock::new(layout, &format!("{name}.rdb{i}"), channels, growth)),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels(x, self.channels, "rrdb_block")?;
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(p, &h)?;
        }
        x.add(&h.sub(x)?.scale(RRDB_RESIDUAL_SCALE))
    }
}
