use crate::error::{Error, Result};
use crate::nn::{Bound, ConvSpec, Init, ParamId, ParamLayout, Scalar, Var};

/// A convolution whose weights live in a [`ParamLayout`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// Register a Kaiming-initialised convolution under `name`.
    pub fn new(layout: &mut ParamLayout, name: &str, spec: ConvSpec) -> Self {
        Self::with_gain(layout, name, spec, 1.0)
    }

    pub fn with_gain(layout: &mut ParamLayout, name: &str, spec: ConvSpec, gain: f64) -> Self {
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let weight = layout.register(
            format!("{name}.weight"),
            &spec.weight_shape(),
            Init::KaimingScaled { fan_in, gain },
        );
        let bias = spec
            .has_bias
            .then(|| layout.register(format!("{name}.bias"), &[spec.out_channels], Init::Zeros));
        Self { spec, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        conv2d(x, &self.spec, p.var(self.weight), self.bias.map(|b| p.var(b)))
    }
}

/// Convolution with the geometry checked against `spec` first.
pub fn conv2d<T: Scalar>(x: &Var<T>, spec: &ConvSpec, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    let (_, c, h, w) = x.value().dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape("conv2d input channels", x.shape(), &spec.weight_shape()));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape("conv2d weight", weight.shape(), &spec.weight_shape()));
    }
    if spec.has_bias != bias.is_some() {
        return Err(Error::invalid("conv2d bias presence disagrees with its spec"));
    }
    if spec.output_hw(h, w).is_none() {
        return Err(Error::shape("conv2d window", x.shape(), &spec.weight_shape()));
    }
    x.conv2d(weight, bias, spec.stride, spec.padding)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self::with_init(
            layout,
            name,
            in_dim,
            out_dim,
            bias,
            Init::Normal((1.0 / in_dim as f64).sqrt()),
        )
    }

    pub fn with_init(
        layout: &mut ParamLayout,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let weight = layout.register(format!("{name}.weight"), &[out_dim, in_dim], init);
        let bias = bias.then(|| layout.register(format!("{name}.bias"), &[out_dim], Init::Zeros));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.linear(p.var(self.weight), self.bias.map(|b| p.var(b)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        Self {
            gamma: layout.register(format!("{name}.gamma"), &[dim], Init::Ones),
            beta: layout.register(format!("{name}.beta"), &[dim], Init::Zeros),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), Self::EPS)
    }
}
