//! Spectrally-normalized convolutional patch discriminator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::LEAKY_SLOPE;
use crate::nn::{matrix_dims, power_iterate, Bound, Conv2d, ConvSpec, ParamLayout, ParamSet, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub channels: [usize; 4],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f64,
    pub spectral_norm: bool,
    /// Power-iteration steps per training update.
    pub power_iterations: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: [64, 128, 256, 512],
            kernel: 4,
            stride: 2,
            padding: 1,
            leaky_slope: LEAKY_SLOPE,
            spectral_norm: true,
            power_iterations: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        Self {
            channels: [16, 32, 64, 64],
            ..Self::default()
        }
    }

    pub fn micro() -> Self {
        Self {
            channels: [2, 4, 4, 4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid(
                "discriminator channels, kernel and stride must be positive",
            ));
        }
        if self.power_iterations == 0 {
            return Err(Error::invalid("power_iterations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.leaky_slope) {
            return Err(Error::invalid("leaky slope must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Power-iteration vectors `(u, v)` for every convolution, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBuffers<T> {
    pub u: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> SpectralBuffers<T> {
    pub fn cast<U: Scalar>(&self) -> SpectralBuffers<U> {
        let conv = |vs: &Vec<Vec<T>>| {
            vs.iter()
                .map(|v| v.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect())
                .collect()
        };
        SpectralBuffers {
            u: conv(&self.u),
            v: conv(&self.v),
        }
    }

    /// Flatten into named tensors for checkpointing.
    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (u, v)) in self.u.iter().zip(&self.v).enumerate() {
            out.push((format!("sn{i}.u"), Tensor::new(&[u.len()], u.clone()).expect("u")));
            out.push((format!("sn{i}.v"), Tensor::new(&[v.len()], v.clone()).expect("v")));
        }
        out
    }

    pub fn from_named(named: &[(String, Tensor<T>)]) -> Result<Self> {
        if !named.len().is_multiple_of(2) {
            return Err(Error::Checkpoint("odd number of spectral buffers".into()));
        }
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (i, pair) in named.chunks(2).enumerate() {
            if pair[0].0 != format!("sn{i}.u") || pair[1].0 != format!("sn{i}.v") {
                return Err(Error::Checkpoint(format!(
                    "unexpected spectral buffer names `{}`, `{}`",
                    pair[0].0, pair[1].0
                )));
            }
            u.push(pair[0].1.data().to_vec());
            v.push(pair[1].1.data().to_vec());
        }
        Ok(Self { u, v })
    }
}

/// How spectral normalization treats the persisted vectors on a forward.
pub enum SpectralMode<'a, T> {
    /// Advance power iteration and store the new vectors.
    Update(&'a mut SpectralBuffers<T>),
    /// Use the stored vectors as they are.
    Frozen(&'a SpectralBuffers<T>),
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub layout: ParamLayout,
    pub convs: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (i, &out) in config.channels.iter().enumerate() {
            let spec = ConvSpec::new(in_ch, out, config.kernel, config.stride, config.padding);
            convs.push(Conv2d::new(&mut layout, &format!("disc.conv{}", i + 1), spec));
            in_ch = out;
        }
        convs.push(Conv2d::new(&mut layout, "disc.out", ConvSpec::same3(in_ch, 1)));
        Ok(Self { config, layout, convs })
    }

    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamSet<T> {
        self.layout.init(rng)
    }

    /// Random unit `u` per layer and the matching `v = W^T u / |W^T u|`.
    pub fn init_buffers<T: Scalar, R: Rng>(&self, params: &ParamSet<T>, rng: &mut R) -> Result<SpectralBuffers<T>> {
        let mut u_all = Vec::new();
        let mut v_all = Vec::new();
        for conv in &self.convs {
            let w = params.get(conv.weight);
            let (rows, cols) = matrix_dims(w)?;
            let mut u: Vec<T> = (0..rows)
                .map(|_| T::from_f64_lossy(StandardNormal.sample(rng)))
                .collect();
            unit(&mut u);
            let mut v = vec![T::zero(); cols];
            T::gemm(true, false, cols, 1, rows, T::one(), w.data(), &u, T::zero(), &mut v);
            unit(&mut v);
            u_all.push(u);
            v_all.push(v);
        }
        Ok(SpectralBuffers { u: u_all, v: v_all })
    }

    /// Weight actually used by layer `i`: `W / (u^T W v)` after the power
    /// step implied by `mode`. An all-zero weight is used unnormalized.
    fn effective_weight<T: Scalar>(&self, p: &Bound<T>, i: usize, mode: &mut SpectralMode<'_, T>) -> Result<Var<T>> {
        let w = p.var(self.convs[i].weight);
        if !self.config.spectral_norm || w.value().data().iter().all(|&x| x == T::zero()) {
            return Ok(w.clone());
        }
        let (rows, cols) = matrix_dims(w.value())?;
        let (u, v) = match mode {
            SpectralMode::Update(buf) => {
                let it = power_iterate(w.value().data(), rows, cols, &buf.u[i], self.config.power_iterations)?;
                buf.u[i] = it.u.clone();
                buf.v[i] = it.v.clone();
                (it.u, it.v)
            }
            SpectralMode::Frozen(buf) => (buf.u[i].clone(), buf.v[i].clone()),
        };
        let outer = Tensor::from_fn(w.shape(), |k| u[k / cols] * v[k % cols]);
        let sigma = w.mul(&Var::constant(outer))?.sum_all();
        let sigma = sigma.reshape(&vec![1; w.shape().len()])?.broadcast_as(w.shape())?;
        w.div(&sigma)
    }

    /// Raw logits `(B, 1, h', w')`.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>, mut mode: SpectralMode<'_, T>) -> Result<Var<T>> {
        let (_, c, _, _) = x.value().dims4()?;
        if c != 3 {
            return Err(Error::invalid(format!("discriminator expects 3 channels, got {c}")));
        }
        if !x.value().all_finite() {
            return Err(Error::NonFinite("discriminator input".into()));
        }
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let w = self.effective_weight(p, i, &mut mode)?;
            h = h.conv2d(&w, conv.bias.map(|b| p.var(b)), conv.spec.stride, conv.spec.padding)?;
            if i != last {
                h = h.leaky_relu(self.config.leaky_slope);
            }
        }
        Ok(h)
    }

    /// Normalized weight of every layer under the stored vectors.
    pub fn normalized_weights<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        buffers: &SpectralBuffers<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let bound = params.bind(false);
        let mut mode = SpectralMode::Frozen(buffers);
        (0..self.convs.len())
            .map(|i| Ok(self.effective_weight(&bound, i, &mut mode)?.value().clone()))
            .collect()
    }

    /// Run `iters` power steps on every layer without touching parameters.
    pub fn converge_spectral<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        buffers: &mut SpectralBuffers<T>,
        iters: usize,
    ) -> Result<()> {
        for (i, conv) in self.convs.iter().enumerate() {
            let w = params.get(conv.weight);
            if w.data().iter().all(|&x| x == T::zero()) {
                continue;
            }
            let (rows, cols) = matrix_dims(w)?;
            let it = power_iterate(w.data(), rows, cols, &buffers.u[i], iters)?;
            buffers.u[i] = it.u;
            buffers.v[i] = it.v;
        }
        Ok(())
    }
}

fn unit<T: Scalar>(v: &mut [T]) {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: DiscriminatorConfig) -> (Discriminator, ParamSet<f64>, SpectralBuffers<f64>) {
        let d = Discriminator::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = d.init_params(&mut rng);
        let b = d.init_buffers(&p, &mut rng).unwrap();
        (d, p, b)
    }

    #[test]
    fn logit_map_shape_follows_stride_arithmetic() {
        let (d, p, mut b) = setup(DiscriminatorConfig::micro());
        let x = Var::constant(Tensor::full(&[2, 3, 32, 32], 0.1));
        let y = d.forward(&p.bind(false), &x, SpectralMode::Update(&mut b)).unwrap();
        assert_eq!(y.shape(), &[2, 1, 2, 2]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let (d, mut p, b) = setup(DiscriminatorConfig::micro());
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Var::constant(Tensor::full(&[1, 3, 16, 16], 0.7));
        let y = d.forward(&p.bind(false), &x, SpectralMode::Frozen(&b)).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_rgb_input() {
        let (d, p, b) = setup(DiscriminatorConfig::micro());
        let x = Var::constant(Tensor::full(&[1, 1, 16, 16], 0.0));
        assert!(d.forward(&p.bind(false), &x, SpectralMode::Frozen(&b)).is_err());
    }

    #[test]
    fn frozen_mode_leaves_buffers_and_update_mode_moves_them() {
        let (d, p, mut b) = setup(DiscriminatorConfig::micro());
        let before = b.clone();
        let x = Var::constant(Tensor::full(&[1, 3, 16, 16], 0.3));
        d.forward(&p.bind(false), &x, SpectralMode::Frozen(&b)).unwrap();
        assert_eq!(before, b);
        d.forward(&p.bind(false), &x, SpectralMode::Update(&mut b)).unwrap();
        assert_ne!(before, b);
    }

    #[test]
    fn buffers_round_trip_through_names() {
        let (_, _, b) = setup(DiscriminatorConfig::micro());
        assert_eq!(SpectralBuffers::from_named(&b.to_named()).unwrap(), b);
    }
}
