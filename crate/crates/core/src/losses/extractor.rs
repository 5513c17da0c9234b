//! Pluggable multi-layer feature extractors for perceptual comparisons.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor, Var};

pub const IDENTITY: &str = "identity";
pub const RANDOM_PYRAMID: &str = "random-pyramid";

/// Seed of the frozen default pyramid; changing it changes every
/// perceptual number the toolkit reports.
pub const PYRAMID_SEED: u64 = 0x5eed_cafe;
pub const PYRAMID_CHANNELS: [usize; 3] = [16, 32, 64];

/// One frozen `conv(3x3, stride 2, pad 1) → LeakyReLU` stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidStage {
    /// `(out, in, 3, 3)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Extractor {
    /// A single "layer" whose features are the pixels themselves.
    Identity,
    /// Stack of frozen strided conv stages; every stage output is a layer.
    Pyramid(Vec<PyramidStage>),
}

impl Extractor {
    /// Fixed-seed random conv pyramid with channels 16/32/64.
    pub fn random_pyramid(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 3;
        let stages = PYRAMID_CHANNELS
            .iter()
            .map(|&out| {
                let fan_in = in_ch * 9;
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                let stage = PyramidStage {
                    weight: (0..out * fan_in).map(|_| dist.sample(&mut rng)).collect(),
                    bias: vec![0.0; out],
                    in_channels: in_ch,
                    out_channels: out,
                };
                in_ch = out;
                stage
            })
            .collect();
        Extractor::Pyramid(stages)
    }

    /// Load pyramid stages from a JSON array of [`PyramidStage`].
    pub fn load_pyramid(path: &Path) -> Result<Self> {
        let stages: Vec<PyramidStage> = serde_json::from_reader(std::fs::File::open(path)?)?;
        let mut in_ch = 3;
        for (i, s) in stages.iter().enumerate() {
            if s.in_channels != in_ch
                || s.weight.len() != s.out_channels * s.in_channels * 9
                || s.bias.len() != s.out_channels
            {
                return Err(Error::invalid(format!("extractor stage {i} has inconsistent shapes")));
            }
            in_ch = s.out_channels;
        }
        if stages.is_empty() {
            return Err(Error::invalid("extractor file has no stages"));
        }
        Ok(Extractor::Pyramid(stages))
    }

    pub fn num_layers(&self) -> usize {
        match self {
            Extractor::Identity => 1,
            Extractor::Pyramid(s) => s.len(),
        }
    }

    /// Feature maps of every layer. Extractor weights never receive
    /// gradients; gradients do flow to `x`.
    pub fn features<T: Scalar>(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        match self {
            Extractor::Identity => Ok(vec![x.clone()]),
            Extractor::Pyramid(stages) => {
                let mut h = x.clone();
                let mut out = Vec::with_capacity(stages.len());
                for s in stages {
                    let w = Var::constant(Tensor::new(
                        &[s.out_channels, s.in_channels, 3, 3],
                        s.weight.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                    )?);
                    let b = Var::constant(Tensor::new(
                        &[s.out_channels],
                        s.bias.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                    )?);
                    h = h.conv2d(&w, Some(&b), 2, 1)?.leaky_relu(0.2);
                    out.push(h.clone());
                }
                Ok(out)
            }
        }
    }

    /// Uniform `1 / num_layers` weights.
    pub fn uniform_weights(&self) -> Vec<f64> {
        let n = self.num_layers();
        vec![1.0 / n as f64; n]
    }
}

/// Extractors addressable by name.
#[derive(Clone, Debug)]
pub struct ExtractorRegistry {
    entries: BTreeMap<String, Extractor>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(IDENTITY.to_string(), Extractor::Identity);
        entries.insert(RANDOM_PYRAMID.to_string(), Extractor::random_pyramid(PYRAMID_SEED));
        Self { entries }
    }
}

impl ExtractorRegistry {
    pub fn register(&mut self, name: impl Into<String>, extractor: Extractor) {
        self.entries.insert(name.into(), extractor);
    }

    pub fn get(&self, name: &str) -> Result<&Extractor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownExtractor(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
