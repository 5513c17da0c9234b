//! Versioned single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "CATFCKPT"
//! version  u32
//! len      u64      byte length of the JSON manifest
//! manifest JSON     configs, step, and {name, shape, offset} per tensor
//! data     f32 LE   tensors back to back; offsets count f32 elements
//! ```
//!
//! Generator parameters live under `gen/`, discriminator parameters under
//! `disc/` and spectral-norm vectors under `disc_sn/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::{DiscriminatorConfig, SpectralBuffers};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::nn::{ParamLayout, ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"CATFCKPT";
pub const FORMAT_VERSION: u32 = 1;
const GEN: &str = "gen/";
const DISC: &str = "disc/";
const DISC_SN: &str = "disc_sn/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub step: u64,
    pub generator: GeneratorConfig,
    pub discriminator: Option<DiscriminatorConfig>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub generator: GeneratorConfig,
    pub discriminator: Option<DiscriminatorConfig>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn with_prefix<'a>(
    prefix: &'a str,
    names: &'a [String],
    tensors: &'a [Tensor<f32>],
) -> impl Iterator<Item = (String, Tensor<f32>)> + 'a {
    names
        .iter()
        .zip(tensors)
        .map(move |(n, t)| (format!("{prefix}{n}"), t.clone()))
}

impl Checkpoint {
    pub fn new(step: u64, generator: &GeneratorConfig, gen_params: &ParamSet<f32>) -> Self {
        Self {
            step,
            generator: generator.clone(),
            discriminator: None,
            tensors: with_prefix(GEN, gen_params.names(), gen_params.tensors()).collect(),
        }
    }

    pub fn with_discriminator(
        mut self,
        config: &DiscriminatorConfig,
        params: &ParamSet<f32>,
        buffers: &SpectralBuffers<f32>,
    ) -> Self {
        self.discriminator = Some(config.clone());
        self.tensors.extend(with_prefix(DISC, params.names(), params.tensors()));
        self.tensors.extend(
            buffers
                .to_named()
                .into_iter()
                .map(|(n, t)| (format!("{DISC_SN}{n}"), t)),
        );
        self
    }

    fn section(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    fn params(&self, prefix: &str, layout: &ParamLayout) -> Result<ParamSet<f32>> {
        let (names, tensors) = self.section(prefix).into_iter().unzip();
        let set = ParamSet::from_parts(names, tensors)?;
        set.check_layout(layout)?;
        Ok(set)
    }

    /// Generator parameters, checked against `layout`.
    pub fn generator_params(&self, layout: &ParamLayout) -> Result<ParamSet<f32>> {
        self.params(GEN, layout)
    }

    pub fn discriminator_params(&self, layout: &ParamLayout) -> Result<ParamSet<f32>> {
        self.params(DISC, layout)
    }

    pub fn spectral_buffers(&self) -> Result<SpectralBuffers<f32>> {
        SpectralBuffers::from_named(&self.section(DISC_SN))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            step: self.step,
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        let data = &bytes[20 + len..];
        if !data.len().is_multiple_of(4) {
            return Err(bad("tensor data is not a whole number of f32 values"));
        }
        let floats: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let slice = floats
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the end of the file", e.name)))?;
            tensors.push((e.name.clone(), Tensor::new(&e.shape, slice.to_vec())?));
        }
        Ok(Self {
            step: manifest.step,
            generator: manifest.generator,
            discriminator: manifest.discriminator,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::discriminator::Discriminator;
    use crate::generator::Generator;

    fn sample() -> (Generator, Discriminator, Checkpoint) {
        let g = Generator::new(GeneratorConfig::micro()).unwrap();
        let d = Discriminator::new(DiscriminatorConfig::micro()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gp = g.init_params::<f32, _>(&mut rng);
        let dp = d.init_params::<f32, _>(&mut rng);
        let buf = d.init_buffers(&dp, &mut rng).unwrap();
        let ck = Checkpoint::new(7, &g.config, &gp).with_discriminator(&d.config, &dp, &buf);
        (g, d, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (g, d, ck) = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        back.generator_params(&g.layout).unwrap();
        back.discriminator_params(&d.layout).unwrap();
        assert_eq!(back.spectral_buffers().unwrap().u.len(), d.convs.len());
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let (_, _, ck) = sample();
        let other = Generator::new(GeneratorConfig::tiny()).unwrap();
        assert!(matches!(ck.generator_params(&other.layout), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (_, _, ck) = sample();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(b"garbage, not a checkpoint").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 6]).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2)
            .unwrap_err()
            .to_string()
            .contains("version 2"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
