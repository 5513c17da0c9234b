//! Named parameter storage shared by every network.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor, Var};

/// Handle to a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// Kaiming-normal over `fan_in` inputs, multiplied by `gain`.
    KaimingScaled {
        fan_in: usize,
        gain: f64,
    },
    /// Identity matrix (square 2-d parameters only).
    Eye,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Ordered description of every parameter of a network.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter `{name}` registered twice");
        let id = self.specs.len();
        self.index.insert(name.clone(), id);
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(id)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Sample initial values in registration order.
    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamSet<T> {
        let tensors = self
            .specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data: Vec<T> = match s.init {
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                    Init::Normal(std) => sample_normal(rng, n, std),
                    Init::KaimingScaled { fan_in, gain } => {
                        sample_normal(rng, n, gain * (2.0 / fan_in.max(1) as f64).sqrt())
                    }
                    Init::Eye => {
                        let d = s.shape[0];
                        (0..n)
                            .map(|i| if i / d == i % d { T::one() } else { T::zero() })
                            .collect()
                    }
                };
                Tensor::new(&s.shape, data).expect("layout shape")
            })
            .collect();
        ParamSet {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }
}

fn sample_normal<T: Scalar, R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect()
}

/// Parameter values, in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::invalid("parameter names and tensors differ in count"));
        }
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Every scalar, tensors concatenated in layout order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamSet::to_flat`].
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_elements() {
            return Err(Error::shape("set_flat", &[self.num_elements()], &[flat.len()]));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Flat indices of the parameters whose name starts with `prefix`.
    pub fn flat_indices(&self, prefix: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        for (n, t) in self.names.iter().zip(&self.tensors) {
            if n.starts_with(prefix) {
                out.extend(off..off + t.len());
            }
            off += t.len();
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Check names and shapes against a layout.
    pub fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        if self.len() != layout.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                self.len()
            )));
        }
        for ((name, t), spec) in self.names.iter().zip(&self.tensors).zip(layout.specs()) {
            if *name != spec.name || t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: found `{name}` {:?}, expected `{}` {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Wrap every parameter as a graph leaf.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| {
                    if trainable {
                        Var::param(t.clone())
                    } else {
                        Var::constant(t.clone())
                    }
                })
                .collect(),
        }
    }
}

/// Parameters lifted into one computation graph.
pub struct Bound<T> {
    vars: Vec<Var<T>>,
}

impl<T: Scalar> Bound<T> {
    pub fn var(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }

    /// Gradients for every parameter, zeros where unused.
    pub fn collect_grads(&self, grads: &crate::nn::Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }
}
