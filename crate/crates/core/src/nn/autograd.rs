//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Every [`Var`] owns its value and, when any input requires a gradient,
//! its parents plus a closure mapping the output gradient to input
//! gradients. Node ids grow monotonically, so sorting reachable nodes by
//! descending id is a valid reverse topological order.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A value in the computation graph.
pub struct Var<T>(Rc<Node<T>>);

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, parents: Vec<Var<T>>, backward: Option<BackwardFn<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            parents,
            backward,
        }))
    }

    /// A leaf that receives a gradient.
    pub fn param(value: Tensor<T>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    /// Record an operation. Parents and closure are dropped when no input
    /// needs a gradient, which keeps inference passes memory-light.
    pub(crate) fn from_op<F>(value: Tensor<T>, parents: Vec<Var<T>>, backward: F) -> Self
    where
        F: Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if parents.iter().any(|p| p.requires_grad()) {
            Self::make(value, true, parents, Some(Box::new(backward)))
        } else {
            Self::make(value, false, Vec::new(), None)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Back-propagate from a single-element output.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.0.value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape()
            )));
        }
        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || seen.insert(v.id(), ()).is_some() {
                continue;
            }
            for p in &v.0.parents {
                stack.push(p.clone());
            }
            order.push(v);
        }
        order.sort_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        let mut leaves: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), Tensor::full(self.shape(), T::one()));
        for v in order {
            let Some(grad) = pending.remove(&v.id()) else {
                continue;
            };
            let node = &v.0;
            match &node.backward {
                None => {
                    leaves.insert(node.id, grad);
                }
                Some(f) => {
                    let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|p| &p.0.value).collect();
                    let grads = f(&grad, &inputs, &node.value);
                    debug_assert_eq!(grads.len(), node.parents.len());
                    for (p, g) in node.parents.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), p.shape(), "gradient shape for parent");
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                pending.insert(p.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { by_id: leaves })
    }
}

/// Gradients of leaf variables after a backward pass.
pub struct Gradients<T> {
    by_id: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.by_id.get(&var.id())
    }

    /// Gradient of `var`, or zeros when it did not influence the output.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
