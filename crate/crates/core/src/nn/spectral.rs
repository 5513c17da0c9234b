//! Spectral normalization by power iteration.

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Persisted power-iteration state for one weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T> {
    /// Left singular vector estimate, unit norm, length `rows`.
    pub u: Vec<T>,
    /// Weight viewed as a `rows x cols` matrix, row-major.
    pub weight: Tensor<T>,
}

impl<T: Scalar> SpectralState<T> {
    /// Start from `u = (1, ..., 1) / sqrt(rows)` for a 2-d weight view.
    pub fn new(weight: Tensor<T>) -> Result<Self> {
        let rows = matrix_dims(&weight)?.0;
        let u = vec![T::one() / T::from_f64_lossy((rows as f64).sqrt()); rows];
        Ok(Self { u, weight })
    }

    pub fn with_u(weight: Tensor<T>, u: Vec<T>) -> Result<Self> {
        let rows = matrix_dims(&weight)?.0;
        if u.len() != rows {
            return Err(Error::shape("spectral u", &[u.len()], &[rows]));
        }
        Ok(Self { u, weight })
    }
}

/// `(rows, cols)` of the matricization `(out, in * kh * kw)`.
pub fn matrix_dims<T: Scalar>(w: &Tensor<T>) -> Result<(usize, usize)> {
    match w.shape() {
        [] => Err(Error::invalid("scalar weight has no matrix view")),
        [r] => Ok((*r, 1)),
        [r, rest @ ..] => Ok((*r, rest.iter().product())),
    }
}

fn normalize<T: Scalar>(v: &mut [T]) -> T {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
    norm
}

/// Result of a power-iteration run.
#[derive(Clone, Debug)]
pub struct PowerIteration<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    /// Estimated largest singular value `u^T W v`.
    pub sigma: T,
}

/// Run `iters` steps of `v <- W^T u / |W^T u|`, `u <- W v / |W v|`,
/// warm-started from `u`.
pub fn power_iterate<T: Scalar>(w: &[T], rows: usize, cols: usize, u: &[T], iters: usize) -> Result<PowerIteration<T>> {
    if iters == 0 {
        return Err(Error::invalid("power iteration needs at least one step"));
    }
    if w.len() != rows * cols || u.len() != rows {
        return Err(Error::shape("power iteration", &[rows, cols], &[u.len()]));
    }
    if w.iter().all(|&x| x == T::zero()) {
        return Err(Error::invalid("power iteration is undefined for a zero matrix"));
    }
    let mut u = u.to_vec();
    if normalize(&mut u) == T::zero() {
        u = vec![T::one(); rows];
        normalize(&mut u);
    }
    let mut v = vec![T::zero(); cols];
    for _ in 0..iters {
        T::gemm(true, false, cols, 1, rows, T::one(), w, &u, T::zero(), &mut v);
        if normalize(&mut v) == T::zero() {
            // u fell into the left null space; restart from a dense vector.
            v = vec![T::one(); cols];
            normalize(&mut v);
        }
        T::gemm(false, false, rows, 1, cols, T::one(), w, &v, T::zero(), &mut u);
        normalize(&mut u);
    }
    let mut wv = vec![T::zero(); rows];
    T::gemm(false, false, rows, 1, cols, T::one(), w, &v, T::zero(), &mut wv);
    let sigma = u.iter().zip(&wv).map(|(&a, &b)| a * b).sum();
    Ok(PowerIteration { u, v, sigma })
}

/// Divide the weight by its estimated spectral norm.
///
/// Returns the normalized weight (same shape as the input) and the state
/// with `u` advanced by `n_power_iters` steps.
pub fn spectral_normalize<T: Scalar>(
    state: &SpectralState<T>,
    n_power_iters: usize,
) -> Result<(Tensor<T>, SpectralState<T>)> {
    let (rows, cols) = matrix_dims(&state.weight)?;
    let it = power_iterate(state.weight.data(), rows, cols, &state.u, n_power_iters)?;
    let inv = T::one() / it.sigma;
    let normalized = state.weight.map(|x| x * inv);
    Ok((
        normalized,
        SpectralState {
            u: it.u,
            weight: state.weight.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_converges_to_unit_top_singular_value() {
        let w = Tensor::new(&[2, 2], vec![3.0f64, 0.0, 0.0, 1.0]).unwrap();
        let st = SpectralState::new(w).unwrap();
        let (n, st) = spectral_normalize(&st, 50).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0 / 3.0];
        for (a, b) in n.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{:?}", n.data());
        }
        let norm: f64 = st.u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthonormal_weight_is_a_fixed_point() {
        let (s, c) = (0.6f64, 0.8f64);
        let w = Tensor::new(&[2, 2], vec![c, -s, s, c]).unwrap();
        let (n, _) = spectral_normalize(&SpectralState::new(w.clone()).unwrap(), 3).unwrap();
        for (a, b) in n.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_and_zero_iterations_are_errors() {
        let w = Tensor::<f64>::zeros(&[3, 2]);
        assert!(spectral_normalize(&SpectralState::new(w).unwrap(), 5).is_err());
        let w = Tensor::<f64>::full(&[3, 2], 1.0);
        assert!(spectral_normalize(&SpectralState::new(w).unwrap(), 0).is_err());
    }
}
