use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Sinusoidal encoding of a scalar timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepEmbedding {
    pub t: f64,
    pub dim: usize,
    /// `[sin(t f_0), cos(t f_0), sin(t f_1), cos(t f_1), ...]`
    pub vector: Vec<f64>,
}

impl TimestepEmbedding {
    /// Frequency of pair `i`: `10000^(-2i/dim)`.
    pub fn frequency(i: usize, dim: usize) -> f64 {
        10000f64.powf(-(2.0 * i as f64) / dim as f64)
    }

    /// Broadcast over a batch as a `(B, dim, 1, 1)` tensor.
    pub fn as_channel_tensor<T: Scalar>(&self, batch: usize) -> Tensor<T> {
        let per: Vec<T> = self.vector.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let data = (0..batch).flat_map(|_| per.iter().copied()).collect();
        Tensor::new(&[batch, self.dim, 1, 1], data).expect("embedding shape")
    }

    /// Same embedding as a `(B, dim)` matrix.
    pub fn as_rows<T: Scalar>(&self, batch: usize) -> Tensor<T> {
        self.as_channel_tensor(batch)
            .reshaped(&[batch, self.dim])
            .expect("embedding rows")
    }
}

pub fn time_embedding(t: f64, dim: usize) -> Result<TimestepEmbedding> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "time embedding dim must be even and positive, got {dim}"
        )));
    }
    if !t.is_finite() {
        return Err(Error::invalid("timestep must be finite"));
    }
    let vector = (0..dim / 2)
        .flat_map(|i| {
            let a = t * TimestepEmbedding::frequency(i, dim);
            [a.sin(), a.cos()]
        })
        .collect();
    Ok(TimestepEmbedding { t, dim, vector })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_timestep_is_sin_zero_cos_one() {
        let e = time_embedding(0.0, 16).unwrap();
        for pair in e.vector.chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = time_embedding(417.0, 64).unwrap();
        assert_eq!(a, time_embedding(417.0, 64).unwrap());
        assert!(a.vector.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn consecutive_timesteps_differ_in_every_sin_component() {
        let a = time_embedding(1.0, 8).unwrap();
        let b = time_embedding(2.0, 8).unwrap();
        for i in 0..4 {
            let f = TimestepEmbedding::frequency(i, 8);
            assert_eq!(a.vector[2 * i], f.sin());
            assert_eq!(b.vector[2 * i], (2.0 * f).sin());
            assert_ne!(a.vector[2 * i], b.vector[2 * i]);
        }
    }

    #[test]
    fn odd_dim_is_rejected() {
        assert!(time_embedding(3.0, 7).is_err());
    }
}
