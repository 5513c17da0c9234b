//! Multi-head self-attention and pre-norm transformer blocks over token
//! sequences shaped `(B, N, D)`.

use crate::error::{Error, Result};
use crate::nn::{Bound, Init, LayerNorm, Linear, ParamLayout, Scalar, Var};

/// Projection weights of one self-attention layer. Projections carry no
/// bias; there is no positional term inside the attention itself.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub model_dim: usize,
    pub num_heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl SelfAttention {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        model_dim: usize,
        num_heads: usize,
        out_gain: f64,
    ) -> Result<Self> {
        if num_heads == 0 || !model_dim.is_multiple_of(num_heads) {
            return Err(Error::invalid(format!(
                "model_dim {model_dim} is not divisible by {num_heads} heads"
            )));
        }
        let std = (1.0 / model_dim as f64).sqrt();
        Ok(Self {
            model_dim,
            num_heads,
            wq: Linear::new(layout, &format!("{name}.q"), model_dim, model_dim, false),
            wk: Linear::new(layout, &format!("{name}.k"), model_dim, model_dim, false),
            wv: Linear::new(layout, &format!("{name}.v"), model_dim, model_dim, false),
            wo: Linear::with_init(
                layout,
                &format!("{name}.o"),
                model_dim,
                model_dim,
                false,
                Init::Normal(std * out_gain),
            ),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, tokens: &Var<T>) -> Result<Var<T>> {
        multi_head_self_attention(
            tokens,
            self.num_heads,
            p.var(self.wq.weight),
            p.var(self.wk.weight),
            p.var(self.wv.weight),
            p.var(self.wo.weight),
        )
    }
}

/// Scaled dot-product attention of every token against every other,
/// split across `num_heads` heads. Weights are `(D, D)` matrices applied
/// as `x W^T`.
pub fn multi_head_self_attention<T: Scalar>(
    tokens: &Var<T>,
    num_heads: usize,
    wq: &Var<T>,
    wk: &Var<T>,
    wv: &Var<T>,
    wo: &Var<T>,
) -> Result<Var<T>> {
    let (b, n, d) = match tokens.shape() {
        &[b, n, d] => (b, n, d),
        s => return Err(Error::invalid(format!("attention expects (B, N, D) tokens, got {s:?}"))),
    };
    for w in [wq, wk, wv, wo] {
        if w.shape() != [d, d] {
            return Err(Error::shape("attention token dim", tokens.shape(), w.shape()));
        }
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::invalid(format!(
            "model_dim {d} is not divisible by {num_heads} heads"
        )));
    }
    let dh = d / num_heads;
    let split = |x: Var<T>| -> Result<Var<T>> {
        x.reshape(&[b, n, num_heads, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * num_heads, n, dh])
    };
    let q = split(tokens.linear(wq, None)?)?;
    let k = split(tokens.linear(wk, None)?)?;
    let v = split(tokens.linear(wv, None)?)?;
    let scores = q.bmm(&k, true)?.scale(1.0 / (dh as f64).sqrt());
    let attn = scores.softmax_last()?;
    let mixed = attn
        .bmm(&v, false)?
        .reshape(&[b, num_heads, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, n, d])?;
    mixed.linear(wo, None)
}

/// `x + Attn(LN(x))`, then `x + MLP(LN(x))` with a GELU hidden layer.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub const MLP_RATIO: usize = 2;

    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, heads: usize) -> Result<Self> {
        let hidden = dim * Self::MLP_RATIO;
        Ok(Self {
            norm1: LayerNorm::new(layout, &format!("{name}.norm1"), dim),
            attn: SelfAttention::new(layout, &format!("{name}.attn"), dim, heads, 0.1)?,
            norm2: LayerNorm::new(layout, &format!("{name}.norm2"), dim),
            fc1: Linear::new(layout, &format!("{name}.fc1"), dim, hidden, true),
            fc2: Linear::with_init(
                layout,
                &format!("{name}.fc2"),
                hidden,
                dim,
                true,
                Init::Normal(0.1 * (1.0 / hidden as f64).sqrt()),
            ),
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.attn.forward(p, &self.norm1.forward(p, x)?)?;
        let x = x.add(&h)?;
        let h = self.fc1.forward(p, &self.norm2.forward(p, &x)?)?.gelu();
        let h = self.fc2.forward(p, &h)?;
        x.add(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Var<f64> {
        Var::constant(Tensor::from_fn(shape, |_| StandardNormal.sample(rng)))
    }

    #[test]
    fn single_token_reduces_to_output_times_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 6;
        let x = randn(&mut rng, &[1, 1, d]);
        let (wq, wk, wv, wo) = (
            randn(&mut rng, &[d, d]),
            randn(&mut rng, &[d, d]),
            randn(&mut rng, &[d, d]),
            randn(&mut rng, &[d, d]),
        );
        let y = multi_head_self_attention(&x, 2, &wq, &wk, &wv, &wo).unwrap();
        let want = x.linear(&wv, None).unwrap().linear(&wo, None).unwrap();
        for (a, b) in y.value().data().iter().zip(want.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 8;
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Var::constant(Tensor::new(&[1, 2, d], [row.clone(), row].concat()).unwrap());
        let ws: Vec<_> = (0..4).map(|_| randn(&mut rng, &[d, d])).collect();
        let y = multi_head_self_attention(&x, 4, &ws[0], &ws[1], &ws[2], &ws[3]).unwrap();
        let out = y.value().data();
        assert_eq!(out[..d], out[d..]);
    }

    #[test]
    fn rejects_indivisible_heads_and_wrong_dims() {
        let mut layout = ParamLayout::new();
        assert!(SelfAttention::new(&mut layout, "a", 10, 3, 1.0).is_err());
        let x = Var::constant(Tensor::<f64>::zeros(&[1, 2, 4]));
        let w = Var::constant(Tensor::<f64>::zeros(&[6, 6]));
        assert!(multi_head_self_attention(&x, 2, &w, &w, &w, &w).is_err());
    }
}
