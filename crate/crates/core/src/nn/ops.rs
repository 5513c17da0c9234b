//! Differentiable tensor operations.

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor, Var};

fn c<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

/// Row-major strides of `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Visit every multi-index of `shape` in row-major order, passing the
/// offset computed with `strides`.
fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..n {
        f(off);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Split `shape` around `axis` into `(outer, n, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce_axis<T: Scalar>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(t.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    let d = t.data();
    for o in 0..outer {
        for k in 0..n {
            let src = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(&shape, out).expect("reduced shape")
}

fn expand_axis<T: Scalar>(t: &Tensor<T>, axis: usize, n: usize) -> Tensor<T> {
    let (outer, _, inner) = split_axis(t.shape(), axis);
    let mut out = Vec::with_capacity(outer * n * inner);
    let d = t.data();
    for o in 0..outer {
        for _ in 0..n {
            out.extend_from_slice(&d[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = n;
    Tensor::new(&shape, out).expect("expanded shape")
}

impl<T: Scalar> Var<T> {
    fn check_same(&self, other: &Var<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
        let value = self.value().map(f);
        Var::from_op(value, vec![self.clone()], move |g, inputs, out| {
            let x = inputs[0];
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(out.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape(), data).expect("grad shape"))]
        })
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same(other, "add")?;
        let value = self.value().zip_map(other.value(), |a, b| a + b);
        Ok(Var::from_op(value, vec![self.clone(), other.clone()], |g, _, _| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same(other, "sub")?;
        let value = self.value().zip_map(other.value(), |a, b| a - b);
        Ok(Var::from_op(value, vec![self.clone(), other.clone()], |g, _, _| {
            vec![Some(g.clone()), Some(g.map(|x| -x))]
        }))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same(other, "mul")?;
        let value = self.value().zip_map(other.value(), |a, b| a * b);
        Ok(Var::from_op(value, vec![self.clone(), other.clone()], |g, x, _| {
            vec![Some(g.zip_map(x[1], |g, b| g * b)), Some(g.zip_map(x[0], |g, a| g * a))]
        }))
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same(other, "div")?;
        let value = self.value().zip_map(other.value(), |a, b| a / b);
        Ok(Var::from_op(value, vec![self.clone(), other.clone()], |g, x, out| {
            let gb = Tensor::from_fn(g.shape(), |i| -g.data()[i] * out.data()[i] / x[1].data()[i]);
            vec![Some(g.zip_map(x[1], |g, b| g / b)), Some(gb)]
        }))
    }

    pub fn scale(&self, s: f64) -> Var<T> {
        let s: T = c(s);
        let value = self.value().map(|x| x * s);
        Var::from_op(value, vec![self.clone()], move |g, _, _| vec![Some(g.map(|x| x * s))])
    }

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        let s: T = c(s);
        let value = self.value().map(|x| x + s);
        Var::from_op(value, vec![self.clone()], |g, _, _| vec![Some(g.clone())])
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn abs(&self) -> Var<T> {
        // Subgradient 0 at the origin.
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sqrt(&self) -> Var<T> {
        self.unary(|x| x.sqrt(), |_, y| c::<T>(0.5) / y)
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn relu(&self) -> Var<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s: T = c(slope);
        self.unary(
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// `max(x, lo)`; gradient passes only where `x > lo`.
    pub fn clamp_min(&self, lo: f64) -> Var<T> {
        let lo: T = c(lo);
        self.unary(
            move |x| if x > lo { x } else { lo },
            move |x, _| if x > lo { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Var<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary(|x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)` evaluated without overflow.
    pub fn softplus(&self) -> Var<T> {
        self.unary(
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
        )
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Var<T> {
        let k: T = c((2.0 / std::f64::consts::PI).sqrt());
        let a: T = c(0.044715);
        let half: T = c(0.5);
        let three: T = c(3.0);
        self.unary(
            move |x| half * x * (T::one() + (k * (x + a * x * x * x)).tanh()),
            move |x, _| {
                let inner = k * (x + a * x * x * x);
                let th = inner.tanh();
                let dinner = k * (T::one() + three * a * x * x);
                half * (T::one() + th) + half * x * (T::one() - th * th) * dinner
            },
        )
    }

    pub fn sum_all(&self) -> Var<T> {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(value, vec![self.clone()], move |g, _, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<T>> {
        if axis >= self.shape().len() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[axis];
        let value = reduce_axis(self.value(), axis);
        Ok(Var::from_op(value, vec![self.clone()], move |g, _, _| {
            vec![Some(expand_axis(g, axis, n))]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<T>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid(format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Numpy-style broadcast to `shape`; ranks must agree and every source
    /// extent must be 1 or equal to the target.
    pub fn broadcast_as(&self, shape: &[usize]) -> Result<Var<T>> {
        let src = self.shape().to_vec();
        if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &t)| s != t && s != 1) {
            return Err(Error::shape("broadcast", &src, shape));
        }
        if src == shape {
            return Ok(self.clone());
        }
        let src_strides = strides_of(&src);
        let bstrides: Vec<usize> = src
            .iter()
            .zip(&src_strides)
            .map(|(&s, &st)| if s == 1 { 0 } else { st })
            .collect();
        let mut out = Vec::with_capacity(shape.iter().product());
        let d = self.value().data();
        for_each_offset(shape, &bstrides, |off| out.push(d[off]));
        let value = Tensor::new(shape, out)?;
        let target = shape.to_vec();
        Ok(Var::from_op(value, vec![self.clone()], move |g, _, _| {
            let mut acc = vec![T::zero(); src.iter().product()];
            let gd = g.data();
            let mut i = 0;
            for_each_offset(&target, &bstrides, |off| {
                acc[off] += gd[i];
                i += 1;
            });
            vec![Some(Tensor::new(&src, acc).expect("broadcast grad"))]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let src = self.shape().to_vec();
        let value = self.value().clone().reshaped(shape)?;
        Ok(Var::from_op(value, vec![self.clone()], move |g, _, _| {
            vec![Some(g.clone().reshaped(&src).expect("reshape grad"))]
        }))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<T>> {
        let nd = self.shape().len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..nd).collect::<Vec<_>>() {
            return Err(Error::invalid(format!("invalid permutation {perm:?} for rank {nd}")));
        }
        let value = permute_tensor(self.value(), perm);
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(Var::from_op(value, vec![self.clone()], move |g, _, _| {
            vec![Some(permute_tensor(g, &inverse))]
        }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.value().data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let value = Tensor::new(&oshape, out)?;
        Ok(Var::from_op(value, vec![self.clone()], move |g, _, _| {
            let mut full = vec![T::zero(); shape.iter().product()];
            let gd = g.data();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                full[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(&shape, full).expect("narrow grad"))]
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn cat(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("cat of nothing"))?;
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("cat axis {axis} out of range")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("cat", &base, s));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &n) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&p.value().data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(Var::from_op(value, parts.to_vec(), move |g, inputs, _| {
            let gd = g.data();
            let mut grads: Vec<Vec<T>> = sizes.iter().map(|&n| Vec::with_capacity(outer * n * inner)).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gp, &n) in grads.iter_mut().zip(&sizes) {
                    gp.extend_from_slice(&gd[off..off + n * inner]);
                    off += n * inner;
                }
            }
            grads
                .into_iter()
                .zip(inputs)
                .map(|(d, x)| Some(Tensor::new(x.shape(), d).expect("cat grad")))
                .collect()
        }))
    }

    /// `y = x W^T + b` over the last axis of `x`; `W` is `(out, in)`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        let din = *xs.last().ok_or_else(|| Error::invalid("linear on a 0-d tensor"))?;
        if ws.len() != 2 || ws[1] != din {
            return Err(Error::shape("linear", &xs, &ws));
        }
        let dout = ws[0];
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(Error::shape("linear bias", b.shape(), &[dout]));
            }
        }
        let rows = self.value().len() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = bias {
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(b.value().data());
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            false,
            true,
            rows,
            dout,
            din,
            T::one(),
            self.value().data(),
            weight.value().data(),
            beta,
            &mut out,
        );
        let mut oshape = xs.clone();
        *oshape.last_mut().expect("rank >= 1") = dout;
        let value = Tensor::new(&oshape, out)?;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Var::from_op(value, parents, move |g, inputs, _| {
            let (x, w) = (inputs[0], inputs[1]);
            let mut gx = vec![T::zero(); rows * din];
            T::gemm(
                false,
                false,
                rows,
                din,
                dout,
                T::one(),
                g.data(),
                w.data(),
                T::zero(),
                &mut gx,
            );
            let mut gw = vec![T::zero(); dout * din];
            T::gemm(
                true,
                false,
                dout,
                din,
                rows,
                T::one(),
                g.data(),
                x.data(),
                T::zero(),
                &mut gw,
            );
            let mut grads = vec![
                Some(Tensor::new(x.shape(), gx).expect("linear gx")),
                Some(Tensor::new(w.shape(), gw).expect("linear gw")),
            ];
            if has_bias {
                let mut gb = vec![T::zero(); dout];
                for r in 0..rows {
                    for (a, &v) in gb.iter_mut().zip(&g.data()[r * dout..(r + 1) * dout]) {
                        *a += v;
                    }
                }
                grads.push(Some(Tensor::new(&[dout], gb).expect("linear gb")));
            }
            grads
        }))
    }

    /// Batched product of `(G, M, K)` with `(G, K, N)`, or with `(G, N, K)`
    /// when `trans_rhs` is set.
    pub fn bmm(&self, rhs: &Var<T>, trans_rhs: bool) -> Result<Var<T>> {
        let (a, b) = (self.shape().to_vec(), rhs.shape().to_vec());
        if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
            return Err(Error::shape("bmm", &a, &b));
        }
        let (g, m, k) = (a[0], a[1], a[2]);
        let (kb, n) = if trans_rhs { (b[2], b[1]) } else { (b[1], b[2]) };
        if kb != k {
            return Err(Error::shape("bmm", &a, &b));
        }
        let mut out = vec![T::zero(); g * m * n];
        for i in 0..g {
            T::gemm(
                false,
                trans_rhs,
                m,
                n,
                k,
                T::one(),
                &self.value().data()[i * m * k..],
                &rhs.value().data()[i * k * n..],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let value = Tensor::new(&[g, m, n], out)?;
        Ok(Var::from_op(
            value,
            vec![self.clone(), rhs.clone()],
            move |gr, inputs, _| {
                let (x, y) = (inputs[0].data(), inputs[1].data());
                let gd = gr.data();
                let mut gx = vec![T::zero(); g * m * k];
                let mut gy = vec![T::zero(); g * k * n];
                for i in 0..g {
                    let go = &gd[i * m * n..(i + 1) * m * n];
                    // dX = dO · op(Y)^T
                    T::gemm(
                        false,
                        !trans_rhs,
                        m,
                        k,
                        n,
                        T::one(),
                        go,
                        &y[i * k * n..],
                        T::zero(),
                        &mut gx[i * m * k..(i + 1) * m * k],
                    );
                    if trans_rhs {
                        // Y is (N, K): dY = dO^T · X
                        T::gemm(
                            true,
                            false,
                            n,
                            k,
                            m,
                            T::one(),
                            go,
                            &x[i * m * k..],
                            T::zero(),
                            &mut gy[i * k * n..(i + 1) * k * n],
                        );
                    } else {
                        // Y is (K, N): dY = X^T · dO
                        T::gemm(
                            true,
                            false,
                            k,
                            n,
                            m,
                            T::one(),
                            &x[i * m * k..],
                            go,
                            T::zero(),
                            &mut gy[i * k * n..(i + 1) * k * n],
                        );
                    }
                }
                vec![
                    Some(Tensor::new(inputs[0].shape(), gx).expect("bmm gx")),
                    Some(Tensor::new(inputs[1].shape(), gy).expect("bmm gy")),
                ]
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        let n = *shape.last().ok_or_else(|| Error::invalid("softmax on a 0-d tensor"))?;
        let mut out = self.value().data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(Var::from_op(value, vec![self.clone()], move |g, _, y| {
            let mut gx = vec![T::zero(); g.len()];
            for ((gx, gr), yr) in gx.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for i in 0..n {
                    gx[i] = yr[i] * (gr[i] - dot);
                }
            }
            vec![Some(Tensor::new(g.shape(), gx).expect("softmax grad"))]
        }))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        let last = shape.len() - 1;
        let d = shape[last];
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", &shape, gamma.shape()));
        }
        let mean = self.mean_axis(last)?.broadcast_as(&shape)?;
        let centered = self.sub(&mean)?;
        let var = centered.square().mean_axis(last)?;
        let inv = var.add_scalar(eps).sqrt().broadcast_as(&shape)?;
        let normed = centered.div(&inv)?;
        let mut pshape = vec![1; shape.len()];
        pshape[last] = d;
        let g = gamma.reshape(&pshape)?.broadcast_as(&shape)?;
        let b = beta.reshape(&pshape)?.broadcast_as(&shape)?;
        normed.mul(&g)?.add(&b)
    }
}

pub(crate) fn permute_tensor<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let src_strides = strides_of(t.shape());
    let oshape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
    let ostrides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let mut out = Vec::with_capacity(t.len());
    let d = t.data();
    for_each_offset(&oshape, &ostrides, |off| out.push(d[off]));
    Tensor::new(&oshape, out).expect("permuted shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_grad_sums_over_expanded_axes() {
        let v = Var::param(t(&[1, 2, 1], &[1.0, 2.0]));
        let y = v.broadcast_as(&[3, 2, 4]).unwrap();
        assert_eq!(y.value().data()[..4], [1.0; 4]);
        let g = y.sum_all().backward().unwrap();
        assert_eq!(g.get(&v).unwrap().data(), &[12.0, 12.0]);
    }

    #[test]
    fn permute_round_trips() {
        let x = Var::constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(z.value(), x.value());
    }

    #[test]
    fn cat_and_narrow_are_inverse() {
        let a = Var::constant(Tensor::from_fn(&[2, 1, 3], |i| i as f64));
        let b = Var::constant(Tensor::from_fn(&[2, 2, 3], |i| 10.0 + i as f64));
        let c = Var::cat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 1).unwrap().value(), a.value());
        assert_eq!(c.narrow(1, 1, 2).unwrap().value(), b.value());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        let x = Var::constant(t(&[3], &[-800.0, 0.0, 800.0]));
        let y = x.softplus();
        let d = y.value().data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d[2], 800.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Var::constant(Tensor::from_fn(&[3, 5], |i| (i as f64).sin() * 4.0));
        let y = x.softmax_last().unwrap();
        for row in y.value().data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_add_names_both_shapes() {
        let a = Var::constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = Var::constant(Tensor::<f64>::zeros(&[3, 2]));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }
}
