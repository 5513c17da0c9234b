//! Spatial operations on `(B, C, H, W)` tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::conv_out_size;
use crate::nn::{Scalar, Tensor, Var};

/// Geometry of a 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            has_bias: true,
        }
    }

    /// 3x3, stride 1, padding 1.
    pub fn same3(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 3, 1, 1)
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_size(h, self.kernel.0, self.stride, self.padding)?,
            conv_out_size(w, self.kernel.1, self.stride, self.padding)?,
        ))
    }
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, col: &mut [T]) {
    let ohw = g.oh * g.ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * ohw;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geom, x: &mut [T]) {
    let ohw = g.oh * g.ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * ohw;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] += col[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    /// 2-d cross-correlation of `self` `(B, C, H, W)` with `weight`
    /// `(O, C, kh, kw)` plus optional per-channel `bias`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, stride: usize, padding: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        let ws = weight.shape();
        if ws.len() != 4 || ws[1] != c {
            return Err(Error::shape("conv2d input/weight", self.shape(), ws));
        }
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if let Some(bv) = bias {
            if bv.shape() != [o] {
                return Err(Error::shape("conv2d bias", bv.shape(), &[o]));
            }
        }
        let (oh, ow) = match (
            conv_out_size(h, kh, stride, padding),
            conv_out_size(w, kw, stride, padding),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(Error::shape("conv2d window", self.shape(), ws)),
        };
        let g = Geom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let ckk = c * kh * kw;
        let ohw = oh * ow;
        let chw = c * h * w;
        let xd = self.value().data();
        let wd = weight.value().data();
        let mut out = vec![T::zero(); b * o * ohw];
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); ckk * ohw]
        };
        for bi in 0..b {
            let dst = &mut out[bi * o * ohw..(bi + 1) * o * ohw];
            let beta = match bias {
                Some(bv) => {
                    for (oc, row) in dst.chunks_mut(ohw).enumerate() {
                        row.fill(bv.value().data()[oc]);
                    }
                    T::one()
                }
                None => T::zero(),
            };
            let xb = &xd[bi * chw..(bi + 1) * chw];
            let src: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            T::gemm(false, false, o, ohw, ckk, T::one(), wd, src, beta, dst);
        }
        let value = Tensor::new(&[b, o, oh, ow], out)?;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bv) = bias {
            parents.push(bv.clone());
        }
        let has_bias = bias.is_some();
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        Ok(Var::from_op(value, parents, move |gr, inputs, _| {
            let (x, wt) = (inputs[0].data(), inputs[1].data());
            let gd = gr.data();
            let mut gx = if need_x { vec![T::zero(); b * chw] } else { Vec::new() };
            let mut gw = vec![T::zero(); o * ckk];
            let mut col = vec![T::zero(); ckk * ohw];
            for bi in 0..b {
                let go = &gd[bi * o * ohw..(bi + 1) * o * ohw];
                let xb = &x[bi * chw..(bi + 1) * chw];
                if need_w {
                    let src: &[T] = if g.is_pointwise() {
                        xb
                    } else {
                        im2col(xb, &g, &mut col);
                        &col
                    };
                    T::gemm(false, true, o, ckk, ohw, T::one(), go, src, T::one(), &mut gw);
                }
                if need_x {
                    let gxb = &mut gx[bi * chw..(bi + 1) * chw];
                    if g.is_pointwise() {
                        T::gemm(true, false, ckk, ohw, o, T::one(), wt, go, T::zero(), gxb);
                    } else {
                        T::gemm(true, false, ckk, ohw, o, T::one(), wt, go, T::zero(), &mut col);
                        col2im(&col, &g, gxb);
                    }
                }
            }
            let mut grads = vec![
                need_x.then(|| Tensor::new(inputs[0].shape(), gx).expect("conv gx")),
                need_w.then(|| Tensor::new(inputs[1].shape(), gw).expect("conv gw")),
            ];
            if has_bias {
                let mut gb = vec![T::zero(); o];
                for bi in 0..b {
                    for (oc, acc) in gb.iter_mut().enumerate() {
                        let s = (bi * o + oc) * ohw;
                        *acc += gd[s..s + ohw].iter().copied().sum();
                    }
                }
                grads.push(Some(Tensor::new(&[o], gb).expect("conv gb")));
            }
            grads
        }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let xd = self.value().data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in xd.chunks(h * w) {
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for x in 0..ow {
                    out.push(row[x / factor]);
                }
            }
        }
        let value = Tensor::new(&[b, c, oh, ow], out)?;
        Ok(Var::from_op(value, vec![self.clone()], move |g, inputs, _| {
            let mut gx = vec![T::zero(); b * c * h * w];
            for (gp, dst) in g.data().chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                for y in 0..oh {
                    for x in 0..ow {
                        dst[(y / factor) * w + x / factor] += gp[y * ow + x];
                    }
                }
            }
            vec![Some(Tensor::new(inputs[0].shape(), gx).expect("upsample grad"))]
        }))
    }

    /// Mean over non-overlapping `factor x factor` blocks.
    pub fn avg_pool(&self, factor: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "avg_pool factor {factor} does not divide {h}x{w}"
            )));
        }
        let value = area_downsample(self.value(), factor)?;
        let (oh, ow) = (h / factor, w / factor);
        let inv = T::one() / T::from_f64_lossy((factor * factor) as f64);
        Ok(Var::from_op(value, vec![self.clone()], move |g, inputs, _| {
            let mut gx = vec![T::zero(); b * c * h * w];
            for (gp, dst) in g.data().chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] = gp[(y / factor) * ow + x / factor] * inv;
                    }
                }
            }
            vec![Some(Tensor::new(inputs[0].shape(), gx).expect("avg_pool grad"))]
        }))
    }

    /// Mirror padding without edge repetition (`dcb|abcd|cba`).
    pub fn pad_reflect(&self, pad: usize) -> Result<Var<T>> {
        let (b, c, h, w) = self.value().dims4()?;
        if pad >= h || pad >= w {
            return Err(Error::invalid(format!("reflect pad {pad} too large for {h}x{w}")));
        }
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let reflect = move |i: isize, n: usize| -> usize {
            let n = n as isize;
            let r = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            r as usize
        };
        let index: Vec<usize> = (0..oh)
            .flat_map(|y| {
                let sy = reflect(y as isize - pad as isize, h);
                (0..ow).map(move |x| sy * w + reflect(x as isize - pad as isize, w))
            })
            .collect();
        let xd = self.value().data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in xd.chunks(h * w) {
            out.extend(index.iter().map(|&i| plane[i]));
        }
        let value = Tensor::new(&[b, c, oh, ow], out)?;
        Ok(Var::from_op(value, vec![self.clone()], move |g, inputs, _| {
            let mut gx = vec![T::zero(); b * c * h * w];
            for (gp, dst) in g.data().chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                for (&i, &v) in index.iter().zip(gp) {
                    dst[i] += v;
                }
            }
            vec![Some(Tensor::new(inputs[0].shape(), gx).expect("pad grad"))]
        }))
    }
}

/// Block-mean downsampling of a `(B, C, H, W)` tensor.
pub fn area_downsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "area downsample factor {factor} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::from_f64_lossy((factor * factor) as f64);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for y in oy * factor..(oy + 1) * factor {
                    for xx in ox * factor..(ox + 1) * factor {
                        s += plane[y * w + xx];
                    }
                }
                out.push(s * inv);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (b, c, h, wd) = x.dims4().unwrap();
        let (o, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        Tensor::from_fn(&[b, o, oh, ow], |i| {
            let ox = i % ow;
            let oy = (i / ow) % oh;
            let oc = (i / (ow * oh)) % o;
            let bi = i / (ow * oh * o);
            let mut s = 0.0;
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            s += x.at4(bi, ci, iy as usize, ix as usize) * w.at4(oc, ci, ky, kx);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn conv_matches_direct_summation() {
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (1, 0, 1), (2, 0, 3)] {
            let x = Tensor::from_fn(&[2, 3, 7, 6], |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0);
            let w = Tensor::from_fn(&[4, 3, k, k], |i| ((i * 104729) % 17) as f64 / 8.0 - 1.0);
            let y = Var::constant(x.clone())
                .conv2d(&Var::constant(w.clone()), None, stride, pad)
                .unwrap();
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.value().data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reflect_pad_mirrors_without_edge() {
        let x = Var::constant(Tensor::new(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert!(x.pad_reflect(1).is_err());
        let x = Var::constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64));
        let p = x.pad_reflect(1).unwrap();
        assert_eq!(&p.value().data()[..5], &[4.0, 3.0, 4.0, 5.0, 4.0]);
    }

    #[test]
    fn area_downsample_of_constant_is_constant() {
        let x = Tensor::full(&[1, 3, 8, 8], 0.25f64);
        let y = area_downsample(&x, 4).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }
}
