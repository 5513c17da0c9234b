//! The invariant suite behind `catformer verify`: closed-form identities,
//! zero-weight reductions, the spectral-norm SVD oracle and
//! finite-difference gradient checks of every op, loss term and network
//! component.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::discriminator::{Discriminator, DiscriminatorConfig, SpectralMode};
use crate::error::Result;
use crate::generator::{Generator, GeneratorConfig, ResidualBlock, Rrdb, RRDB_RESIDUAL_SCALE};
use crate::losses::{self, Extractor, LossTerms, LossWeights, PYRAMID_SEED};
use crate::metrics::{self, SsimConstants};
use crate::nn::{
    gradcheck, matrix_dims, multi_head_self_attention, sample_indices, Bound, GradcheckReport, ParamLayout, ParamSet,
    Tensor, TransformerBlock, Var,
};

/// Relative-error bound for every gradient check.
pub const GRAD_TOL: f64 = 1e-3;
/// Central-difference step.
pub const GRAD_EPS: f64 = 1e-6;
/// Allowed distance of a normalized layer's top singular value from 1.
pub const SPECTRAL_TOL: f64 = 1e-3;
pub const SPECTRAL_ITERS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    /// Human-readable acceptance condition.
    pub tolerance: String,
    pub measured: f64,
    pub passed: bool,
    /// Coordinates compared by a gradient check; 0 for other checks.
    pub coords: usize,
}

impl Check {
    fn within(group: &'static str, name: impl Into<String>, measured: f64, expected: f64, tol: f64) -> Self {
        Self {
            group,
            name: name.into(),
            tolerance: format!("|x - {expected}| <= {tol:e}"),
            measured,
            passed: measured == expected || (measured - expected).abs() <= tol,
            coords: 0,
        }
    }

    fn below(group: &'static str, name: impl Into<String>, measured: f64, tol: f64) -> Self {
        Self {
            group,
            name: name.into(),
            tolerance: format!("< {tol:e}"),
            measured,
            passed: measured < tol,
            coords: 0,
        }
    }

    fn gradient(group: &'static str, name: &str, r: &GradcheckReport) -> Self {
        Self {
            coords: r.checked,
            ..Self::below(
                group,
                format!("{name} [{} coords]", r.checked),
                r.max_rel_error,
                GRAD_TOL,
            )
        }
    }

    fn failed(group: &'static str, name: impl Into<String>, err: &crate::Error) -> Self {
        Self {
            group,
            name: format!("{} ({err})", name.into()),
            tolerance: "runs without error".into(),
            measured: f64::NAN,
            passed: false,
            coords: 0,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<10} {:<46} measured {:<12.6e} tolerance {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.group,
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Scale of the residual branch used by the residual-block checks.
    pub residual_scale: f64,
    /// Coordinates sampled per gradient check.
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            residual_scale: RRDB_RESIDUAL_SCALE,
            samples: 128,
            seed: 0,
        }
    }
}

fn randn(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

fn c(t: &Tensor<f64>) -> Var<f64> {
    Var::constant(t.clone())
}

fn value(v: &Var<f64>) -> f64 {
    v.value().data()[0]
}

/// Closed-form values of the metric and loss formulas.
pub fn formula_checks() -> Vec<Check> {
    const G: &str = "formula";
    let k = SsimConstants::default();
    let zeros = Tensor::full(&[1, 3, 16, 16], 0.0);
    let ones = Tensor::full(&[1, 3, 16, 16], 1.0);
    let ssim_const = metrics::ssim(&zeros, &ones, &k).unwrap_or(f64::NAN);
    let logits = c(&Tensor::full(&[2, 1, 4, 4], 0.0));
    let bce = losses::discriminator_loss(&logits, &logits)
        .map(|v| value(&v))
        .unwrap_or(f64::NAN);
    let cos = |a: Vec<f64>, b: Vec<f64>| {
        let a = c(&Tensor::new(&[1, 3], a).expect("3"));
        let b = c(&Tensor::new(&[1, 3], b).expect("3"));
        losses::contrastive_loss(&a, &b).map(|v| value(&v)).unwrap_or(f64::NAN)
    };
    vec![
        Check::within(
            G,
            "psnr(max 1, mse 0.25)",
            metrics::psnr_from_mse(0.25, 1.0),
            6.0206,
            1e-4,
        ),
        Check::within(
            G,
            "ssim(constant 0, constant 1)",
            ssim_const,
            k.c1() / (1.0 + k.c1()),
            1e-8,
        ),
        Check::within(G, "bce at zero logits", bce, std::f64::consts::LN_2, 1e-9),
        Check::within(
            G,
            "cosine loss, aligned",
            cos(vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]),
            0.0,
            0.0,
        ),
        Check::within(
            G,
            "cosine loss, orthogonal",
            cos(vec![1.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]),
            1.0,
            0.0,
        ),
        Check::within(
            G,
            "cosine loss, antiparallel",
            cos(vec![1.0, -2.0, 0.5], vec![-1.0, 2.0, -0.5]),
            2.0,
            0.0,
        ),
    ]
}

/// PSNR/MSE consistency, SSIM bounds and self-similarity, perceptual
/// distance at identity.
pub fn metric_checks(seed: u64) -> Vec<Check> {
    const G: &str = "metric";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = randn(&[1, 3, 24, 24], 0.2, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
    let b = randn(&[1, 3, 24, 24], 0.2, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
    let k = SsimConstants::default();
    let run = || -> Result<Vec<Check>> {
        let m = metrics::mse(&a, &b)?;
        let p = metrics::psnr(&a, &b, 1.0)?;
        let s_ab = metrics::ssim(&a, &b, &k)?;
        let s_ba = metrics::ssim(&b, &a, &k)?;
        let pyramid = Extractor::random_pyramid(PYRAMID_SEED);
        let w = pyramid.uniform_weights();
        Ok(vec![
            Check::within(G, "psnr from mse identity", p, 10.0 * (1.0 / m).log10(), 1e-9),
            Check::within(
                G,
                "psnr of identical images is +inf",
                metrics::psnr(&a, &a, 1.0)?,
                f64::INFINITY,
                0.0,
            ),
            Check::within(G, "ssim self-similarity", metrics::ssim(&a, &a, &k)?, 1.0, 1e-12),
            Check::within(G, "ssim symmetry", s_ab - s_ba, 0.0, 1e-12),
            Check::below(G, "ssim of distinct images below 1", s_ab, 1.0),
            Check::within(
                G,
                "perceptual distance at identity",
                metrics::lpips_distance(&a, &a, &pyramid, &w)?,
                0.0,
                1e-12,
            ),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::failed(G, "metric suite", &e)])
}

fn zeroed(layout: &ParamLayout) -> ParamSet<f64> {
    let mut p = layout.init::<f64, _>(&mut ChaCha8Rng::seed_from_u64(0));
    for t in p.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    p
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Zero-weight reductions plus the identity-conv residual constant.
pub fn reduction_checks(opts: &VerifyOptions) -> Vec<Check> {
    const G: &str = "reduction";
    let run = || -> Result<Vec<Check>> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut layout = ParamLayout::new();
        let rb = ResidualBlock::new(&mut layout, "rb", 4, opts.residual_scale);
        let rrdb = Rrdb::new(&mut layout, "rrdb", 4, 4);
        let p = zeroed(&layout);
        let x = randn(&[2, 4, 6, 6], 1.0, &mut rng);
        let rb_out = rb.forward(&p.bind(false), &c(&x))?;
        let rrdb_out = rrdb.forward(&p.bind(false), &c(&x))?;
        let mut checks = vec![
            Check::within(
                G,
                "residual_block, zero weights = identity",
                max_abs_diff(rb_out.value(), &x),
                0.0,
                0.0,
            ),
            Check::within(
                G,
                "rrdb_block, zero weights = identity",
                max_abs_diff(rrdb_out.value(), &x),
                0.0,
                0.0,
            ),
        ];

        // identity inner convs on a constant-1 input: 1 + scale
        let mut eye = p.clone();
        for conv in [&rb.conv1, &rb.conv2] {
            let w = eye.get_mut(conv.weight);
            for ch in 0..4 {
                w.data_mut()[(ch * 4 + ch) * 9 + 4] = 1.0;
            }
        }
        let ones = Tensor::full(&[1, 4, 5, 5], 1.0);
        let y = rb.forward(&eye.bind(false), &c(&ones))?;
        let worst = y.value().data().iter().map(|v| (v - 1.2).abs()).fold(0.0, f64::max);
        checks.push(Check::within(
            G,
            "residual_block, identity convs on 1 gives 1.2",
            1.2 + worst,
            1.2,
            1e-12,
        ));

        let g = Generator::new(GeneratorConfig::micro())?;
        let cch = g.config.latent_channels;
        let mut gp = g.init_params::<f64, _>(&mut rng);
        let za = randn(&[2, cch, 4, 4], 1.0, &mut rng);
        let zb = randn(&[2, cch, 4, 4], 1.0, &mut rng);
        gp.get_mut(g.fusion.bias.expect("fusion bias")).data_mut().fill(0.0);
        for (name, wa, wb) in [("[I | 0]", 1.0, 0.0), ("[0 | I]", 0.0, 1.0), ("[I/2 | I/2]", 0.5, 0.5)] {
            let w = gp.get_mut(g.fusion.weight);
            w.data_mut().fill(0.0);
            for o in 0..cch {
                w.data_mut()[o * 2 * cch + o] = wa;
                w.data_mut()[o * 2 * cch + cch + o] = wb;
            }
            let y = g.fuse(&gp.bind(false), &c(&za), &c(&zb))?;
            let want = za.zip_map(&zb, |a, b| wa * a + wb * b);
            checks.push(Check::within(
                G,
                format!("fusion selection {name}"),
                max_abs_diff(y.value(), &want),
                0.0,
                1e-7,
            ));
        }

        let names: Vec<String> = gp.names().to_vec();
        for n in names.iter().filter(|n| n.starts_with("main.")) {
            gp.by_name_mut(n).expect("listed").data_mut().fill(0.0);
        }
        let e = g.embedding(123.0)?;
        let y = g.main_branch(&gp.bind(false), &c(&za), &e)?;
        let plane = 16;
        let want = Tensor::from_fn(za.shape(), |k| za.data()[k] + e.vector[(k / plane) % cch]);
        checks.push(Check::within(
            G,
            "main_branch skip path = z + e_t",
            max_abs_diff(y.value(), &want),
            0.0,
            1e-7,
        ));
        Ok(checks)
    };
    run().unwrap_or_else(|e| vec![Check::failed(G, "reduction suite", &e)])
}

/// Largest singular value via SVD.
pub fn sigma_max(w: &Tensor<f64>) -> Result<f64> {
    let (rows, cols) = matrix_dims(w)?;
    let m = DMatrix::from_row_slice(rows, cols, w.data());
    Ok(m.singular_values().max())
}

/// Every normalized discriminator layer has unit top singular value after
/// converged power iteration.
pub fn spectral_checks(seed: u64) -> Vec<Check> {
    const G: &str = "spectral";
    let run = || -> Result<Vec<Check>> {
        // 8-wide ladder: every matricization is at most 8 x 128
        let d = Discriminator::new(DiscriminatorConfig {
            channels: [8, 8, 8, 8],
            ..DiscriminatorConfig::default()
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = d.init_params::<f64, _>(&mut rng);
        let mut buf = d.init_buffers(&p, &mut rng)?;
        d.converge_spectral(&p, &mut buf, SPECTRAL_ITERS)?;
        let weights = d.normalized_weights(&p, &buf)?;
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let (r, k) = matrix_dims(w)?;
                Ok(Check::within(
                    G,
                    format!("disc layer {i} ({r}x{k}) sigma_max"),
                    sigma_max(w)?,
                    1.0,
                    SPECTRAL_TOL,
                ))
            })
            .collect()
    };
    run().unwrap_or_else(|e| vec![Check::failed(G, "spectral suite", &e)])
}

/// Gradcheck `f` with respect to all of `inputs` jointly.
fn input_gradcheck<F>(name: &str, group: &'static str, inputs: &[Tensor<f64>], samples: usize, f: F) -> Check
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let run = || -> Result<Check> {
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::param(t.clone())).collect();
        let grads = f(&vars)?.backward()?;
        let analytic: Vec<f64> = vars.iter().flat_map(|v| grads.get_or_zeros(v).into_data()).collect();
        let point: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
        let eval = |flat: &[f64]| -> Result<f64> {
            let mut off = 0;
            let consts: Vec<Var<f64>> = inputs
                .iter()
                .map(|t| {
                    let v =
                        Var::constant(Tensor::new(t.shape(), flat[off..off + t.len()].to_vec()).expect("same shape"));
                    off += t.len();
                    v
                })
                .collect();
            Ok(value(&f(&consts)?))
        };
        let idx = sample_indices(point.len(), samples);
        let r = gradcheck(eval, &point, &analytic, &idx, GRAD_EPS)?;
        Ok(Check::gradient(group, name, &r))
    };
    run().unwrap_or_else(|e| Check::failed(group, name, &e))
}

/// Gradchecks of the differentiable building blocks.
pub fn op_gradchecks(opts: &VerifyOptions) -> Vec<Check> {
    const G: &str = "grad-op";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0b5);
    let n = opts.samples;
    let x = randn(&[2, 3, 6, 6], 1.0, &mut rng);
    let w = randn(&[4, 3, 3, 3], 0.5, &mut rng);
    let bias = randn(&[4], 0.5, &mut rng);
    let r = randn(&[2, 4, 3, 3], 1.0, &mut rng);
    let tokens = randn(&[2, 7, 8], 1.0, &mut rng);
    let wq = randn(&[8, 8], 0.4, &mut rng);
    let wk = randn(&[8, 8], 0.4, &mut rng);
    let wv = randn(&[8, 8], 0.4, &mut rng);
    let wo = randn(&[8, 8], 0.4, &mut rng);
    let rt = randn(&[2, 7, 8], 1.0, &mut rng);
    let gamma = randn(&[8], 1.0, &mut rng);
    let beta = randn(&[8], 1.0, &mut rng);
    let proj = |y: &Var<f64>, r: &Tensor<f64>| -> Result<Var<f64>> { Ok(y.mul(&c(r))?.sum_all()) };
    let r_up = randn(&[2, 3, 12, 12], 1.0, &mut rng);
    let r_pool = randn(&[2, 3, 3, 3], 1.0, &mut rng);
    let r_pad = randn(&[2, 3, 8, 8], 1.0, &mut rng);
    let mut layout = ParamLayout::new();
    let block = TransformerBlock::new(&mut layout, "tb", 8, 2).expect("8 / 2 heads");
    let block_params = layout.init::<f64, _>(&mut rng);
    vec![
        input_gradcheck("conv2d k3 s2 p1 (x, w, b)", G, &[x.clone(), w, bias], n, |v| {
            proj(&v[0].conv2d(&v[1], Some(&v[2]), 2, 1)?, &r)
        }),
        input_gradcheck(
            "multi-head self-attention",
            G,
            &[tokens.clone(), wq, wk, wv, wo],
            n,
            |v| proj(&multi_head_self_attention(&v[0], 2, &v[1], &v[2], &v[3], &v[4])?, &rt),
        ),
        input_gradcheck("layer norm", G, &[tokens.clone(), gamma, beta], n, |v| {
            proj(&v[0].layer_norm(&v[1], &v[2], 1e-5)?, &rt)
        }),
        input_gradcheck(
            "gelu / tanh / sigmoid / softplus",
            G,
            std::slice::from_ref(&tokens),
            n,
            |v| {
                let y = v[0]
                    .gelu()
                    .add(&v[0].tanh())?
                    .add(&v[0].sigmoid())?
                    .add(&v[0].softplus())?;
                proj(&y, &rt)
            },
        ),
        input_gradcheck("softmax", G, std::slice::from_ref(&tokens), n, |v| {
            proj(&v[0].softmax_last()?, &rt)
        }),
        input_gradcheck("transformer block", G, &[tokens], n, |v| {
            proj(&block.forward(&block_params.bind(false), &v[0])?, &rt)
        }),
        input_gradcheck("nearest upsample x2", G, std::slice::from_ref(&x), n, |v| {
            proj(&v[0].upsample_nearest(2)?, &r_up)
        }),
        input_gradcheck("average pool x2", G, std::slice::from_ref(&x), n, |v| {
            proj(&v[0].avg_pool(2)?, &r_pool)
        }),
        input_gradcheck("reflect pad 1", G, &[x], n, |v| proj(&v[0].pad_reflect(1)?, &r_pad)),
    ]
}

/// Gradchecks of every loss term with respect to its inputs.
pub fn loss_gradchecks(opts: &VerifyOptions) -> Vec<Check> {
    const G: &str = "grad-loss";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1055);
    let n = opts.samples;
    let img = |rng: &mut ChaCha8Rng| randn(&[1, 3, 16, 16], 0.4, rng).map(f64::tanh);
    let (sr, aux, hr) = (img(&mut rng), img(&mut rng), img(&mut rng));
    let lr = randn(&[1, 3, 4, 4], 0.4, &mut rng);
    let v1 = randn(&[2, 64], 1.0, &mut rng);
    let v2 = randn(&[2, 64], 1.0, &mut rng);
    let z1 = randn(&[1, 8, 4, 4], 1.0, &mut rng);
    let z2 = randn(&[1, 8, 4, 4], 1.0, &mut rng);
    let logits = randn(&[2, 1, 8, 8], 2.0, &mut rng);
    let logits2 = randn(&[2, 1, 8, 8], 2.0, &mut rng);
    let pyramid = Extractor::random_pyramid(PYRAMID_SEED);
    let lw = pyramid.uniform_weights();
    let names = LossTerms::NAMES;
    vec![
        input_gradcheck(names[0], G, std::slice::from_ref(&logits), n, |v| {
            Ok(losses::adv_loss_g(&v[0]))
        }),
        input_gradcheck(names[1], G, &[sr.clone(), aux.clone(), hr.clone()], n, |v| {
            losses::pixel_loss(&v[0], &v[1], &v[2], 0.5)
        }),
        input_gradcheck(names[2], G, &[sr.clone(), lr], n, |v| {
            losses::lr_consistency_loss(&v[0], &v[1])
        }),
        input_gradcheck(names[3], G, &[v1.clone(), v2.clone()], n, |v| {
            losses::contrastive_loss(&v[0], &v[1])
        }),
        input_gradcheck(names[4], G, &[sr.clone(), hr.clone()], n, |v| {
            losses::perceptual_loss(&v[0], &v[1], &pyramid, &lw, 0.1)
        }),
        input_gradcheck(names[5], G, &[sr.clone(), hr], n, |v| losses::edge_loss(&v[0], &v[1])),
        input_gradcheck(names[6], G, &[v1, v2, z1, z2], n, |v| {
            losses::latent_consistency_loss(&v[0], &v[1], &v[2], &v[3])
        }),
        input_gradcheck(names[7], G, &[sr, aux], n, |v| {
            losses::branch_consistency_loss(&v[0], &v[1])
        }),
        input_gradcheck("discriminator", G, &[logits, logits2], n, |v| {
            losses::discriminator_loss(&v[0], &v[1])
        }),
    ]
}

/// Parameter prefixes of the generator components.
pub const GENERATOR_COMPONENTS: [&str; 8] = [
    "enc.",
    "main.",
    "noise.",
    "fuse.",
    "dec_main.",
    "dec_aux.",
    "proj_main.",
    "proj_noise.",
];

fn param_gradchecks<F>(
    group: &'static str,
    label: &str,
    params: &ParamSet<f64>,
    prefixes: &[&str],
    samples: usize,
    objective: F,
) -> Vec<Check>
where
    F: Fn(&Bound<f64>) -> Result<Var<f64>>,
{
    let bound = params.bind(true);
    let analytic: Vec<f64> = match objective(&bound).and_then(|l| l.backward()) {
        Ok(g) => bound
            .collect_grads(&g)
            .into_iter()
            .flat_map(Tensor::into_data)
            .collect(),
        Err(e) => return vec![Check::failed(group, label, &e)],
    };
    let point = params.to_flat();
    let eval = |flat: &[f64]| -> Result<f64> {
        let mut q = params.clone();
        q.set_flat(flat)?;
        Ok(value(&objective(&q.bind(false))?))
    };
    prefixes
        .iter()
        .map(|prefix| {
            let all = params.flat_indices(prefix);
            let idx: Vec<usize> = sample_indices(all.len(), samples).into_iter().map(|i| all[i]).collect();
            let name = format!("{label} {}", prefix.trim_end_matches('.'));
            match gradcheck(eval, &point, &analytic, &idx, GRAD_EPS) {
                Ok(r) => Check::gradient(group, &name, &r),
                Err(e) => Check::failed(group, name, &e),
            }
        })
        .collect()
}

/// Rescale every weight tensor to unit fan-in gain.
///
/// The training init shrinks the innermost dense-block convs by the
/// 0.2 x 0.2 x 0.1 residual gains, which puts their gradients some eight
/// decades below the head's and under the roundoff floor of a double
/// precision central difference. The derivative code is the same at any
/// point, so the checks run at this better-conditioned one.
pub fn verification_point(params: &mut ParamSet<f64>) {
    for t in params.tensors_mut() {
        if t.shape().len() < 2 {
            continue;
        }
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std > 0.0 {
            let fan_in = n / t.shape()[0] as f64;
            let k = fan_in.sqrt().recip() / std;
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Full-forward gradchecks for every generator component and the
/// discriminator, on a 1x3x16x16 input in double precision.
pub fn network_gradchecks(opts: &VerifyOptions) -> Vec<Check> {
    const G: &str = "grad-net";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e7);
    let g = match Generator::new(GeneratorConfig::micro()) {
        Ok(g) => g,
        Err(e) => return vec![Check::failed(G, "generator", &e)],
    };
    let mut gp = g.init_params::<f64, _>(&mut rng);
    verification_point(&mut gp);
    let x = randn(&[1, 3, 16, 16], 0.5, &mut rng).map(f64::tanh);
    let r_img = randn(&[1, 3, 16, 16], 1.0, &mut rng);
    let r_aux = randn(&[1, 3, 16, 16], 1.0, &mut rng);
    let r_v = randn(&[1, g.config.proj_dim], 1.0, &mut rng);
    let r_vn = randn(&[1, g.config.proj_dim], 1.0, &mut rng);
    let r_z = randn(&[1, g.config.latent_channels, 2, 2], 1.0, &mut rng);
    let r_zn = randn(&[1, g.config.latent_channels, 2, 2], 1.0, &mut rng);
    let noise_seed = opts.seed ^ 0x5;
    let gen_objective = |p: &Bound<f64>| -> Result<Var<f64>> {
        let out = g.forward(p, &c(&x), 37.0, 0.1, &mut ChaCha8Rng::seed_from_u64(noise_seed))?;
        let parts = [
            (&out.sr_final, &r_img),
            (&out.sr_aux, &r_aux),
            (&out.v_denoised, &r_v),
            (&out.v_noise, &r_vn),
            (&out.z_denoised, &r_z),
            (&out.z_noise, &r_zn),
        ];
        let mut total = Var::constant(Tensor::scalar(0.0));
        for (y, r) in parts {
            total = total.add(&y.mul(&c(r))?.sum_all())?;
        }
        Ok(total)
    };
    let mut checks = param_gradchecks(G, "generator", &gp, &GENERATOR_COMPONENTS, opts.samples, gen_objective);

    let d = match Discriminator::new(DiscriminatorConfig::micro()) {
        Ok(d) => d,
        Err(e) => return vec![Check::failed(G, "discriminator", &e)],
    };
    let dp = d.init_params::<f64, _>(&mut rng);
    let buf = match d.init_buffers(&dp, &mut rng) {
        Ok(b) => b,
        Err(e) => return vec![Check::failed(G, "discriminator", &e)],
    };
    let img = randn(&[1, 3, 32, 32], 0.5, &mut rng).map(f64::tanh);
    let r_logit = randn(&[1, 1, 2, 2], 1.0, &mut rng);
    let disc_objective = |p: &Bound<f64>| -> Result<Var<f64>> {
        Ok(d.forward(p, &c(&img), SpectralMode::Frozen(&buf))?
            .mul(&c(&r_logit))?
            .sum_all())
    };
    checks.extend(param_gradchecks(
        G,
        "discriminator",
        &dp,
        &["disc."],
        opts.samples,
        disc_objective,
    ));

    // The whole unified objective, through D, the target path and every term.
    // Decoder coordinates are left to the per-component checks: L1 sums of
    // the decoded images raise the roundoff floor past their smallest
    // gradients.
    let pyramid = Extractor::random_pyramid(PYRAMID_SEED);
    let lw = pyramid.uniform_weights();
    let weights = LossWeights::default();
    let hr = randn(&[1, 3, 16, 16], 0.5, &mut rng).map(f64::tanh);
    let lr_native = crate::nn::area_downsample(&hr, 4).expect("16 divisible by 4");
    let d16 = Discriminator::new(DiscriminatorConfig {
        channels: [2, 2, 2, 2],
        ..DiscriminatorConfig::default()
    });
    let Ok(d16) = d16 else { return checks };
    let dp16 = d16.init_params::<f64, _>(&mut rng);
    let Ok(buf16) = d16.init_buffers(&dp16, &mut rng) else {
        return checks;
    };
    let total_objective = |p: &Bound<f64>| -> Result<Var<f64>> {
        let out = g.forward(p, &c(&x), 37.0, 0.1, &mut ChaCha8Rng::seed_from_u64(noise_seed))?;
        let logits = d16.forward(&dp16.bind(false), &out.sr_final, SpectralMode::Frozen(&buf16))?;
        let v_hr = g.target_projection(&gp.bind(false), &c(&hr), 37.0)?;
        let hrv = c(&hr);
        let terms = [
            losses::adv_loss_g(&logits),
            losses::pixel_loss(&out.sr_final, &out.sr_aux, &hrv, weights.lambda_aux)?,
            losses::lr_consistency_loss(&out.sr_final, &c(&lr_native))?,
            losses::contrastive_loss(&out.v_denoised, &v_hr)?,
            losses::perceptual_loss(&out.sr_final, &hrv, &pyramid, &lw, weights.lambda_vgg)?,
            losses::edge_loss(&out.sr_final, &hrv)?,
            losses::latent_consistency_loss(&out.v_denoised, &out.v_noise, &out.z_denoised, &out.z_noise)?,
            losses::branch_consistency_loss(&out.sr_final, &out.sr_aux)?,
        ];
        Ok(losses::GeneratorLoss::combine(terms, &weights)?.total)
    };
    checks.extend(param_gradchecks(
        G,
        "generator objective",
        &gp,
        &["fuse.", "proj_main."],
        opts.samples,
        total_objective,
    ));
    checks
}

/// Every check, in report order.
pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    let mut all = formula_checks();
    all.extend(metric_checks(opts.seed));
    all.extend(reduction_checks(opts));
    all.extend(spectral_checks(opts.seed));
    all.extend(op_gradchecks(opts));
    all.extend(loss_gradchecks(opts));
    all.extend(network_gradchecks(opts));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all(checks: &[Check]) {
        let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn formulas_hold() {
        assert_all(&formula_checks());
        assert_all(&metric_checks(1));
    }

    #[test]
    fn reductions_hold_at_default_scale() {
        assert_all(&reduction_checks(&VerifyOptions::default()));
    }

    #[test]
    fn mutated_scale_only_breaks_the_constant_check() {
        let opts = VerifyOptions {
            residual_scale: 0.3,
            ..VerifyOptions::default()
        };
        let checks = reduction_checks(&opts);
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["residual_block, identity convs on 1 gives 1.2"]);
    }

    #[test]
    fn spectral_layers_are_unit_norm() {
        assert_all(&spectral_checks(3));
    }

    #[test]
    fn op_and_loss_gradients() {
        let opts = VerifyOptions {
            samples: 40,
            ..VerifyOptions::default()
        };
        assert_all(&op_gradchecks(&opts));
        assert_all(&loss_gradchecks(&opts));
    }
}
