use catformer::config::RunConfig;
use catformer::imaging::{denormalize, epoch_batches, normalize};
use catformer::losses::{self, generator_total, LossTerms, LossWeights};
use catformer::metrics::{self, SsimConstants};
use catformer::nn::{
    conv2d, conv_out_size, matrix_dims, multi_head_self_attention, power_iterate, spectral_normalize, ConvSpec,
    SpectralState, Tensor, Var,
};
use catformer::verify::sigma_max;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

fn c(t: &Tensor<f64>) -> Var<f64> {
    Var::constant(t.clone())
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest allowed `sigma_2 / sigma_1` for the 50-iteration property.
const MAX_GAP: f64 = 0.9;

/// Lift the top singular value of `w` so that `sigma_2 / sigma_1 <= ratio`.
/// Power iteration converges like `(sigma_2 / sigma_1)^(2k)`, so without a
/// gap no fixed iteration count reaches a fixed tolerance.
fn with_spectral_gap(w: &Tensor<f64>, ratio: f64) -> Tensor<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let m = DMatrix::from_row_slice(rows, cols, w.data());
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < 2 {
        return w.clone();
    }
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if s2 <= ratio * s1 {
        return w.clone();
    }
    let lifted = m + u.column(order[0]) * vt.row(order[0]) * (s2 / ratio - s1);
    Tensor::from_fn(&[rows, cols], |k| lifted[(k / cols, k % cols)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_shape_matches_closed_form(
        h in 1usize..20, w in 1usize..20, k in 1usize..6, s in 1usize..4, p in 0usize..3,
        cin in 1usize..4, cout in 1usize..4, seed in any::<u64>(),
    ) {
        let spec = ConvSpec::new(cin, cout, k, s, p);
        let x = c(&randn(&[2, cin, h, w], seed));
        let weight = c(&randn(&spec.weight_shape(), seed ^ 1));
        let bias = c(&randn(&[cout], seed ^ 2));
        let y = conv2d(&x, &spec, &weight, Some(&bias));
        let expect = |n: usize| (n + 2 * p >= k).then(|| (n + 2 * p - k) / s + 1);
        match (expect(h), expect(w)) {
            (Some(oh), Some(ow)) => {
                let y = y.unwrap();
                prop_assert_eq!(y.shape(), &[2, cout, oh, ow][..]);
                prop_assert_eq!(conv_out_size(h, k, s, p), Some(oh));
            }
            _ => prop_assert!(y.is_err()),
        }
    }

    #[test]
    fn conv_is_linear_in_its_input(
        h in 3usize..12, w in 3usize..12, k in 1usize..4, s in 1usize..3,
        a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>(),
    ) {
        let spec = ConvSpec::new(3, 4, k, s, k / 2).without_bias();
        let weight = c(&randn(&spec.weight_shape(), seed));
        let x = randn(&[2, 3, h, w], seed ^ 1);
        let y = randn(&[2, 3, h, w], seed ^ 2);
        let mix = x.zip_map(&y, |u, v| a * u + b * v);
        let lhs = conv2d(&c(&mix), &spec, &weight, None).unwrap();
        let cx = conv2d(&c(&x), &spec, &weight, None).unwrap();
        let cy = conv2d(&c(&y), &spec, &weight, None).unwrap();
        let rhs = cx.value().zip_map(cy.value(), |u, v| a * u + b * v);
        prop_assert!(max_abs_diff(lhs.value(), &rhs) <= 1e-6);
    }

    #[test]
    fn attention_is_permutation_equivariant(n in 1usize..=16, heads in 1usize..=3, seed in any::<u64>(), shift in 0usize..16) {
        let d = 4 * heads;
        let tokens = randn(&[2, n, d], seed);
        let ws: Vec<Var<f64>> = (0..4).map(|i| c(&randn(&[d, d], seed ^ (i + 1)).map(|v| v * 0.4))).collect();
        let attend = |t: &Tensor<f64>| {
            multi_head_self_attention(&c(t), heads, &ws[0], &ws[1], &ws[2], &ws[3]).unwrap().value().clone()
        };
        // a seeded permutation of the token axis
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(shift % n);
        perm.swap(0, n - 1);
        let permute = |t: &Tensor<f64>| {
            Tensor::from_fn(t.shape(), |k| {
                let (bi, rest) = (k / (n * d), k % (n * d));
                let (ti, di) = (rest / d, rest % d);
                t.data()[bi * n * d + perm[ti] * d + di]
            })
        };
        let lhs = attend(&permute(&tokens));
        let rhs = permute(&attend(&tokens));
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-6);
    }

    #[test]
    fn spectral_norm_agrees_with_svd(rows in 1usize..=128, cols in 1usize..=128, seed in any::<u64>()) {
        let w = with_spectral_gap(&randn(&[rows, cols], seed), MAX_GAP);
        let it = power_iterate(w.data(), rows, cols, &vec![1.0; rows], 50).unwrap();
        let oracle = sigma_max(&w).unwrap();
        prop_assert!((it.sigma - oracle).abs() <= 1e-3 * oracle, "power {} svd {}", it.sigma, oracle);
        let (normalized, _) = spectral_normalize(&SpectralState::new(w).unwrap(), 50).unwrap();
        prop_assert!((sigma_max(&normalized).unwrap() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn normalized_conv_weight_has_unit_norm(cout in 1usize..=32, cin in 1usize..=8, k in 1usize..=4, seed in any::<u64>()) {
        let (rows, cols) = (cout, cin * k * k);
        prop_assert!(rows <= 128 && cols <= 128);
        let w = with_spectral_gap(&randn(&[rows, cols], seed), MAX_GAP).reshaped(&[cout, cin, k, k]).unwrap();
        prop_assert_eq!(matrix_dims(&w).unwrap(), (rows, cols));
        let (normalized, _) = spectral_normalize(&SpectralState::new(w).unwrap(), 50).unwrap();
        prop_assert!((sigma_max(&normalized).unwrap() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn psnr_is_consistent_with_mse(seed in any::<u64>(), noise in 0.001f64..0.5) {
        let a = randn(&[1, 3, 12, 12], seed).map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0));
        let b = randn(&[1, 3, 12, 12], seed ^ 7).zip_map(&a, |n, x| (x + noise * n).clamp(0.0, 1.0));
        let m = metrics::mse(&a, &b).unwrap();
        let p = metrics::psnr(&a, &b, 1.0).unwrap();
        prop_assert!((p - 10.0 * (1.0 / m).log10()).abs() <= 1e-9);
        prop_assert!((p - metrics::psnr_from_mse(m, 1.0)).abs() == 0.0);
        let k = SsimConstants::default();
        let s = metrics::ssim(&a, &b, &k).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - metrics::ssim(&b, &a, &k).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn total_loss_is_linear_in_the_weights(terms in proptest::array::uniform8(0.0f64..10.0), k in 0.0f64..5.0) {
        let t = LossTerms::from_array(terms);
        let w = LossWeights::default();
        let base = generator_total(&t, &w).total;
        let scaled = generator_total(&t, &w.scaled(k)).total;
        prop_assert!((scaled - k * base).abs() <= 1e-12 * base.abs().max(1.0));
        let manual: f64 = terms.iter().zip(w.term_weights()).map(|(v, l)| v * l).sum();
        prop_assert!((base - manual).abs() <= 1e-12 * manual.abs().max(1.0));
    }

    #[test]
    fn cosine_loss_stays_in_range(seed in any::<u64>(), dim in 1usize..64) {
        let a = randn(&[3, dim], seed);
        let b = randn(&[3, dim], seed ^ 3);
        let l = losses::contrastive_loss(&c(&a), &c(&b)).unwrap().value().data()[0];
        prop_assert!((0.0..=2.0).contains(&l));
    }

    #[test]
    fn bce_is_finite_for_any_logit(x in -1e4f64..1e4) {
        let logits = c(&Tensor::full(&[1, 1, 2, 2], x));
        for real in [true, false] {
            let v = losses::bce_with_logits(&logits, real).value().data()[0];
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn epochs_are_permutations(n in 1usize..60, bs in 1usize..10, seed in any::<u64>(), epoch in 0u64..5) {
        let batches = epoch_batches(n, bs, seed, epoch);
        prop_assert_eq!(batches.len(), n.div_ceil(bs));
        prop_assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == bs));
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(&batches, &epoch_batches(n, bs, seed, epoch));
    }
}

#[test]
fn power_iteration_needs_a_spectral_gap() {
    // sigma_2 / sigma_1 = 0.99: 50 steps leave a visible error, 2000 do not
    let w: Tensor<f64> = Tensor::from_fn(&[2, 2], |k| [1.0, 0.0, 0.0, 0.99][k]);
    let u = [1.0f64, 1.0];
    let short = power_iterate(w.data(), 2, 2, &u, 50).unwrap();
    let long = power_iterate(w.data(), 2, 2, &u, 2000).unwrap();
    assert!((short.sigma - 1.0).abs() > 1e-3, "{}", short.sigma);
    assert!((long.sigma - 1.0).abs() < 1e-12);
}

#[test]
fn normalization_round_trips_every_level() {
    for level in 0..=255u8 {
        let x = level as f32 / 255.0;
        assert!((denormalize(normalize(x)) - x).abs() < 1e-7, "level {level}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(RunConfig::load(&dir.join("tiny.json")).unwrap(), RunConfig::tiny());
    assert_eq!(
        RunConfig::load(&dir.join("default.json")).unwrap(),
        RunConfig::default()
    );
}
