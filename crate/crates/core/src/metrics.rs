//! Image-quality metrics: MSE, PSNR, SSIM, a feature-space perceptual
//! distance and wall-clock timing.
//!
//! Metric functions take images already mapped to `[0, 1]`; use
//! [`to_unit_range`] on generator-space tensors first.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{lpips_style, Extractor};
use crate::nn::{Tensor, Var};

/// `(x + 1) / 2`: generator space `[-1, 1]` to display space `[0, 1]`.
pub fn to_unit_range(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| (v + 1.0) * 0.5)
}

/// Which channels metrics are computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    #[default]
    Rgb,
    /// BT.601 luma only.
    Y,
}

impl ColorSpace {
    pub fn apply(self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            ColorSpace::Rgb => Ok(x.clone()),
            ColorSpace::Y => to_luma(x),
        }
    }
}

/// `(B, 3, H, W)` → `(B, 1, H, W)` with `Y = 0.299 R + 0.587 G + 0.114 B`.
pub fn to_luma(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (b, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(Error::invalid(format!("luma needs 3 channels, got {c}")));
    }
    let plane = h * w;
    Ok(Tensor::from_fn(&[b, 1, h, w], |k| {
        let (n, i) = (k / plane, k % plane);
        let base = n * 3 * plane + i;
        0.299 * x.data()[base] + 0.587 * x.data()[base + plane] + 0.114 * x.data()[base + 2 * plane]
    }))
}

fn check_pair(op: &'static str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    check_pair("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(max^2 / mse)`; `+inf` when the images are identical.
pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: 11,
            sigma: 1.5,
        }
    }
}

impl SsimConstants {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c1() > 0.0 && self.c2() > 0.0 && self.sigma > 0.0 && self.window > 0) {
            return Err(Error::invalid("SSIM constants must be positive"));
        }
        Ok(())
    }

    fn index(&self, mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
        let (c1, c2) = (self.c1(), self.c2());
        ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    }
}

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over Gaussian windows, channels and batch. Images smaller than
/// the window use the largest window that fits.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>, constants: &SsimConstants) -> Result<f64> {
    check_pair("ssim", a, b)?;
    constants.validate()?;
    let (n, c, h, w) = a.dims4()?;
    let taps = gaussian_taps(constants.window.min(h).min(w), constants.sigma);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..n * c {
        let pa = &a.data()[p * plane..(p + 1) * plane];
        let pb = &b.data()[p * plane..(p + 1) * plane];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let (mu_a, _, _) = filter_valid(pa, h, w, &taps);
        let (mu_b, _, _) = filter_valid(pb, h, w, &taps);
        let (saa, _, _) = filter_valid(&prod(&|x, _| x * x), h, w, &taps);
        let (sbb, _, _) = filter_valid(&prod(&|_, y| y * y), h, w, &taps);
        let (sab, _, _) = filter_valid(&prod(&|x, y| x * y), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            total += constants.index(ma, mb, saa[i] - ma * ma, sbb[i] - mb * mb, sab[i] - ma * mb);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM from whole-image statistics per channel, averaged over channels
/// and batch.
pub fn ssim_global(a: &Tensor<f64>, b: &Tensor<f64>, constants: &SsimConstants) -> Result<f64> {
    check_pair("ssim_global", a, b)?;
    constants.validate()?;
    let (n, c, h, w) = a.dims4()?;
    let plane = h * w;
    let np = plane as f64;
    let mut total = 0.0;
    for p in 0..n * c {
        let pa = &a.data()[p * plane..(p + 1) * plane];
        let pb = &b.data()[p * plane..(p + 1) * plane];
        let ma = pa.iter().sum::<f64>() / np;
        let mb = pb.iter().sum::<f64>() / np;
        let va = pa.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / np;
        let vb = pb.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / np;
        let cov = pa.iter().zip(pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / np;
        total += constants.index(ma, mb, va, vb, cov);
    }
    Ok(total / (n * c) as f64)
}

/// Weighted squared distance between channel-normalized feature maps,
/// averaged spatially and over the batch.
pub fn lpips_distance(a: &Tensor<f64>, b: &Tensor<f64>, extractor: &Extractor, weights: &[f64]) -> Result<f64> {
    check_pair("lpips", a, b)?;
    let fa = extractor.features(&Var::constant(a.clone()))?;
    let fb = extractor.features(&Var::constant(b.clone()))?;
    Ok(lpips_style(&fa, &fb, weights)?.value().data()[0].max(0.0))
}

/// Run `f` and return its output with the elapsed wall-clock seconds.
pub fn timed_batch<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub mse: f64,
    pub batch_time_s: f64,
}

/// Settings shared by every metric evaluation.
#[derive(Clone, Debug)]
pub struct MetricSettings {
    pub color: ColorSpace,
    pub ssim: SsimConstants,
    pub extractor: Extractor,
    pub layer_weights: Vec<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        let extractor = Extractor::random_pyramid(crate::losses::PYRAMID_SEED);
        Self {
            color: ColorSpace::Rgb,
            ssim: SsimConstants::default(),
            layer_weights: extractor.uniform_weights(),
            extractor,
        }
    }
}

impl MetricSettings {
    /// Metrics of one `[0, 1]` image pair (any batch size).
    pub fn evaluate(&self, sr: &Tensor<f64>, hr: &Tensor<f64>, batch_time_s: f64) -> Result<MetricReport> {
        let (a, b) = (self.color.apply(sr)?, self.color.apply(hr)?);
        let m = mse(&a, &b)?;
        Ok(MetricReport {
            psnr_db: psnr_from_mse(m, 1.0),
            ssim: ssim(&a, &b, &self.ssim)?,
            // features always see RGB
            lpips: lpips_distance(sr, hr, &self.extractor, &self.layer_weights)?,
            mse: m,
            batch_time_s,
        })
    }
}

/// One line of a metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub mse: f64,
    pub time_s: f64,
}

pub const SUMMARY_ID: &str = "mean";

impl MetricRow {
    pub fn new(sample_id: impl Into<String>, r: &MetricReport) -> Self {
        Self {
            sample_id: sample_id.into(),
            psnr: r.psnr_db,
            ssim: r.ssim,
            lpips: r.lpips,
            mse: r.mse,
            time_s: r.batch_time_s,
        }
    }
}

/// Column means over `rows` (PSNR is `+inf` if any row is).
pub fn summarize(rows: &[MetricRow]) -> MetricRow {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MetricRow {
        sample_id: SUMMARY_ID.to_string(),
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        lpips: mean(|r| r.lpips),
        mse: mean(|r| r.mse),
        time_s: mean(|r| r.time_s),
    }
}

/// Write `rows` plus a trailing summary row. Columns:
/// `sample_id,psnr,ssim,lpips,mse,time_s`.
pub fn write_metric_csv(path: &Path, rows: &[MetricRow]) -> Result<MetricRow> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    let summary = summarize(rows);
    w.serialize(&summary)?;
    w.flush()?;
    Ok(summary)
}

pub fn read_metric_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(v: f64) -> Tensor<f64> {
        Tensor::full(&[1, 3, 16, 16], v)
    }

    fn noise(seed: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, 3, 16, 16], |k| (((k + seed) * 7919 % 1009) as f64) / 1009.0)
    }

    #[test]
    fn psnr_reference_values() {
        assert!((psnr_from_mse(0.25, 1.0) - 6.0206).abs() < 1e-4);
        let a = full(0.0);
        let b = full(16.0);
        assert!((psnr(&a, &b, 255.0).unwrap() - 10.0 * (65025.0f64 / 256.0).log10()).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mse_constant_offset() {
        assert_eq!(mse(&full(0.25), &full(0.75)).unwrap(), 0.25);
        assert_eq!(mse(&noise(1), &noise(2)).unwrap(), mse(&noise(2), &noise(1)).unwrap());
    }

    #[test]
    fn ssim_constant_images() {
        let k = SsimConstants::default();
        let expected = k.c1() / (1.0 + k.c1());
        assert!((ssim(&full(0.0), &full(1.0), &k).unwrap() - expected).abs() < 1e-8);
        assert!((ssim_global(&full(0.0), &full(1.0), &k).unwrap() - expected).abs() < 1e-8);
        assert!((ssim(&noise(3), &noise(3), &k).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let k = SsimConstants::default();
        let (a, b) = (noise(1), noise(5));
        let s = ssim(&a, &b, &k).unwrap();
        assert!((s - ssim(&b, &a, &k).unwrap()).abs() < 1e-12);
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn ssim_small_images_shrink_the_window() {
        let a = Tensor::from_fn(&[1, 1, 4, 4], |k| k as f64 / 16.0);
        let s = ssim(&a, &a, &SsimConstants::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_extractor_on_unit_pixels_tracks_mse() {
        // Channel vectors already of unit length: distance = 3 * mse.
        let a = Tensor::from_fn(&[1, 3, 2, 2], |k| if k / 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::from_fn(&[1, 3, 2, 2], |k| if k / 4 == (k % 4) % 3 { 1.0 } else { 0.0 });
        let d = lpips_distance(&a, &b, &Extractor::Identity, &[1.0]).unwrap();
        assert!((d - 3.0 * mse(&a, &b).unwrap()).abs() < 1e-8);
        assert_eq!(lpips_distance(&a, &a, &Extractor::Identity, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn luma_of_grey_is_grey() {
        let y = to_luma(&full(0.4)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 16, 16]);
        assert!(y.data().iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn summary_row_is_column_mean() {
        let rows: Vec<MetricRow> = (0..3)
            .map(|i| MetricRow {
                sample_id: format!("s{i}"),
                psnr: 20.0 + i as f64,
                ssim: 0.5,
                lpips: 0.1 * i as f64,
                mse: 0.01,
                time_s: 1.0 + i as f64,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let s = write_metric_csv(&path, &rows).unwrap();
        assert!((s.psnr - 21.0).abs() < 1e-12 && (s.time_s - 2.0).abs() < 1e-12);
        let back = read_metric_csv(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[3].sample_id, SUMMARY_ID);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("sample_id,psnr,ssim,lpips,mse,time_s\n"));
    }

    #[test]
    fn infinite_psnr_survives_csv() {
        let r = MetricReport {
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            lpips: 0.0,
            mse: 0.0,
            batch_time_s: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metric_csv(&path, &[MetricRow::new("a", &r)]).unwrap();
        let back = read_metric_csv(&path).unwrap();
        assert_eq!(back[0].psnr, f64::INFINITY);
        assert_eq!(back[1].psnr, f64::INFINITY);
    }

    #[test]
    fn timing_is_nonnegative_and_output_passes_through() {
        let (v, t) = timed_batch(|| 41 + 1);
        assert_eq!(v, 42);
        assert!(t >= 0.0);
    }
}
