//! Paired HR/LR datasets: filename pairing, integrity filtering, resize and
//! normalization, a procedural dataset generator and seeded batching.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{Rgb32FImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{area_downsample, Tensor};

pub const IMAGE_SIZE: usize = 128;
pub const SCALE: usize = 4;
pub const DEFAULT_LR_SUFFIX: &str = "x4";
const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// `[0, 1]` → `[-1, 1]` (mean 0.5, std 0.5).
pub fn normalize(x: f32) -> f32 {
    (x - 0.5) / 0.5
}

/// `[-1, 1]` → `[0, 1]`.
pub fn denormalize(x: f32) -> f32 {
    x * 0.5 + 0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Valid,
    Corrupt,
    Unpaired,
}

/// An HR/LR pair. Tensors are `(1, 3, h, w)` in `[-1, 1]`; `lr_up` has the
/// HR size and `lr_native` is `SCALE` times smaller.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub hr_path: Option<PathBuf>,
    pub lr_path: Option<PathBuf>,
    pub status: PairStatus,
    pub hr: Tensor<f32>,
    pub lr_up: Tensor<f32>,
    pub lr_native: Tensor<f32>,
}

/// A file or stem that did not make it into the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedEntry {
    pub id: String,
    pub hr_path: Option<PathBuf>,
    pub lr_path: Option<PathBuf>,
    pub status: PairStatus,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Valid pairs, ordered by id.
    pub pairs: Vec<SamplePair>,
    pub excluded: Vec<ExcludedEntry>,
    pub shuffle_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub valid: usize,
    pub corrupt: usize,
    pub unpaired: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub hr_path: Option<PathBuf>,
    pub lr_path: Option<PathBuf>,
    pub status: PairStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

/// On-disk form of a manifest: every scanned entry with its status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub shuffle_seed: u64,
    pub counts: ManifestCounts,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn count(&self, status: PairStatus) -> usize {
        self.excluded.iter().filter(|e| e.status == status).count()
    }

    pub fn counts(&self) -> ManifestCounts {
        ManifestCounts {
            valid: self.pairs.len(),
            corrupt: self.count(PairStatus::Corrupt),
            unpaired: self.count(PairStatus::Unpaired),
        }
    }

    pub fn to_file(&self) -> ManifestFile {
        let mut entries: Vec<ManifestEntry> = self
            .pairs
            .iter()
            .map(|p| ManifestEntry {
                id: p.id.clone(),
                hr_path: p.hr_path.clone(),
                lr_path: p.lr_path.clone(),
                status: p.status,
                reason: None,
            })
            .chain(self.excluded.iter().map(|e| ManifestEntry {
                id: e.id.clone(),
                hr_path: e.hr_path.clone(),
                lr_path: e.lr_path.clone(),
                status: e.status,
                reason: Some(e.reason.clone()),
            }))
            .collect();
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        ManifestFile {
            shuffle_seed: self.shuffle_seed,
            counts: self.counts(),
            entries,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())? + "\n")?;
        Ok(())
    }

    /// Pairs at `indices`, stacked along the batch axis.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let pick = |f: fn(&SamplePair) -> &Tensor<f32>| -> Result<Tensor<f32>> {
            Tensor::stack_batch(&indices.iter().map(|&i| f(&self.pairs[i]).clone()).collect::<Vec<_>>())
        };
        Ok(Batch {
            ids: indices.iter().map(|&i| self.pairs[i].id.clone()).collect(),
            hr: pick(|p| &p.hr)?,
            lr_up: pick(|p| &p.lr_up)?,
            lr_native: pick(|p| &p.lr_native)?,
        })
    }

    /// First `n` pairs as a separate manifest (same seed).
    pub fn take(&self, n: usize) -> Self {
        Self {
            pairs: self.pairs.iter().take(n).cloned().collect(),
            excluded: Vec::new(),
            shuffle_seed: self.shuffle_seed,
        }
    }
}

/// Stacked tensors `(B, 3, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub hr: Tensor<f32>,
    pub lr_up: Tensor<f32>,
    pub lr_native: Tensor<f32>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Stem of an LR file with `suffix` removed from its end, if present.
pub fn lr_stem(path: &Path, suffix: &str) -> String {
    let s = stem(path);
    s.strip_suffix(suffix).map(str::to_string).unwrap_or(s)
}

fn decode(path: &Path) -> Result<Rgb32FImage> {
    image::open(path).map(|img| img.to_rgb32f()).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// `(1, 3, h, w)` in `[0, 1]`.
pub fn rgb_to_tensor(img: &Rgb32FImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |k| {
        let (c, i) = (k / (h * w), k % (h * w));
        raw[i * 3 + c]
    })
}

/// Inverse of [`rgb_to_tensor`] for batch item `index`.
pub fn tensor_to_rgb(x: &Tensor<f32>, index: usize) -> Result<Rgb32FImage> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(Error::invalid(format!("expected 3 channels, got {c}")));
    }
    let item = x.batch_item(index);
    let d = item.data();
    let raw: Vec<f32> = (0..h * w * 3).map(|k| d[(k % 3) * h * w + k / 3]).collect();
    Rgb32FImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| Error::invalid("image buffer size"))
}

/// 8-bit image from a `[-1, 1]` tensor (batch item `index`).
pub fn tensor_to_rgb8(x: &Tensor<f32>, index: usize) -> Result<RgbImage> {
    let img = tensor_to_rgb(x, index)?;
    let (w, h) = img.dimensions();
    let raw = img
        .as_raw()
        .iter()
        .map(|&v| (denormalize(v).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(w, h, raw).ok_or_else(|| Error::invalid("image buffer size"))
}

/// Bilinear resize (half-pixel centres when enlarging).
pub fn resize_bilinear(img: &Rgb32FImage, w: usize, h: usize) -> Rgb32FImage {
    if img.width() as usize == w && img.height() as usize == h {
        return img.clone();
    }
    image::imageops::resize(img, w as u32, h as u32, FilterType::Triangle)
}

/// Area-coverage resize: each output pixel is the exact mean of the source
/// region it covers.
pub fn resize_area(img: &Rgb32FImage, w: usize, h: usize) -> Rgb32FImage {
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let weights = |src: usize, dst: usize| -> Vec<Vec<(usize, f64)>> {
        let ratio = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
                (lo.floor() as usize..(hi.ceil() as usize).min(src))
                    .map(|i| (i, ((i + 1) as f64).min(hi) - (i as f64).max(lo)))
                    .filter(|&(_, wgt)| wgt > 0.0)
                    .map(|(i, wgt)| (i, wgt / ratio))
                    .collect()
            })
            .collect()
    };
    let (wx, wy) = (weights(sw, w), weights(sh, h));
    let mut out = Rgb32FImage::new(w as u32, h as u32);
    for (y, ry) in wy.iter().enumerate() {
        for (x, rx) in wx.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for &(sy, a) in ry {
                for &(sx, b) in rx {
                    let p = img.get_pixel(sx as u32, sy as u32);
                    for c in 0..3 {
                        acc[c] += a * b * p[c] as f64;
                    }
                }
            }
            out.put_pixel(x as u32, y as u32, image::Rgb(acc.map(|v| v as f32)));
        }
    }
    out
}

fn normalized(t: Tensor<f32>) -> Tensor<f32> {
    t.map(normalize)
}

/// Decode both files and build the model tensors at `size` (HR) and
/// `size / SCALE` (native LR).
pub fn load_and_preprocess(id: &str, hr_path: &Path, lr_path: &Path, size: usize) -> Result<SamplePair> {
    if !size.is_multiple_of(SCALE) || size == 0 {
        return Err(Error::invalid(format!(
            "image size {size} is not a multiple of {SCALE}"
        )));
    }
    let hr = decode(hr_path)?;
    let lr = decode(lr_path)?;
    let lr_size = size / SCALE;
    Ok(SamplePair {
        id: id.to_string(),
        hr_path: Some(hr_path.to_path_buf()),
        lr_path: Some(lr_path.to_path_buf()),
        status: PairStatus::Valid,
        hr: normalized(rgb_to_tensor(&resize_bilinear(&hr, size, size))),
        lr_up: normalized(rgb_to_tensor(&resize_bilinear(&lr, size, size))),
        lr_native: normalized(rgb_to_tensor(&resize_area(&lr, lr_size, lr_size))),
    })
}

/// A single LR image as model input: bilinear resize to `size` and
/// normalization, `(1, 3, size, size)`.
pub fn load_lr_input(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = decode(path)?;
    Ok(normalized(rgb_to_tensor(&resize_bilinear(&img, size, size))))
}

/// Pair HR and LR files by stem (LR stem minus `lr_suffix`), decoding each
/// pair. Undecodable pairs count as corrupt; stems present on one side only
/// count as unpaired.
pub fn scan_and_pair(
    hr_dir: &Path,
    lr_dir: &Path,
    lr_suffix: &str,
    size: usize,
    shuffle_seed: u64,
) -> Result<DatasetManifest> {
    let hr_files: BTreeMap<String, PathBuf> = list_images(hr_dir)?.into_iter().map(|p| (stem(&p), p)).collect();
    let mut lr_files: BTreeMap<String, PathBuf> = list_images(lr_dir)?
        .into_iter()
        .map(|p| (lr_stem(&p, lr_suffix), p))
        .collect();
    if hr_files.is_empty() {
        log::warn!("no images found in {}", hr_dir.display());
    }
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for (id, hr_path) in hr_files {
        let Some(lr_path) = lr_files.remove(&id) else {
            log::warn!("{}: no LR partner", hr_path.display());
            excluded.push(ExcludedEntry {
                id,
                hr_path: Some(hr_path),
                lr_path: None,
                status: PairStatus::Unpaired,
                reason: "no LR partner".into(),
            });
            continue;
        };
        match load_and_preprocess(&id, &hr_path, &lr_path, size) {
            Ok(pair) => pairs.push(pair),
            Err(e) => {
                log::warn!("{id}: {e}");
                excluded.push(ExcludedEntry {
                    id,
                    hr_path: Some(hr_path),
                    lr_path: Some(lr_path),
                    status: PairStatus::Corrupt,
                    reason: e.to_string(),
                });
            }
        }
    }
    for (id, lr_path) in lr_files {
        log::warn!("{}: no HR partner", lr_path.display());
        excluded.push(ExcludedEntry {
            id,
            hr_path: None,
            lr_path: Some(lr_path),
            status: PairStatus::Unpaired,
            reason: "no HR partner".into(),
        });
    }
    excluded.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest {
        pairs,
        excluded,
        shuffle_seed,
    })
}

/// Scan `dir/hr` against `dir/lr` with the default suffix.
pub fn scan_dataset_dir(dir: &Path, size: usize, shuffle_seed: u64) -> Result<DatasetManifest> {
    scan_and_pair(&dir.join("hr"), &dir.join("lr"), DEFAULT_LR_SUFFIX, size, shuffle_seed)
}

/// One procedural HR image in `[0, 1]`, quantized to 8-bit levels.
fn synth_image(rng: &mut ChaCha8Rng, size: usize) -> Tensor<f32> {
    let s = size as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let grad: [(f64, f64); 3] = std::array::from_fn(|_| (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)));
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let freq = rng.gen_range(2.0..6.0) * std::f64::consts::TAU / s;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s);
    let env = rng.gen_range(0.2..0.5) * s;
    let stripe_amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.3));
    let ellipses: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..rng.gen_range(1..4))
        .map(|_| {
            (
                rng.gen_range(0.1..0.9) * s,
                rng.gen_range(0.1..0.9) * s,
                rng.gen_range(0.08..0.3) * s,
                rng.gen_range(0.08..0.3) * s,
                std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            )
        })
        .collect();
    let plane = size * size;
    Tensor::from_fn(&[1, 3, size, size], |k| {
        let (c, i) = (k / plane, k % plane);
        let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
        let (u, v) = (x / s - 0.5, y / s - 0.5);
        let mut val = base[c] + grad[c].0 * u + grad[c].1 * v;
        let along = (x - gx) * theta.cos() + (y - gy) * theta.sin();
        let r2 = ((x - gx).powi(2) + (y - gy).powi(2)) / (2.0 * env * env);
        val += stripe_amp[c] * (freq * along + phase).sin() * (-r2).exp();
        for &(ex, ey, ax, ay, col) in &ellipses {
            if ((x - ex) / ax).powi(2) + ((y - ey) / ay).powi(2) <= 1.0 {
                val = 0.3 * val + 0.7 * col[c];
            }
        }
        ((val.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
    })
}

/// Deterministic in-memory dataset of `n` procedural pairs. `lr_native` is
/// the exact block mean of `hr`; `lr_up` re-enlarges it bilinearly.
pub fn synth_dataset(seed: u64, n: usize, size: usize) -> Result<DatasetManifest> {
    if !size.is_multiple_of(SCALE) || size == 0 {
        return Err(Error::invalid(format!(
            "image size {size} is not a multiple of {SCALE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let hr = normalized(synth_image(&mut rng, size));
        let lr_native = area_downsample(&hr, SCALE)?;
        let lr_img = tensor_to_rgb(&lr_native.map(denormalize), 0)?;
        let lr_up = normalized(rgb_to_tensor(&resize_bilinear(&lr_img, size, size)));
        pairs.push(SamplePair {
            id: synth_id(i),
            hr_path: None,
            lr_path: None,
            status: PairStatus::Valid,
            hr,
            lr_up,
            lr_native,
        });
    }
    Ok(DatasetManifest {
        pairs,
        excluded: Vec::new(),
        shuffle_seed: seed,
    })
}

pub fn synth_id(i: usize) -> String {
    format!("img{i:04}")
}

/// Write `dir/hr/<id>.png`, `dir/lr/<id>x4.png` (native LR size) and
/// `dir/manifest.json`. Returns the manifest as re-read from disk.
pub fn write_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<DatasetManifest> {
    let (hr_dir, lr_dir) = (dir.join("hr"), dir.join("lr"));
    std::fs::create_dir_all(&hr_dir)?;
    std::fs::create_dir_all(&lr_dir)?;
    let mut size = IMAGE_SIZE;
    for p in &manifest.pairs {
        size = p.hr.shape()[2];
        tensor_to_rgb8(&p.hr, 0)?.save(hr_dir.join(format!("{}.png", p.id)))?;
        tensor_to_rgb8(&p.lr_native, 0)?.save(lr_dir.join(format!("{}{DEFAULT_LR_SUFFIX}.png", p.id)))?;
    }
    let on_disk = scan_and_pair(&hr_dir, &lr_dir, DEFAULT_LR_SUFFIX, size, manifest.shuffle_seed)?;
    on_disk.write_json(&dir.join("manifest.json"))?;
    Ok(on_disk)
}

/// Batches of one epoch: a seeded permutation cut into `batch_size`
/// chunks, the last one possibly shorter.
pub fn epoch_batches(n: usize, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Endless stream of index batches, epoch after epoch.
#[derive(Clone, Debug)]
pub struct BatchIter {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::collections::VecDeque<Vec<usize>>,
}

impl BatchIter {
    pub fn new(n: usize, batch_size: usize, shuffle_seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::invalid("batching needs a non-empty dataset and batch size > 0"));
        }
        Ok(Self {
            n,
            batch_size,
            seed: shuffle_seed,
            epoch: 0,
            pending: Default::default(),
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pending.is_empty() {
            self.pending = epoch_batches(self.n, self.batch_size, self.seed, self.epoch).into();
            self.epoch += 1;
        }
        self.pending.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints_and_round_trip() {
        assert_eq!(normalize(1.0), 1.0);
        assert_eq!(normalize(0.0), -1.0);
        assert_eq!(normalize(0.5), 0.0);
        for i in 0..=255 {
            let x = i as f32 / 255.0;
            assert!((denormalize(normalize(x)) - x).abs() < 1e-7);
        }
    }

    #[test]
    fn lr_suffix_is_stripped() {
        assert_eq!(lr_stem(Path::new("a/img001x4.png"), "x4"), "img001");
        assert_eq!(lr_stem(Path::new("img001.png"), "x4"), "img001");
    }

    #[test]
    fn synth_is_deterministic_and_consistent() {
        let a = synth_dataset(3, 4, 32).unwrap();
        assert_eq!(a, synth_dataset(3, 4, 32).unwrap());
        assert_ne!(a.pairs[0].hr, synth_dataset(4, 4, 32).unwrap().pairs[0].hr);
        for p in &a.pairs {
            assert_eq!(p.hr.shape(), &[1, 3, 32, 32]);
            assert_eq!(p.lr_up.shape(), &[1, 3, 32, 32]);
            assert_eq!(area_downsample(&p.hr, SCALE).unwrap(), p.lr_native);
            assert!(p.hr.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn area_resize_of_integer_factor_is_block_mean() {
        let t = Tensor::from_fn(&[1, 3, 8, 8], |k| (k % 13) as f32 / 13.0);
        let img = tensor_to_rgb(&t, 0).unwrap();
        let back = rgb_to_tensor(&resize_area(&img, 2, 2));
        let expect = area_downsample(&t, 4).unwrap();
        for (a, b) in back.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn epoch_batches_keep_partial_tail() {
        let b = epoch_batches(20, 8, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(20, 8, 1, 0));
        assert_ne!(b, epoch_batches(20, 8, 2, 0));
        assert_ne!(b, epoch_batches(20, 8, 1, 1));
    }

    #[test]
    fn batch_iter_crosses_epochs() {
        let mut it = BatchIter::new(5, 2, 0).unwrap();
        let sizes: Vec<usize> = (0..6).map(|_| it.next().unwrap().len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 2, 2, 1]);
        assert_eq!(it.epoch(), 2);
    }

    #[test]
    fn written_dataset_scans_clean() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(1, 3, 32).unwrap();
        let back = write_dataset(&m, dir.path()).unwrap();
        assert_eq!(
            back.counts(),
            ManifestCounts {
                valid: 3,
                corrupt: 0,
                unpaired: 0
            }
        );
        for (a, b) in m.pairs.iter().zip(&back.pairs) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.hr, b.hr);
            let worst = a
                .lr_native
                .data()
                .iter()
                .zip(b.lr_native.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f32::max);
            assert!(worst <= 1.0 / 255.0 + 1e-6, "{worst}");
        }
        let file: ManifestFile =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(file.entries.len(), 3);
    }

    #[test]
    fn preprocess_resizes_any_source() {
        let dir = tempfile::tempdir().unwrap();
        let hr = dir.path().join("a.png");
        let lr = dir.path().join("ax4.png");
        RgbImage::from_pixel(50, 40, image::Rgb([255, 0, 128]))
            .save(&hr)
            .unwrap();
        RgbImage::from_pixel(13, 10, image::Rgb([0, 255, 128]))
            .save(&lr)
            .unwrap();
        let p = load_and_preprocess("a", &hr, &lr, IMAGE_SIZE).unwrap();
        assert_eq!(p.hr.shape(), &[1, 3, 128, 128]);
        assert_eq!(p.lr_up.shape(), &[1, 3, 128, 128]);
        assert_eq!(p.lr_native.shape(), &[1, 3, 32, 32]);
        assert!((p.hr.at4(0, 0, 5, 5) - 1.0).abs() < 1e-6);
        assert!((p.hr.at4(0, 1, 5, 5) + 1.0).abs() < 1e-6);
        assert!((p.lr_native.at4(0, 1, 7, 7) - 1.0).abs() < 1e-6);
    }
}
