//! Alternating adversarial training, validation and checkpoint selection.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{file_sha256, Checkpoint};
use crate::config::RunConfig;
use crate::discriminator::{Discriminator, SpectralBuffers, SpectralMode};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::imaging::{Batch, BatchIter, DatasetManifest};
use crate::losses::{
    adv_loss_g, branch_consistency_loss, contrastive_loss, discriminator_loss, edge_loss, latent_consistency_loss,
    lr_consistency_loss, perceptual_loss, pixel_loss, Extractor, ExtractorRegistry, GeneratorLoss, LossReport,
    LossTerms, LossWeights,
};
use crate::metrics::{psnr, timed_batch, to_unit_range, MetricReport, MetricRow, MetricSettings};
use crate::nn::{ParamSet, Tensor, Var};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet<f32>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Tensor<f32>]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = (self.lr / c1) as f32;
        let (b1, b2, c2, eps) = (b1 as f32, b2 as f32, c2 as f32, self.eps as f32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((x, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *x -= step * *m / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Scale `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = (max_norm / norm) as f32;
        for t in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

fn constant(t: &Tensor<f32>) -> Var<f32> {
    Var::constant(t.clone())
}

fn scalar(v: &Var<f32>) -> f64 {
    v.value().data()[0] as f64
}

/// One row of the per-step loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss_d: f64,
    pub adv: f64,
    pub pixel: f64,
    pub lr_consistency: f64,
    pub contrastive: f64,
    pub perceptual: f64,
    pub edge: f64,
    pub latent: f64,
    pub branch: f64,
    pub total: f64,
    /// PSNR of `sr_final` against the training batch, in dB.
    pub train_psnr: f64,
}

impl StepLog {
    pub fn terms_finite(&self) -> bool {
        [
            self.loss_d,
            self.adv,
            self.pixel,
            self.lr_consistency,
            self.contrastive,
            self.perceptual,
            self.edge,
            self.latent,
            self.branch,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// One row of the per-validation metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationLog {
    pub step: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub mse: f64,
    pub time_s: f64,
    pub checkpoint: String,
}

/// Result of a generator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorStep {
    pub report: LossReport,
    pub train_psnr: f64,
}

/// Models, parameters and optimizer state of one training run.
pub struct Trainer {
    pub config: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_params: ParamSet<f32>,
    pub disc_params: ParamSet<f32>,
    pub buffers: SpectralBuffers<f32>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    extractor: Extractor,
    layer_weights: Vec<f64>,
    rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    /// Build models and initialize everything from `config.train.seed`.
    /// `config` must already be resolved.
    pub fn new(config: RunConfig) -> Result<Self> {
        Self::with_registry(config, &ExtractorRegistry::default())
    }

    pub fn with_registry(config: RunConfig, registry: &ExtractorRegistry) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator.clone())?;
        let discriminator = Discriminator::new(config.discriminator.clone())?;
        let mut init = ChaCha8Rng::seed_from_u64(config.train.seed);
        let gen_params = generator.init_params(&mut init);
        let disc_params = discriminator.init_params(&mut init);
        let buffers = discriminator.init_buffers(&disc_params, &mut init)?;
        let t = &config.train;
        let opt_g = Adam::new(&gen_params, t.learning_rate, t.beta1, t.beta2, t.adam_eps);
        let opt_d = Adam::new(&disc_params, t.learning_rate, t.beta1, t.beta2, t.adam_eps);
        let extractor = registry.get(&t.extractor)?.clone();
        let layer_weights = extractor.uniform_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(1);
        Ok(Self {
            config,
            generator,
            discriminator,
            gen_params,
            disc_params,
            buffers,
            opt_g,
            opt_d,
            extractor,
            layer_weights,
            rng,
            step: 0,
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.config.losses
    }

    fn clip(&self, grads: &mut [Tensor<f32>]) {
        if let Some(c) = self.config.train.grad_clip {
            clip_global_norm(grads, c);
        }
    }

    fn sample_t(&mut self) -> f64 {
        self.rng.gen_range(0..self.config.train.num_timesteps) as f64
    }

    /// One discriminator update. The generator runs on constant parameters,
    /// so nothing is recorded for it; the spectral vectors advance once.
    pub fn train_step_d(&mut self, batch: &Batch) -> Result<f64> {
        let t = self.sample_t();
        let sigma = self.generator.config.sigma;
        let g = self.gen_params.bind(false);
        let fake = self
            .generator
            .forward(&g, &constant(&batch.lr_up), t, sigma, &mut self.rng)?
            .sr_final
            .detach();
        let b = batch.hr.shape()[0];
        let both = Var::cat(&[constant(&batch.hr), fake], 0)?;
        let d = self.disc_params.bind(true);
        let logits = self
            .discriminator
            .forward(&d, &both, SpectralMode::Update(&mut self.buffers))?;
        let real = logits.narrow(0, 0, b)?;
        let fake = logits.narrow(0, b, b)?;
        let loss = discriminator_loss(&real, &fake)?;
        let value = scalar(&loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss at step {}", self.step)));
        }
        let mut grads = d.collect_grads(&loss.backward()?);
        self.clip(&mut grads);
        self.opt_d.step(&mut self.disc_params, &grads);
        Ok(value)
    }

    /// All eight generator terms on `batch` at timestep `t`.
    pub fn generator_loss(
        &mut self,
        batch: &Batch,
        g: &crate::nn::Bound<f32>,
        t: f64,
    ) -> Result<(GeneratorLoss<f32>, f64)> {
        let w = self.config.losses.clone();
        let sigma = self.generator.config.sigma;
        let lr_up = constant(&batch.lr_up);
        let hr = constant(&batch.hr);
        let out = self.generator.forward(g, &lr_up, t, sigma, &mut self.rng)?;
        let d = self.disc_params.bind(false);
        let logits = self
            .discriminator
            .forward(&d, &out.sr_final, SpectralMode::Frozen(&self.buffers))?;
        let frozen = self.gen_params.bind(false);
        let v_hr = self.generator.target_projection(&frozen, &hr, t)?;
        let terms = [
            adv_loss_g(&logits),
            pixel_loss(&out.sr_final, &out.sr_aux, &hr, w.lambda_aux)?,
            lr_consistency_loss(&out.sr_final, &constant(&batch.lr_native))?,
            contrastive_loss(&out.v_denoised, &v_hr)?,
            perceptual_loss(&out.sr_final, &hr, &self.extractor, &self.layer_weights, w.lambda_vgg)?,
            edge_loss(&out.sr_final, &hr)?,
            latent_consistency_loss(&out.v_denoised, &out.v_noise, &out.z_denoised, &out.z_noise)?,
            branch_consistency_loss(&out.sr_final, &out.sr_aux)?,
        ];
        let train_psnr = psnr(
            &to_unit_range(&out.sr_final.value().cast()),
            &to_unit_range(&batch.hr.cast()),
            1.0,
        )?;
        Ok((GeneratorLoss::combine(terms, &w)?, train_psnr))
    }

    /// One generator update with the discriminator and the contrastive
    /// target held constant.
    pub fn train_step_g(&mut self, batch: &Batch) -> Result<GeneratorStep> {
        let t = self.sample_t();
        let g = self.gen_params.bind(true);
        let (loss, train_psnr) = self.generator_loss(batch, &g, t)?;
        if let Some(term) = loss.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss term `{term}` at step {}",
                self.step
            )));
        }
        let report = loss.report();
        let mut grads = g.collect_grads(&loss.total.backward()?);
        self.clip(&mut grads);
        self.opt_g.step(&mut self.gen_params, &grads);
        Ok(GeneratorStep { report, train_psnr })
    }

    /// One D step then one G step.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let loss_d = self.train_step_d(batch)?;
        let g = self.train_step_g(batch)?;
        self.step += 1;
        let LossTerms {
            adv,
            pixel,
            lr_consistency,
            contrastive,
            perceptual,
            edge,
            latent,
            branch,
        } = g.report.terms;
        Ok(StepLog {
            step: self.step,
            lr: self.opt_g.lr,
            loss_d,
            adv,
            pixel,
            lr_consistency,
            contrastive,
            perceptual,
            edge,
            latent,
            branch,
            total: g.report.total,
            train_psnr: g.train_psnr,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.step, &self.generator.config, &self.gen_params).with_discriminator(
            &self.discriminator.config,
            &self.disc_params,
            &self.buffers,
        )
    }

    pub fn metric_settings(&self) -> MetricSettings {
        MetricSettings {
            color: self.config.train.color_space,
            extractor: self.extractor.clone(),
            layer_weights: self.layer_weights.clone(),
            ..MetricSettings::default()
        }
    }
}

/// Inference-mode forward (`t = 0`, no noise): `sr_final` for `lr_up`.
pub fn super_resolve(generator: &Generator, params: &ParamSet<f32>, lr_up: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let out = generator.forward(&params.bind(false), &constant(lr_up), 0.0, 0.0, &mut unused)?;
    Ok(out.sr_final.value().clone())
}

/// Per-image metrics of the generator on `manifest`, in dataset order.
/// `time_s` is the forward time of the batch the image belonged to.
pub fn evaluate(
    generator: &Generator,
    params: &ParamSet<f32>,
    manifest: &DatasetManifest,
    settings: &MetricSettings,
    batch_size: usize,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(manifest.len());
    let indices: Vec<usize> = (0..manifest.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = manifest.batch(chunk)?;
        let (sr, secs) = timed_batch(|| super_resolve(generator, params, &batch.lr_up));
        let sr = to_unit_range(&sr?.cast());
        let hr = to_unit_range(&batch.hr.cast());
        for (i, id) in batch.ids.iter().enumerate() {
            let r = settings.evaluate(&sr.batch_item(i), &hr.batch_item(i), secs)?;
            rows.push(MetricRow::new(id.clone(), &r));
        }
    }
    Ok(rows)
}

/// Mean metrics over a validation set (`t = 0`, `sigma = 0`).
pub fn validate(
    generator: &Generator,
    params: &ParamSet<f32>,
    manifest: &DatasetManifest,
    settings: &MetricSettings,
    batch_size: usize,
) -> Result<MetricReport> {
    if manifest.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let rows = evaluate(generator, params, manifest, settings, batch_size)?;
    let s = crate::metrics::summarize(&rows);
    Ok(MetricReport {
        psnr_db: s.psnr,
        ssim: s.ssim,
        lpips: s.lpips,
        mse: s.mse,
        batch_time_s: s.time_s,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub learning_rate: f64,
    pub best_step: u64,
    pub best_psnr: f64,
    pub best_ssim: f64,
    pub best_lpips: f64,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub final_sha256: String,
}

pub const CONFIG_FILE: &str = "config.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

struct RunLogs {
    losses: csv::Writer<File>,
    metrics: csv::Writer<File>,
}

fn validate_and_save(
    trainer: &Trainer,
    val: &DatasetManifest,
    dir: &Path,
    logs: &mut RunLogs,
    best: &mut Option<(ValidationLog, PathBuf)>,
) -> Result<()> {
    let report = validate(
        &trainer.generator,
        &trainer.gen_params,
        val,
        &trainer.metric_settings(),
        trainer.config.train.batch_size,
    )?;
    let name = format!("step_{:06}.ckpt", trainer.step);
    let path = dir.join(CHECKPOINT_DIR).join(&name);
    trainer.checkpoint().save(&path)?;
    let row = ValidationLog {
        step: trainer.step,
        psnr: report.psnr_db,
        ssim: report.ssim,
        lpips: report.lpips,
        mse: report.mse,
        time_s: report.batch_time_s,
        checkpoint: name,
    };
    log::info!(
        "step {}: val psnr {:.3} dB, ssim {:.4}, lpips {:.4}",
        row.step,
        row.psnr,
        row.ssim,
        row.lpips
    );
    logs.metrics.serialize(&row)?;
    logs.metrics.flush()?;
    if best.as_ref().is_none_or(|(b, _)| row.psnr > b.psnr) {
        *best = Some((row, path));
    }
    Ok(())
}

/// Run a full training job into `dir`:
///
/// * `config.json`: the resolved configuration
/// * `losses.csv`: one [`StepLog`] per step
/// * `metrics.csv`: one [`ValidationLog`] per validation
/// * `checkpoints/`: one file per validation plus `best.ckpt` and `final.ckpt`
/// * `summary.json`: a [`RunSummary`]
///
/// Validation runs before the first step, every `val_every` steps and after
/// the last one. On a non-finite loss the logs written so far are kept and
/// the error is returned.
pub fn train(
    config: RunConfig,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    dir: &Path,
) -> Result<RunSummary> {
    let config = config.resolve()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_json()?)?;
    let mut logs = RunLogs {
        losses: csv::Writer::from_path(dir.join(LOSSES_FILE))?,
        metrics: csv::Writer::from_path(dir.join(METRICS_FILE))?,
    };
    let mut trainer = Trainer::new(config)?;
    let tc = trainer.config.train.clone();
    let val = if val_set.is_empty() { train_set } else { val_set };
    let mut best = None;
    validate_and_save(&trainer, val, dir, &mut logs, &mut best)?;
    let mut batches = BatchIter::new(train_set.len(), tc.batch_size, tc.seed)?;
    while trainer.step < tc.max_steps {
        let indices = batches.next().expect("endless iterator");
        let batch = train_set.batch(&indices)?;
        let row = trainer.train_step(&batch)?;
        log::debug!(
            "step {}: total {:.5}, pixel {:.5}, D {:.5}",
            row.step,
            row.total,
            row.pixel,
            row.loss_d
        );
        logs.losses.serialize(&row)?;
        if trainer.step % tc.val_every == 0 || trainer.step == tc.max_steps {
            logs.losses.flush()?;
            validate_and_save(&trainer, val, dir, &mut logs, &mut best)?;
        }
    }
    logs.losses.flush()?;
    let (best_row, best_path) = best.expect("validated at least once");
    let best_copy = dir.join(CHECKPOINT_DIR).join(BEST_CHECKPOINT);
    std::fs::copy(&best_path, &best_copy)?;
    let final_path = dir.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_path)?;
    let summary = RunSummary {
        steps: trainer.step,
        learning_rate: trainer.opt_g.lr,
        best_step: best_row.step,
        best_psnr: best_row.psnr,
        best_ssim: best_row.ssim,
        best_lpips: best_row.lpips,
        best_checkpoint: best_copy,
        final_sha256: file_sha256(&final_path)?,
        final_checkpoint: final_path,
    };
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Read a run's loss log.
pub fn read_losses(dir: &Path) -> Result<Vec<StepLog>> {
    let mut r = csv::Reader::from_path(dir.join(LOSSES_FILE))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_validations(dir: &Path) -> Result<Vec<ValidationLog>> {
    let mut r = csv::Reader::from_path(dir.join(METRICS_FILE))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::DiscriminatorConfig;
    use crate::generator::GeneratorConfig;
    use crate::imaging::synth_dataset;

    fn micro_config() -> RunConfig {
        let mut c = RunConfig::tiny();
        c.generator = GeneratorConfig::micro();
        c.discriminator = DiscriminatorConfig::micro();
        c.train.batch_size = 2;
        c
    }

    fn micro_batch() -> Batch {
        synth_dataset(0, 2, 32).unwrap().batch(&[0, 1]).unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p =
            ParamSet::from_parts(vec!["w".into()], vec![Tensor::new(&[2], vec![1.0f32, -1.0]).unwrap()]).unwrap();
        let mut opt = Adam::new(&p, 0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[Tensor::new(&[2], vec![3.0, -0.5]).unwrap()]);
        assert!((p.tensors()[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p.tensors()[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0f32, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-6);
        let mut small = vec![Tensor::new(&[1], vec![0.5f32]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.5);
    }

    #[test]
    fn d_step_leaves_generator_alone_and_starts_at_ln2() {
        let mut tr = Trainer::new(micro_config()).unwrap();
        let out = tr.discriminator.convs.last().unwrap().clone();
        tr.disc_params.get_mut(out.weight).data_mut().fill(0.0);
        tr.disc_params.get_mut(out.bias.unwrap()).data_mut().fill(0.0);
        let before = tr.gen_params.clone();
        let d_before = tr.disc_params.clone();
        let loss = tr.train_step_d(&micro_batch()).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-6, "{loss}");
        assert_eq!(tr.gen_params, before);
        assert_ne!(tr.disc_params, d_before);
    }

    #[test]
    fn g_step_leaves_discriminator_alone() {
        let mut tr = Trainer::new(micro_config()).unwrap();
        let d_before = (tr.disc_params.clone(), tr.buffers.clone());
        let g_before = tr.gen_params.clone();
        let s = tr.train_step_g(&micro_batch()).unwrap();
        assert_eq!((tr.disc_params.clone(), tr.buffers.clone()), d_before);
        assert_ne!(tr.gen_params, g_before);
        let recomputed = crate::losses::generator_total(&s.report.terms, tr.weights()).total;
        assert!((recomputed - s.report.total).abs() < 1e-5 * s.report.total.abs().max(1.0));
    }

    #[test]
    fn same_seed_same_discriminator_update() {
        let run = || {
            let mut tr = Trainer::new(micro_config()).unwrap();
            tr.train_step_d(&micro_batch()).unwrap();
            tr.disc_params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pixel_only_objective_decreases() {
        let mut c = micro_config();
        c.losses = LossWeights::pixel_only();
        c.train.learning_rate = 1e-3;
        let mut tr = Trainer::new(c).unwrap();
        let batch = micro_batch();
        let pixel: Vec<f64> = (0..50)
            .map(|_| tr.train_step_g(&batch).unwrap().report.terms.pixel)
            .collect();
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        assert!(avg(&pixel[45..]) < avg(&pixel[..5]), "{pixel:?}");
    }

    #[test]
    fn validation_ignores_noise_and_is_repeatable() {
        let tr = Trainer::new(micro_config()).unwrap();
        let val = synth_dataset(5, 2, 32).unwrap();
        let s = tr.metric_settings();
        let a = validate(&tr.generator, &tr.gen_params, &val, &s, 2).unwrap();
        let b = validate(&tr.generator, &tr.gen_params, &val, &s, 2).unwrap();
        assert_eq!((a.psnr_db, a.ssim, a.lpips), (b.psnr_db, b.ssim, b.lpips));
        assert!(a.psnr_db.is_finite() && a.ssim.is_finite() && a.lpips.is_finite());
        // the noisy path gives a different image
        let batch = val.batch(&[0, 1]).unwrap();
        let clean = super_resolve(&tr.generator, &tr.gen_params, &batch.lr_up).unwrap();
        let noisy = tr
            .generator
            .forward(
                &tr.gen_params.bind(false),
                &constant(&batch.lr_up),
                0.0,
                0.1,
                &mut ChaCha8Rng::seed_from_u64(1),
            )
            .unwrap()
            .sr_final;
        assert_ne!(&clean, noisy.value());
    }

    #[test]
    fn zero_steps_writes_initial_checkpoint_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = micro_config();
        c.train.max_steps = 0;
        let data = synth_dataset(0, 2, 32).unwrap();
        let s = train(c, &data, &data, dir.path()).unwrap();
        assert_eq!(s.steps, 0);
        assert_eq!(s.best_step, 0);
        assert!(read_losses(dir.path()).unwrap().is_empty());
        assert_eq!(read_validations(dir.path()).unwrap().len(), 1);
        assert!(s.final_checkpoint.exists() && s.best_checkpoint.exists());
    }

    #[test]
    fn short_run_logs_every_step_and_picks_best() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = micro_config();
        c.train.max_steps = 3;
        c.train.val_every = 2;
        let data = synth_dataset(0, 3, 32).unwrap();
        let s = train(c, &data, &data, dir.path()).unwrap();
        let losses = read_losses(dir.path()).unwrap();
        assert_eq!(losses.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
        let vals = read_validations(dir.path()).unwrap();
        assert_eq!(vals.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 2, 3]);
        let best = vals.iter().map(|r| r.psnr).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s.best_psnr, best);
        let snapshot = std::fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(RunConfig::from_json(&snapshot).unwrap().to_json().unwrap(), snapshot);
    }
}
