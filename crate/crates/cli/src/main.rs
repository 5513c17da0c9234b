use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use catformer::checkpoint::Checkpoint;
use catformer::config::{Ablation, RunConfig};
use catformer::generator::Generator;
use catformer::imaging::{self, DatasetManifest, DEFAULT_LR_SUFFIX, IMAGE_SIZE};
use catformer::metrics::{self, ColorSpace, MetricSettings};
use catformer::training;
use catformer::verify::{self, VerifyOptions};

/// Dual-branch transformer super-resolution: data prep, training,
/// evaluation, inference and self-verification.
#[derive(Parser)]
#[command(name = "catformer", version)]
struct Cli {
    /// Root directory for training runs.
    #[arg(long, global = true, env = "CATFORMER_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural paired dataset (hr/, lr/ with the x4 suffix, manifest.json).
    Synth(SynthArgs),
    /// Train from a JSON run configuration.
    Train(TrainArgs),
    /// Per-image and mean PSNR, SSIM, LPIPS-style distance and batch time as CSV.
    Eval(EvalArgs),
    /// Super-resolve one image.
    Infer(InferArgs),
    /// Run the invariant suite; exits nonzero if any check fails.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, short = 'n', default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// HR side length; LR files are a quarter of it.
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory name under the run root (default: config file stem plus ablation).
    #[arg(long)]
    name: Option<String>,
    /// Explicit run directory; overrides the run root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured ablation: none, low_lr or plain_decoder.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory holding hr/ and lr/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
    #[arg(long, default_value = DEFAULT_LR_SUFFIX)]
    lr_suffix: String,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Compute PSNR and SSIM on BT.601 luma instead of RGB.
    #[arg(long)]
    y_channel: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = IMAGE_SIZE)]
    size: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Coordinates sampled per gradient check.
    #[arg(long, default_value_t = VerifyOptions::default().samples)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Residual scale used by the residual-block checks (mutation testing).
    #[arg(long, hide = true, default_value_t = VerifyOptions::default().residual_scale)]
    residual_scale: f64,
}

/// Failure attributable to the invocation rather than the run.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, &cli.run_root),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn synth(a: SynthArgs) -> anyhow::Result<ExitCode> {
    let data = imaging::synth_dataset(a.seed, a.count, a.size).map_err(|e| usage(e.to_string()))?;
    let written = imaging::write_dataset(&data, &a.out)?;
    let c = written.counts();
    println!(
        "wrote {} pairs to {} ({} corrupt, {} unpaired)",
        c.valid,
        a.out.display(),
        c.corrupt,
        c.unpaired
    );
    Ok(ExitCode::SUCCESS)
}

fn load_config(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    if !a.config.is_file() {
        return Err(usage(format!("config file {} not found", a.config.display())));
    }
    let mut config = RunConfig::load(&a.config).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    if let Some(ablation) = a.ablation {
        config.train.ablation = ablation;
    }
    if let Some(n) = a.max_steps {
        config.train.max_steps = n;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    config.resolve().map_err(|e| usage(e.to_string()))
}

fn dataset(dir: Option<&Path>, config: &RunConfig, synth_seed: u64, synth_n: usize) -> anyhow::Result<DatasetManifest> {
    let d = &config.data;
    match dir {
        Some(dir) => {
            let m = imaging::scan_and_pair(
                &dir.join("hr"),
                &dir.join("lr"),
                &d.lr_suffix,
                d.image_size,
                config.train.seed,
            )
            .with_context(|| format!("scanning {}", dir.display()))?;
            if m.is_empty() {
                bail!("no valid pairs in {}", dir.display());
            }
            Ok(m)
        }
        None => Ok(imaging::synth_dataset(synth_seed, synth_n, d.image_size)?),
    }
}

fn train(a: TrainArgs, run_root: &Path) -> anyhow::Result<ExitCode> {
    let config = load_config(&a)?;
    let dir = match (&a.out, &a.name) {
        (Some(out), _) => out.clone(),
        (None, Some(name)) => run_root.join(name),
        (None, None) => {
            let stem = a
                .config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            match config.train.ablation {
                Ablation::None => run_root.join(stem),
                other => run_root.join(format!(
                    "{stem}-{}",
                    serde_json::to_value(other)?.as_str().unwrap_or("ablation")
                )),
            }
        }
    };
    let synth = config.data.synth.clone();
    let train_set = dataset(config.data.train_dir.as_deref(), &config, synth.seed, synth.train)?;
    // the synthetic validation split uses the next seed so it never overlaps
    let val_set = dataset(
        config.data.val_dir.as_deref(),
        &config,
        synth.seed.wrapping_add(1),
        synth.val,
    )?;
    log::info!(
        "training on {} pairs, validating on {}, into {}",
        train_set.len(),
        val_set.len(),
        dir.display()
    );
    let summary = training::train(config, &train_set, &val_set, &dir)?;
    println!(
        "finished {} steps; best step {} (psnr {:.3} dB, ssim {:.4}, lpips {:.4}); final checkpoint {} sha256 {}",
        summary.steps,
        summary.best_step,
        summary.best_psnr,
        summary.best_ssim,
        summary.best_lpips,
        summary.final_checkpoint.display(),
        summary.final_sha256
    );
    Ok(ExitCode::SUCCESS)
}

fn load_generator(path: &Path) -> anyhow::Result<(Generator, catformer::nn::ParamSet<f32>)> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} not found", path.display())));
    }
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let generator = Generator::new(ck.generator.clone())?;
    let params = ck.generator_params(&generator.layout)?;
    Ok((generator, params))
}

fn eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let (generator, params) = load_generator(&a.checkpoint)?;
    if !a.data.is_dir() {
        return Err(usage(format!("dataset directory {} not found", a.data.display())));
    }
    let data = imaging::scan_and_pair(&a.data.join("hr"), &a.data.join("lr"), &a.lr_suffix, a.size, 0)
        .with_context(|| format!("scanning {}", a.data.display()))?;
    if data.is_empty() {
        bail!("no valid pairs in {}", a.data.display());
    }
    let settings = MetricSettings {
        color: if a.y_channel { ColorSpace::Y } else { ColorSpace::Rgb },
        ..MetricSettings::default()
    };
    let rows = training::evaluate(&generator, &params, &data, &settings, a.batch_size)?;
    let mean = metrics::write_metric_csv(&a.out, &rows)?;
    println!(
        "{} images: psnr {:.3} dB, ssim {:.4}, lpips {:.4}, {:.3} s/batch -> {}",
        rows.len(),
        mean.psnr,
        mean.ssim,
        mean.lpips,
        mean.time_s,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn infer(a: InferArgs) -> anyhow::Result<ExitCode> {
    let (generator, params) = load_generator(&a.checkpoint)?;
    if !a.input.is_file() {
        return Err(usage(format!("input image {} not found", a.input.display())));
    }
    let lr_up = imaging::load_lr_input(&a.input, a.size)?;
    let sr = training::super_resolve(&generator, &params, &lr_up)?;
    imaging::tensor_to_rgb8(&sr, 0)?
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}x{} image to {}", a.size, a.size, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_verify(a: VerifyArgs) -> anyhow::Result<ExitCode> {
    let opts = VerifyOptions {
        residual_scale: a.residual_scale,
        samples: a.samples,
        seed: a.seed,
    };
    let checks = verify::run_all(&opts);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!(
        "{} checks, {} passed, {} failed",
        checks.len(),
        checks.len() - failed,
        failed
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
