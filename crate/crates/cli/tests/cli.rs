use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use catformer::config::RunConfig;
use tempfile::TempDir;

fn catformer(args: &[&str], run_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catformer"))
        .args(args)
        .env("CATFORMER_RUN_ROOT", run_root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn png_dims(path: &Path) -> (u32, u32) {
    let b = fs::read(path).unwrap();
    assert_eq!(&b[1..4], b"PNG");
    let be = |i: usize| u32::from_be_bytes(b[i..i + 4].try_into().unwrap());
    (be(16), be(20))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut c = RunConfig::tiny();
    c.train.max_steps = 2;
    c.train.batch_size = 2;
    c.data.synth.train = 2;
    c.data.synth.val = 1;
    let path = dir.join("small.json");
    fs::write(&path, c.to_json().unwrap()).unwrap();
    path
}

#[test]
fn synth_writes_pairs_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = catformer(
            &[
                "synth",
                "--out",
                dir.to_str().unwrap(),
                "-n",
                "4",
                "--size",
                "32",
                "--seed",
                "3",
            ],
            tmp.path(),
        );
        assert_eq!(code(&out), 0, "{out:?}");
    }
    let hr = fs::read_dir(a.join("hr")).unwrap().count();
    let lr = fs::read_dir(a.join("lr")).unwrap().count();
    assert_eq!((hr, lr), (4, 4));
    assert!(a.join("lr/img0000x4.png").exists());
    assert_eq!(png_dims(&a.join("lr/img0000x4.png")), (8, 8));
    for f in ["hr/img0002.png", "lr/img0002x4.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["valid"], 4);
    assert_eq!(manifest["counts"]["corrupt"], 0);
    assert_eq!(manifest["counts"]["unpaired"], 0);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&catformer(&["train"], tmp.path())), 2);
    assert_eq!(
        code(&catformer(&["train", "--config", "/nonexistent/run.json"], tmp.path())),
        2
    );
    assert_eq!(code(&catformer(&["frobnicate"], tmp.path())), 2);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"learnin_rate": 1}}"#).unwrap();
    let out = catformer(&["train", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
    let out = catformer(
        &["train", "--config", bad.to_str().unwrap(), "--ablation", "sideways"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_infer_round_trip() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("runs");
    let cfg = small_config(tmp.path());
    let out = catformer(
        &["train", "--config", cfg.to_str().unwrap(), "--ablation", "low_lr"],
        &root,
    );
    assert_eq!(code(&out), 0, "{out:?}");
    let run = root.join("small-low_lr");
    let ckpt = run.join("checkpoints/final.ckpt");
    assert!(ckpt.exists());
    assert!(run.join("checkpoints/best.ckpt").exists());

    // the snapshot is the resolved config
    let snapshot = RunConfig::load(&run.join("config.json")).unwrap();
    assert_eq!(snapshot.train.learning_rate, 1e-5);
    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);
    assert!(
        losses
            .lines()
            .skip(1)
            .all(|l| l.split(',').nth(1).and_then(|v| v.parse::<f64>().ok()) == Some(1e-5)),
        "{losses}"
    );

    let data = tmp.path().join("data");
    catformer(
        &["synth", "--out", data.to_str().unwrap(), "-n", "3", "--size", "32"],
        &root,
    );
    let csv = tmp.path().join("eval.csv");
    let out = catformer(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--size",
            "32",
            "--out",
            csv.to_str().unwrap(),
        ],
        &root,
    );
    assert_eq!(code(&out), 0, "{out:?}");
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_id,psnr,ssim,lpips,mse,time_s");
    assert_eq!(lines.len(), 5);
    let field = |line: &str, i: usize| line.split(',').nth(i).unwrap().parse::<f64>().unwrap();
    assert!(lines[4].starts_with("mean,"));
    for col in 1..=5 {
        let mean = lines[1..4].iter().map(|l| field(l, col)).sum::<f64>() / 3.0;
        assert!(
            (field(lines[4], col) - mean).abs() <= 1e-9 * mean.abs().max(1.0),
            "column {col}"
        );
    }

    let input = data.join("lr/img0001x4.png");
    let mut outputs = Vec::new();
    for name in ["sr1.png", "sr2.png"] {
        let path = tmp.path().join(name);
        let out = catformer(
            &[
                "infer",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--input",
                input.to_str().unwrap(),
                "--out",
                path.to_str().unwrap(),
            ],
            &root,
        );
        assert_eq!(code(&out), 0, "{out:?}");
        assert_eq!(png_dims(&path), (128, 128));
        outputs.push(fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn eval_rejects_a_missing_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let out = catformer(
        &["eval", "--checkpoint", "nope.ckpt", "--data", ".", "--out", "x.csv"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, b"definitely not a checkpoint").unwrap();
    let out = catformer(
        &[
            "infer",
            "--checkpoint",
            garbage.to_str().unwrap(),
            "--input",
            "a.png",
            "--out",
            "b.png",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn verify_passes_and_catches_a_mutated_residual_scale() {
    let tmp = TempDir::new().unwrap();
    let out = catformer(&["verify"], tmp.path());
    let report = stdout(&out);
    assert_eq!(code(&out), 0, "{report}");
    assert!(report.lines().filter(|l| l.starts_with("PASS")).count() >= 40);
    assert!(report
        .lines()
        .all(|l| !l.starts_with("PASS") || l.contains("tolerance")));

    let out = catformer(&["verify", "--residual-scale", "0.3"], tmp.path());
    assert_eq!(code(&out), 1);
    let failed: Vec<String> = stdout(&out)
        .lines()
        .filter(|l| l.starts_with("FAIL"))
        .map(String::from)
        .collect();
    assert_eq!(failed.len(), 1, "{failed:?}");
    assert!(failed[0].contains("1.2"));
    assert!(stdout(&out).contains("PASS reduction  residual_block, zero weights = identity"));
}
