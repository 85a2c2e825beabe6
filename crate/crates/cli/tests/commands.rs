use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bgseg::data::imageio::save_mask;
use bgseg::data::{load_sequence, LabelMode};
use bgseg::segmentation::Mask;

fn bgseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a 20-frame moving-square sequence and returns its directory.
fn synth(root: &Path) -> PathBuf {
    let seq = root.join("scenes").join("square");
    let out = bgseg(&["synth", "--frames", "20", "--seed", "3", "--out", s(&seq)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    seq
}

const SHORT: [&str; 6] = [
    "--set",
    "training.steps.0.iterations=6",
    "--set",
    "training.steps.1.iterations=6",
    "--set",
    "training.steps.2.iterations=3",
];

fn train(seq: &Path, out: &Path) {
    let mut args = vec!["train", "--data", s(seq), "--out", s(out)];
    args.extend(SHORT);
    let o = bgseg(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn overall_f(reports_csv: &Path) -> f64 {
    let text = fs::read_to_string(reports_csv).unwrap();
    let line = text.lines().find(|l| l.starts_with("overall,")).expect("overall row");
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn synth_writes_cdnet_layout() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    for sub in ["input", "groundtruth", "background"] {
        assert_eq!(fs::read_dir(seq.join(sub)).unwrap().count(), 20, "{sub}");
    }
    assert!(seq.join("input/in000001.png").is_file());
    assert!(seq.join("groundtruth/gt000020.png").is_file());
}

#[test]
fn perfect_masks_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let masks = dir.path().join("masks");
    let mask_dir = masks.join("scenes/square/mask");
    fs::create_dir_all(&mask_dir).unwrap();
    for f in load_sequence(&seq, LabelMode::Strict).unwrap() {
        let l = &f.labels;
        let values = l.values().iter().map(|&v| (v == 1) as u8).collect();
        let m = Mask::new(l.height(), l.width(), values).unwrap();
        save_mask(&mask_dir.join(format!("bin{:06}.png", f.frame_index)), &m).unwrap();
    }
    let out = dir.path().join("eval");
    for split in ["all", "test"] {
        let o = bgseg(&["eval", "--data", s(&seq), "--masks", s(&masks), "--split", split, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(overall_f(&out.join("reports.csv")), 1.0);
        assert!(String::from_utf8_lossy(&o.stdout).contains("overall"));
    }
}

#[test]
fn missing_mask_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let empty = dir.path().join("nomasks");
    fs::create_dir_all(&empty).unwrap();
    let o = bgseg(&["eval", "--data", s(&seq), "--masks", s(&empty)]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing mask"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn pca_sweep_spans_the_threshold_range() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let out = dir.path().join("sweep");
    let o = bgseg(&["sweep", "--method", "pca", "--data", s(&seq), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,theta,f_measure"));
    let thetas: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(thetas.len(), 51);
    assert_eq!(thetas[0], 0.0);
    assert_eq!(thetas[50], 0.5);
}

#[test]
fn baselines_write_masks_that_eval_reads() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    for method in ["pca", "rpca"] {
        let out = dir.path().join(method);
        let o = bgseg(&[method, "--data", s(&seq), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let seq_out = out.join("scenes/square");
        assert_eq!(fs::read_dir(seq_out.join("mask")).unwrap().count(), 20);
        assert_eq!(fs::read_dir(seq_out.join("background")).unwrap().count(), 20);
        let o = bgseg(&["eval", "--data", s(&seq), "--masks", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn train_infer_and_baseline1_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let run = dir.path().join("run");
    train(&seq, &run);
    for f in ["step1.bgfg", "step2.bgfg", "step3.bgfg", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 6 + 6 + 3);
    let cfg = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("iterations = 6"), "{cfg}");

    let ckpt = run.join("step3.bgfg");
    let inferred = dir.path().join("infer");
    let o = bgseg(&["infer", "--data", s(&seq), "--checkpoint", s(&ckpt), "--out", s(&inferred)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let seq_out = inferred.join("scenes/square");
    assert!(seq_out.join("background/bg000007.png").is_file());
    let mask = bgseg::data::imageio::load_mask(&seq_out.join("mask/bin000007.png")).unwrap();
    assert_eq!((mask.height(), mask.width()), (64, 64));

    let o = bgseg(&["eval", "--data", s(&seq), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let sweep = dir.path().join("sweep1");
    let o = bgseg(&[
        "sweep", "--method", "baseline1", "--data", s(&seq), "--checkpoint", s(&ckpt), "--out", s(&sweep),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("baseline1,0.00,"));
    assert!(text.lines().last().unwrap().starts_with("baseline1,0.50,"));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&seq, &a);
    train(&seq, &b);
    for f in ["losses.csv", "step3.bgfg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let out = dir.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["train", "--data", s(&seq)],
        vec!["train", "--data", s(&seq), "--out", s(&out), "--set", "training.lamda=1"],
        vec!["train", "--data", s(&seq), "--out", s(&out), "--profile", "huge"],
        vec!["train", "--data", s(&seq), "--out", s(&out), "--set", "training.lambda=-1"],
        vec!["eval", "--data", s(&seq)],
        vec!["sweep", "--method", "baseline1", "--data", s(&seq), "--out", s(&out)],
        vec!["sweep", "--method", "median", "--data", s(&seq), "--out", s(&out)],
    ];
    for args in cases {
        let o = bgseg(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!out.exists(), "usage errors must not create outputs");
}

#[test]
fn outputs_inside_the_input_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let before = fs::read_dir(&seq).unwrap().count();
    let o = bgseg(&["pca", "--data", s(&seq), "--out", s(&seq.join("pca"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(fs::read_dir(&seq).unwrap().count(), before);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bgseg(&["pca", "--data", s(&dir.path().join("absent")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3);
    let o = bgseg(&[
        "infer",
        "--data",
        s(dir.path()),
        "--checkpoint",
        s(&dir.path().join("none.bgfg")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn diverging_training_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path());
    let o = bgseg(&[
        "train",
        "--data",
        s(&seq),
        "--out",
        s(&dir.path().join("run")),
        "--set",
        "training.steps.0.learning_rate=1e300",
        "--set",
        "training.steps.0.iterations=5",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}
