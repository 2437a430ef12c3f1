use std::fs;
use std::path::Path;
use std::process::Command;

use hclnet::data::{read_pgm, read_ppm};
use hclnet_cli::commands::{TRAIN_LOG_HEADER, VISUALIZATION_FILES};
use hclnet_cli::{run, RunConfig};
use tempfile::TempDir;

const TINY: &str = "\
seed = 5
[data]
train_samples = 12
test_samples = 4
[model]
backbone_channels = 4, 8, 8
head_width = 8
[train]
epochs = 3
batch_size = 4
";

struct Outcome {
    code: u8,
    stdout: String,
    stderr: String,
}

fn hclnet(dir: &Path, args: &[&str]) -> Outcome {
    let cfg = dir.join("run.cfg");
    if !cfg.exists() {
        fs::write(&cfg, TINY).unwrap();
    }
    let out_dir = dir.join("out");
    let mut argv = vec![
        "hclnet".to_string(),
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        out_dir.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = hclnet(dir, args);
    assert_eq!(o.code, 0, "{args:?} failed: {}", o.stderr);
    o.stdout
}

fn metric(stdout: &str, name: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name}=")))
        .unwrap_or_else(|| panic!("no {name} in {stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = dir.join("out");
    ok(dir, &["gen-data"]);
    assert_eq!(fs::read_dir(out.join("data/train")).unwrap().count(), 13);
    assert_eq!(fs::read_dir(out.join("data/test")).unwrap().count(), 5);

    let log_lines = ok(dir, &["train"]);
    assert!(log_lines.contains("epoch=3"));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], TRAIN_LOG_HEADER);
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 4));

    let single = ok(dir, &["--single-branch", "eval"]);
    assert!(single.starts_with("run=ccam-branch_a\n"));
    for name in ["top1_cls_err", "top5_cls_err", "top1_loc_err", "top5_loc_err", "gt_known_loc_acc"] {
        let v = metric(&single, name);
        assert!((0.0..=100.0).contains(&v), "{name}={v}");
    }
    let records = fs::read_to_string(out.join("eval/ccam-branch_a.csv")).unwrap();
    assert_eq!(records.lines().count(), 5);

    let viz = ok(dir, &["visualize", "--sample", "test_00002"]);
    assert!(viz.contains("sample=test_00002"));
    let vdir = out.join("visualize/test_00002");
    for f in VISUALIZATION_FILES {
        let bytes = fs::read(vdir.join(f)).unwrap();
        let magic = if f.ends_with(".pgm") { b"P5" } else { b"P6" };
        assert_eq!(&bytes[..2], magic, "{f}");
    }
    let cam_a = read_pgm(&vdir.join("cam_a.pgm")).unwrap();
    let ccam = read_pgm(&vdir.join("ccam.pgm")).unwrap();
    for (a, c) in cam_a.data().iter().zip(ccam.data()) {
        let (a, c) = ((a * 255.0).round() as i32, (c * 255.0).round() as i32);
        assert!((255 - a - c).abs() <= 1, "{a} + {c}");
    }
    let overlay = read_ppm(&vdir.join("overlay.ppm")).unwrap();
    assert_eq!(overlay.shape(), &[3, 64, 64]);

    for cmd in ["gen-data", "train", "eval", "visualize"] {
        let text = fs::read_to_string(out.join(format!("{cmd}.manifest"))).unwrap();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(RunConfig::parse(&parsed.to_file_string()).unwrap(), parsed, "{cmd}");
        assert_eq!(parsed.seed, 5);
        assert_eq!(parsed.data.train_samples, 12);
    }
    let eval_manifest = RunConfig::parse(&fs::read_to_string(out.join("eval.manifest")).unwrap()).unwrap();
    assert!(eval_manifest.eval.single_branch);
}

#[test]
fn grid_emits_six_reports() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-data"]);
    ok(dir, &["train"]);
    let stdout = ok(dir, &["eval", "--grid"]);
    let labels: Vec<&str> = stdout.lines().filter_map(|l| l.strip_prefix("run=")).collect();
    assert_eq!(
        labels,
        ["ccam-max", "ccam-addition", "ccam-l1norm", "threshold-max", "threshold-addition", "threshold-l1norm"]
    );
    assert_eq!(stdout.matches("gt_known_loc_acc=").count(), 6);
    for l in labels {
        assert!(dir.join(format!("out/eval/{l}.csv")).is_file(), "{l}");
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        ok(dir, &["gen-data"]);
        ok(dir, &["train"]);
    }
    for f in ["out/model.ckpt", "out/train_log.csv", "out/data/train/train_00007.ppm"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let missing = hclnet(dir, &["train"]);
    assert_eq!(missing.code, 2, "{}", missing.stderr);
    assert!(missing.stderr.contains("gen-data"));

    let conv = hclnet(dir, &["--strategy", "conv", "eval"]);
    assert_eq!(conv.code, 1);
    assert!(conv.stderr.contains("max, addition, l1norm"));

    ok(dir, &["gen-data"]);
    ok(dir, &["train"]);
    let absent = hclnet(dir, &["visualize", "--sample", "test_99999"]);
    assert_eq!(absent.code, 2);
    assert!(absent.stderr.contains("test_99999"));
    assert_eq!(hclnet(dir, &["visualize"]).code, 1);
    assert_eq!(hclnet(dir, &["eval", "--checkpoint", dir.join("run.cfg").to_str().unwrap()]).code, 2);
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("run.cfg"),
        format!("{TINY}learning_rate = 1e30\nmax_grad_norm = none\n"),
    )
    .unwrap();
    ok(dir, &["gen-data"]);
    let o = hclnet(dir, &["train"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(!dir.join("out/model.ckpt").exists());
}

#[test]
fn malformed_config_reports_the_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.cfg"), "seed = 1\n[train]\nepochs = many\n").unwrap();
    let o = hclnet(tmp.path(), &["gen-data"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("line 3"), "{}", o.stderr);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hclnet");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("visualize"));
    let version = Command::new(bin).arg("--version").output().unwrap();
    assert_eq!(version.status.code(), Some(0));
    let bad = Command::new(bin).args(["--strategy", "conv", "eval"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let tmp = TempDir::new().unwrap();
    let missing = Command::new(bin)
        .args(["--out", tmp.path().to_str().unwrap(), "eval"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
