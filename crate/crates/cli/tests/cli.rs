use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use atrous_seg::data::netpbm;
use seg_cli::checkpoint::Checkpoint;
use seg_cli::config::RunConfig;
use seg_cli::load_eval;
use tempfile::TempDir;

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.arch.scale_widths(8);
    cfg.train.max_iter = 4;
    cfg.train.batch = 2;
    cfg.train.crop = 32;
    cfg.eval.trimap_widths = vec![1, 3];
    cfg.data.shapes_train = 4;
    cfg.data.shapes_eval = 2;
    cfg.data.shapes_side = 32;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, cfg.to_text()).unwrap();
    path
}

fn seg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seg")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "seg failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 3\ntrain.learning_rate = 0.1\n").unwrap();
    let out = seg(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rate"));

    let out = seg(&["analyze", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let out = seg(&["eval", "--config", s(&cfg), "--checkpoint", s(&dir.path().join("nope.bin"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seeded_runs_repeat_and_checkpoints_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(seg(&["train", "--config", s(&cfg), "--out", s(d)]));
        ok(seg(&["eval", "--config", s(&cfg), "--out", s(d)]));
    }
    for f in ["loss.csv", "metrics.csv", "checkpoint.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.starts_with("iter,lr,loss\n0,"));

    let bytes = std::fs::read(a.join("checkpoint.bin")).unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.iteration, 4);
    let again = dir.path().join("again.bin");
    ck.save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    assert!(Checkpoint::from_bytes(&corrupt).is_err());

    // Another seed gives another run.
    let c = dir.path().join("c");
    ok(seg(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "8"]));
    assert_ne!(std::fs::read(c.join("loss.csv")).unwrap(), std::fs::read(a.join("loss.csv")).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    ok(seg(&["train", "--config", s(&cfg), "--out", s(&full)]));
    ok(seg(&["train", "--config", s(&cfg), "--out", s(&split), "--until", "2"]));
    assert_eq!(Checkpoint::load(&split.join("checkpoint.bin")).unwrap().iteration, 2);
    assert_eq!(std::fs::read_to_string(split.join("loss.csv")).unwrap().lines().count(), 3);
    ok(seg(&["train", "--config", s(&cfg), "--out", s(&split), "--resume"]));
    for f in ["loss.csv", "checkpoint.bin"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_with_another_architecture_is_refused() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let run = dir.path().join("run");
    ok(seg(&["train", "--config", s(&cfg), "--out", s(&run), "--until", "1"]));
    let out = seg(&["train", "--config", s(&cfg), "--out", s(&run), "--resume", "--set", "decoder.reduce_channels=5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ground_truth_predictions_score_one() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config();
    let cfg = write_config(dir.path(), &config);
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    for (i, sample) in load_eval(&config).unwrap().iter().enumerate() {
        netpbm::save_label(&pred.join(format!("{i:05}.pgm")), &sample.label).unwrap();
    }
    let out = ok(seg(&["eval", "--config", s(&cfg), "--predictions", s(&pred)]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "miou,1.000000"), "{text}");
    assert!(text.lines().any(|l| l == "trimap_miou_w1,1.000000"), "{text}");
}

#[test]
fn infer_writes_labels_and_overlay() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config();
    let cfg = write_config(dir.path(), &config);
    let run = dir.path().join("run");
    ok(seg(&["train", "--config", s(&cfg), "--out", s(&run), "--until", "1"]));
    let sample = &load_eval(&config).unwrap()[0];
    let image = dir.path().join("in.ppm");
    netpbm::save_image(&image, &sample.image).unwrap();
    let prefix = dir.path().join("pred");
    ok(seg(&["infer", "--checkpoint", s(&run.join("checkpoint.bin")), "--image", s(&image), "--out", s(&prefix)]));
    let labels = netpbm::load_label(&dir.path().join("pred.pgm")).unwrap();
    assert_eq!((labels.height(), labels.width()), (32, 32));
    labels.validate(config.arch.num_classes).unwrap();
    assert!(dir.path().join("pred_overlay.ppm").is_file());
}

#[test]
fn analyze_reports_plan_and_costs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let out = dir.path().join("an");
    ok(seg(&["analyze", "--config", s(&cfg), "--out", s(&out), "--eval-os", "8"]));
    let plan = std::fs::read_to_string(out.join("plan.txt")).unwrap();
    assert!(plan.starts_with("output_stride = 8\n"), "{plan}");
    let cost = std::fs::read_to_string(out.join("cost.csv")).unwrap();
    assert!(cost.lines().count() > 10);
}
