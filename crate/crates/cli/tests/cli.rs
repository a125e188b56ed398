use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use refseg::dataset::{read_png, read_records};
use refseg::{EvalReport, TrainConfig};

fn refseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refseg")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Generates 20 screens and trains a few steps on them.
fn trained(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let o = refseg(&["gen-data", "--out", s(&data), "--count", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("train.json");
    let tc = TrainConfig {
        steps: 6,
        eval_interval: 3,
        accumulation: 2,
        ..TrainConfig::default()
    };
    fs::write(&cfg, serde_json::to_string(&tc).unwrap()).unwrap();
    let ckpt = dir.join("m.ckpt");
    let o = refseg(&["train", "--data", s(&data), "--train-config", s(&cfg), "--out", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, ckpt)
}

#[test]
fn gen_data_writes_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = refseg(&["gen-data", "--out", s(&data), "--count", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = read_records(&data.join("train.jsonl")).unwrap();
    let test = read_records(&data.join("test.jsonl")).unwrap();
    // Screens 0..16 train, 16..18 val, 18..20 test; at most four pairs each.
    assert!(train.len() > 16 && train.len() <= 16 * 4);
    assert!(train.iter().all(|r| r.screen_id.as_str() < "s000016"));
    assert!(test.iter().all(|r| r.screen_id.as_str() >= "s000018"));
    assert!(data.join("spec.json").exists());
}

#[test]
fn train_eval_infer() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    assert!(dir.path().join("m.ckpt.config.json").exists());
    let log = fs::read_to_string(dir.path().join("m.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,train_loss,val_miou,val_accuracy"));
    assert_eq!(log.lines().count(), 3);

    let o = refseg(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--split", "val"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.split, "val");
    assert!(report.count > 0 && report.count <= 8);

    let rec = &read_records(&data.join("test.jsonl")).unwrap()[0];
    let elements = dir.path().join("elements.json");
    fs::write(&elements, serde_json::to_string(&rec.elements).unwrap()).unwrap();
    let image = data.join(&rec.image);
    let heat = dir.path().join("heat.png");
    let o = refseg(&[
        "infer", "--ckpt", s(&ckpt), "--image", s(&image), "--elements", s(&elements), "--expr", &rec.expression,
        "--out", s(&heat),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let h = read_png(&heat).unwrap();
    let m = read_png(&dir.path().join("heat_mask.png")).unwrap();
    assert_eq!((h.width, h.height), (64, 64));
    assert_eq!((m.width, m.height), (64, 64));
    assert!(m.data.iter().all(|&v| v == 0 || v == 255));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = refseg(&["eval", "--data", s(&missing), "--ckpt", s(&missing.join("x.ckpt"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));

    let o = refseg(&["gen-data", "--out", s(&dir.path().join("d")), "--count", "3"]);
    assert!(!o.status.success());

    let bad = dir.path().join("spec.json");
    fs::write(&bad, r#"{"labels": ["ok"]}"#).unwrap();
    let o = refseg(&["gen-data", "--spec", s(&bad), "--out", s(&dir.path().join("e"))]);
    assert!(!o.status.success(), "a spec with one label is rejected");

    assert!(!refseg(&["train"]).status.success());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&ckpt, &bytes).unwrap();
    let o = refseg(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_small() {
    let o = refseg(&["gradcheck", "--size", "8", "--seeds", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("PASS")));
    assert!(!out.contains("FAIL"));
}
