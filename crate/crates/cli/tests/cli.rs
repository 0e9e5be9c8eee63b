use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn crossview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossview")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = crossview(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen(dir: &Path, seed: &str) {
    ok(&[
        "gen-data", "--out", dir.to_str().unwrap(), "--scenes", "30", "--paths-per-scene", "3", "--grid", "4",
        "--dct-order", "8", "--seed", seed, "--eval-fraction", "0.2", "--val-fraction", "0.05",
    ]);
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(crossview(&[]).status.code(), Some(1));
    assert_eq!(crossview(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(crossview(&["eval", "--data", "x", "--methods", "magic"]).status.code(), Some(1));
    assert_eq!(crossview(&["--help"]).status.code(), Some(0));
    let missing = crossview(&["eval", "--data", "/nonexistent/dataset"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let bad = crossview(&["gen-data", "--out", dir.path().to_str().unwrap(), "--eval-fraction", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "7");
    gen(b.path(), "7");
    for f in ["manifest.json", "train.jsonl", "val.jsonl", "eval.jsonl"] {
        assert!(read(a.path().join(f)) == read(b.path().join(f)), "{f} differs");
    }
    let m: Value = serde_json::from_slice(&read(a.path().join("manifest.json"))).unwrap();
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["generation"]["seed"], 7);
}

#[test]
fn train_transform_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "1");
    let data = data.to_str().unwrap();
    let train = |name: &str| {
        let ckpt = dir.path().join(format!("{name}.ckpt"));
        ok(&[
            "train", "--data", data, "--out", ckpt.to_str().unwrap(), "--layers", "1", "--dim", "16", "--heads", "2",
            "--steps", "6", "--batch-size", "4", "--seed", "5", "--eval-every", "3", "--eval-samples", "2",
            "--log-every", "0",
        ]);
        ckpt
    };
    let a = train("a");
    let b = train("b");
    assert_eq!(&read(&a)[..4], b"TRCE");
    assert!(read(&a) == read(&b), "checkpoints differ");
    let csv_a = read(a.with_extension("loss.csv"));
    assert!(csv_a == read(b.with_extension("loss.csv")));
    let csv = String::from_utf8(csv_a).unwrap();
    assert_eq!(csv.lines().next(), Some("step,loss,eval_iou"));
    assert_eq!(csv.lines().count(), 7);

    let manifest: Value = serde_json::from_slice(&read(dir.path().join("data/manifest.json"))).unwrap();
    assert!(manifest["counts"]["eval"].as_u64().unwrap() > 0);
    let eval_line = String::from_utf8(read(dir.path().join("data/eval.jsonl"))).unwrap();
    let record: Value = serde_json::from_str(eval_line.lines().next().unwrap()).unwrap();
    let id = record["id"].as_str().unwrap();

    let transform = |method: &str, out: &str| {
        let path = dir.path().join(out);
        ok(&[
            "transform", "--data", data, "--checkpoint", a.to_str().unwrap(), "--record", id, "--method", method,
            "--steps", "3", "--seed", "4", "--out", path.to_str().unwrap(),
        ]);
        path
    };
    let t1 = transform("model", "t1.json");
    let t2 = transform("model", "t2.json");
    assert!(read(&t1) == read(&t2), "transform output differs");
    let resp: Value = serde_json::from_slice(&read(&t1)).unwrap();
    assert_eq!(resp["b_tgt"].as_array().unwrap().len(), 24);
    assert_eq!(resp["checkpoint"], "a@6");

    let interp: Value = serde_json::from_slice(&read(transform("interpolation", "t3.json"))).unwrap();
    assert_eq!(interp["b_tgt"], interp["b_ref"]);
    assert_eq!(interp["b_ref"], record["b_ref"]);

    let keys = r#"[{"frame_index": 3, "box": [0.5, 0.5, 0.1, 0.1]}]"#;
    let bad = crossview(&["transform", "--data", data, "--record", id, "--method", "interpolation", "--keyframes", keys]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("keyframes_must_start_at_zero"));

    let report = dir.path().join("report.json");
    let csv = dir.path().join("report.csv");
    ok(&[
        "eval", "--data", data, "--checkpoint", a.to_str().unwrap(), "--methods",
        "model,model_no_trajectories,interpolation,warp_corners,warp_center,noisy-high,noisy-low", "--steps", "2",
        "--out", report.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    let rep: Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(rep["direction"], "f2v");
    let methods: Vec<_> = rep["reports"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(
        methods,
        ["model", "model_no_trajectories", "interpolation", "warp_corners", "warp_center", "noisy-high", "noisy-low"]
    );
    let n = manifest["counts"]["eval"].as_u64().unwrap();
    assert!(rep["reports"].as_array().unwrap().iter().all(|r| r["count"].as_u64() == Some(n)));
    let rows = String::from_utf8(read(&csv)).unwrap().lines().count() as u64;
    assert_eq!(rows, 1 + 7 * n);

    // the model methods need a checkpoint
    let no_ckpt = crossview(&["eval", "--data", data, "--methods", "model"]);
    assert_eq!(no_ckpt.status.code(), Some(2));
}
