use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "name": "cli-test",
  "dataset": {"kind": "synth", "n_train": 300, "n_test": 100},
  "zoo": {"M": 10, "epochs": 2},
  "ae": {"d_token": 16, "d_hidden": 32, "n_layers": 1, "n_heads": 2, "d_z": 8, "epochs": 2,
         "batch_size": 8, "proj_hidden": 16, "proj_dim": 8},
  "samplers": [{"kind": "kde30"}, {"kind": "uniform"}],
  "eval": {"epochs": 1, "population": 4, "ensemble_sizes": [1, 2]}
}"#;

fn weightgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weightgen"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "cfg.json", "--threads", "1"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let o = weightgen(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("cfg.json"), CONFIG).unwrap();
    ok(dir, &["zoo", "gen"]);
    ok(dir, &["ae", "train"]);
    ok(dir, &["sampler", "fit"]);
    ok(dir, &["sample", "--method", "kde30", "--n", "50"]);
    ok(dir, &["eval", "init", "--method", "kde30"]);
}

#[test]
fn pipeline_is_reproducible_and_idempotent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    let samples = a.path().join("runs/samples/kde30.wze");
    let (dim, rows) = weightgen::hyperae::format::read_wze(&std::fs::read(&samples).unwrap()).unwrap();
    assert_eq!((dim, rows.len()), (8, 50));
    let csv = std::fs::read_to_string(a.path().join("runs/reports/init/kde30.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));
    assert!(a.path().join("runs/samples/kde30.wze.run.json").exists());

    // A second run skips existing outputs and leaves them untouched.
    let before = std::fs::metadata(&samples).unwrap().modified().unwrap();
    ok(a.path(), &["sample", "--method", "kde30", "--n", "50"]);
    assert_eq!(std::fs::metadata(&samples).unwrap().modified().unwrap(), before);

    // An independent rerun from scratch is byte-identical.
    pipeline(b.path());
    for rel in ["runs/samples/kde30.wze", "runs/reports/init/kde30.csv", "runs/embeddings/anchors.wze", "runs/ae.wza"] {
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    let rec = |d: &Path| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(d.join("runs/samples/kde30.wze.run.json")).unwrap()).unwrap()
    };
    assert_eq!(rec(a.path())["config_hash"], rec(b.path())["config_hash"]);

    // --force recomputes to the same bytes.
    let old = std::fs::read(&samples).unwrap();
    ok(a.path(), &["--force", "sample", "--method", "kde30", "--n", "50"]);
    assert_eq!(std::fs::read(&samples).unwrap(), old);
}

#[test]
fn exit_codes_follow_error_kind() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.json"), r#"{"ae": {"dz": 3}}"#).unwrap();
    let o = weightgen(d.path(), &["zoo", "gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dz"));

    std::fs::write(d.path().join("cfg.json"), "{}").unwrap();
    let o = weightgen(d.path(), &["ae", "train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weightgen zoo gen"));
    let o = weightgen(d.path(), &["sample", "--method", "kde30", "--n", "5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampler fit --method kde30"));
    let o = weightgen(d.path(), &["sample", "--method", "nope", "--n", "5"]);
    assert_eq!(o.status.code(), Some(2));
}
