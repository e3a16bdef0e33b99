use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn costdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costdet"))
        .args(args)
        .env("COSTDET_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = costdet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "generate",
        "--n",
        "30",
        "--positive-fraction",
        "0.5",
        "--seed",
        "3",
        "--out",
        p(&data),
    ]);
    data
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_split_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&[
            "generate",
            "--n",
            "200",
            "--positive-fraction",
            "0.4",
            "--seed",
            "7",
            "--out",
            p(d),
        ]);
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["slice_count"], 200);
    assert_eq!(m["split_counts"]["train"], 160);
    assert_eq!(m["split_counts"]["val"], 20);
    assert_eq!(m["split_counts"]["test"], 20);
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = costdet(&[
        "generate",
        "--positive-fraction",
        "1.5",
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = costdet(&[
        "train",
        "--data",
        p(&dir.path().join("missing")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset"));

    let out = costdet(&[
        "sweep",
        "--data",
        "x",
        "--checkpoint",
        "y",
        "--out",
        "z",
        "--grid",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ck = dir.path().join("bad.ckpt");
    fs::write(&ck, b"CDCKPT01garbage").unwrap();
    let out = costdet(&[
        "evaluate",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_tags_checkpoints_and_logs_slice_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("runs");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--alpha-lesion",
        "3",
        "--beta-lesion",
        "1",
        "--epochs",
        "2",
        "--lr",
        "0.05",
        "--seed",
        "1",
        "--seed",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(out.join("seed_1/a3b1/model.ckpt").is_file());
    assert!(out.join("seed_2/a3b1/model.ckpt").is_file());

    ok(&[
        "train",
        "--data",
        p(&data),
        "--use-slice-loss",
        "--alpha-slice",
        "3",
        "--epochs",
        "1",
        "--out",
        p(&out),
    ]);
    let log = fs::read_to_string(out.join("seed_0/a1b1_s3b1/train_log.csv")).unwrap();
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "slice_cls").unwrap();
    let row: Vec<&str> = log.lines().nth(1).unwrap().split(',').collect();
    assert!(row[col].parse::<f64>().unwrap() > 0.0);

    let again = dir.path().join("again");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--use-slice-loss",
        "--alpha-slice",
        "3",
        "--epochs",
        "1",
        "--out",
        p(&again),
    ]);
    assert_eq!(
        fs::read(out.join("seed_0/a1b1_s3b1/model.ckpt")).unwrap(),
        fs::read(again.join("seed_0/a1b1_s3b1/model.ckpt")).unwrap()
    );
}

#[test]
fn oracle_evaluates_to_zero_error_rates() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ck = dir.path().join("oracle.ckpt");
    ok(&["oracle", "--out", p(&ck)]);
    let out = dir.path().join("eval");
    let table = ok(&[
        "evaluate",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--split",
        "all",
        "--out",
        p(&out),
    ]);
    assert!(table.contains("| Lesion-level FNR | 0.0000 |"));
    assert!(table.contains("| Slice-level FNR | 0.0000 |"));
    assert!(table.contains("| Lesion-level FP | 0.0000 |"));
    assert!(out.join("metrics.csv").is_file());
}

#[test]
fn sweep_and_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let runs = dir.path().join("runs");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--epochs",
        "2",
        "--lr",
        "0.05",
        "--out",
        p(&runs),
    ]);
    let ck = runs.join("seed_0/a1b1/model.ckpt");

    let sw = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--grid",
        "0.1:0.9:0.1",
        "--out",
        p(&sw),
    ]);
    let rows = json(&sw.join("sweep.json"));
    let t: Vec<f64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["threshold"].as_f64().unwrap())
        .collect();
    assert_eq!(t.len(), 9);
    assert!(t.windows(2).all(|w| w[1] > w[0]));

    let cmp = dir.path().join("cmp");
    ok(&[
        "compare",
        "--data",
        p(&data),
        "--baseline",
        p(&ck),
        "--cost",
        p(&ck),
        "--out",
        p(&cmp),
    ]);
    let r = json(&cmp.join("compare.json"));
    for k in [
        "delta_fp_per_slice",
        "delta_lesion_fnr",
        "delta_slice_fpr",
        "delta_slice_fnr",
    ] {
        assert!(
            r[k].is_null() || r[k].as_f64() == Some(0.0),
            "{k} = {}",
            r[k]
        );
    }
    assert!(fs::read_to_string(cmp.join("compare.svg"))
        .unwrap()
        .starts_with("<svg"));
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{
  "data": {"kind": "generate", "n_slices": 30},
  "train": {"epochs": 1, "lr": 0.05, "validate": false},
  "seeds": [1, 2]
}"#,
    )
    .unwrap();
    let out = dir.path().join("exp");
    ok(&[
        "experiment",
        "--config",
        p(&cfg),
        "--seed",
        "4",
        "--out",
        p(&out),
    ]);
    for t in ["lesion", "slice", "joint"] {
        assert!(out.join(format!("table_{t}.md")).is_file());
    }
    assert!(out.join("seed_4/compare_a3b1.svg").is_file());
    assert!(!out.join("seed_1").exists());
    let report = ok(&["report", "--dir", p(&out)]);
    assert!(report.contains("Lesion-level FNR"));
    assert!(out.join("report.md").is_file());

    let out = costdet(&[
        "experiment",
        "--config",
        p(&dir.path().join("nope.json")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
