use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn depcae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depcae"))
        .args(args)
        .env_remove("DIV_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = depcae(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen",
        "--profile",
        "corridor-small",
        "--seed",
        "2",
        "--out",
        p(&data),
    ]);
    data
}

fn train_small(data: &Path, out: &Path) {
    ok(&[
        "train",
        "--dataset",
        p(data),
        "--out",
        p(out),
        "--channels",
        "2,4,4",
        "--epochs",
        "2",
        "--batch-size",
        "2",
        "--seed",
        "5",
    ]);
}

#[test]
fn gen_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "gen",
            "--profile",
            "corridor-small",
            "--seed",
            "7",
            "--out",
            p(d),
        ]);
    }
    assert_eq!(tree(&a), tree(&b));
    let v = ok(&["validate", "--dataset", p(&a)]);
    let line = String::from_utf8(v.stderr).unwrap();
    let event: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(event["event"], "valid");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(
        depcae(&["gen", "--profile", "corridor"]).status.code(),
        Some(2)
    );
    assert_eq!(
        depcae(&["threshold", "--method", "median"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let out = depcae(&["gen", "--profile", "nope", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_refuses_an_anomalous_train_window() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let path = data.join("manifest.json");
    let mut m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let train_clips: Vec<String> = m["clips"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["split"] == "train")
        .map(|c| c["id"].as_str().unwrap().to_string())
        .collect();
    let w = m["windows"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|w| train_clips.iter().any(|c| w["clip"] == c.as_str()))
        .unwrap();
    w["label"] = "anomalous".into();
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();

    let run = dir.path().join("run");
    let out = depcae(&[
        "train",
        "--dataset",
        p(&data),
        "--out",
        p(&run),
        "--epochs",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("anomalous"));
    assert!(!run.join("model.ckpt").exists());
}

#[test]
fn pipeline_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let (run, again) = (dir.path().join("run"), dir.path().join("again"));
    train_small(&data, &run);
    train_small(&data, &again);
    // same seed and config, same losses to the last bit
    assert_eq!(
        fs::read(run.join("train_log.csv")).unwrap(),
        fs::read(again.join("train_log.csv")).unwrap()
    );
    assert!(run.join("config.json").exists());

    let ckpt = run.join("model.ckpt");
    let (train_scores, test_scores) = (run.join("train.json"), run.join("test.json"));
    ok(&[
        "score",
        "--checkpoint",
        p(&ckpt),
        "--split",
        "train",
        "--out",
        p(&train_scores),
    ]);
    ok(&[
        "score",
        "--checkpoint",
        p(&ckpt),
        "--split",
        "test",
        "--out",
        p(&test_scores),
    ]);

    for (method, field) in [
        ("iqr", "iqr-proxy-max-f1"),
        ("annotated", "annotated-proxy-max-f1"),
    ] {
        let thr = run.join(format!("{method}.json"));
        ok(&[
            "threshold",
            "--scores",
            p(&train_scores),
            "--method",
            method,
            "--out",
            p(&thr),
        ]);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&thr).unwrap()).unwrap();
        assert_eq!(report["method"], field);
    }
    // thresholds come from training scores only
    let bad = depcae(&[
        "threshold",
        "--scores",
        p(&test_scores),
        "--method",
        "iqr",
        "--out",
        p(&run.join("x.json")),
    ]);
    assert_eq!(bad.status.code(), Some(2));

    let thr = run.join("iqr.json");
    ok(&[
        "eval",
        "--scores",
        p(&test_scores),
        "--threshold",
        p(&thr),
        "--stratify-by",
        "group",
        "--out",
        p(&run),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert!(report["metrics"]["auroc"].is_number());
    assert!(report["stratified"]["rows"].is_array());

    // a threshold from another config is refused unless forced
    let mut other: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&thr).unwrap()).unwrap();
    other["config_hash"] = "0000".into();
    let other_path = run.join("other.json");
    fs::write(&other_path, other.to_string()).unwrap();
    let args = [
        "eval",
        "--scores",
        p(&test_scores),
        "--threshold",
        p(&other_path),
        "--out",
        p(&run),
    ];
    assert_eq!(depcae(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn agreement_reports_all_three_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    fs::write(&a, "1\n1\n0\n0\n").unwrap();
    fs::write(&b, "1\n0\n1\n0\n").unwrap();
    let out = ok(&["agreement", "--a", p(&a), "--b", p(&b)]);
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["percent_agreement"], 0.5);
    assert_eq!(r["cohen_kappa"], 0.0);
    assert!(r["krippendorff_alpha"].is_number());
}
