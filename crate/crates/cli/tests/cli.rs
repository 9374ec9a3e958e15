use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn wslln(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wslln"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wslln(args);
    assert!(
        out.status.success(),
        "wslln {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_corpus(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["synth", "--out", s(dir), "--num-train", "24", "--num-test", "8"];
    args.extend_from_slice(extra);
    ok(&args);
    (dir.join("train.json"), dir.join("test.json"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_defaults_write_full_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["synth", "--out", s(dir.path())]);
    assert!(stdout.contains("500 train + 100 test videos"), "{stdout}");
    let train = read_json(&dir.path().join("train.json"));
    let test = read_json(&dir.path().join("test.json"));
    assert_eq!(train["videos"].as_array().unwrap().len(), 500);
    assert_eq!(test["videos"].as_array().unwrap().len(), 100);
    assert_eq!(fs::read_dir(dir.path().join("features")).unwrap().count(), 600);
}

#[test]
fn synth_into_unwritable_location_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = wslln(&["synth", "--out", s(&blocker.join("sub")), "--num-train", "2", "--num-test", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn same_seed_gives_identical_corpora() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_corpus(a.path(), &["--seed", "7"]);
    small_corpus(b.path(), &["--seed", "7"]);
    for name in ["train.json", "test.json", "features/v00003.wslf", "features/v00030.wslf"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"seed": 4, "num_train": 3, "num_test": 2, "beta": 0.5}"#).unwrap();
    let out = dir.path().join("corpus");
    ok(&["synth", "--config", s(&config), "--seed", "9", "--beta", "0.6", "--out", s(&out)]);
    let effective = read_json(&out.join("config.json"));
    assert_eq!(effective["seed"], 9);
    assert_eq!(effective["beta"], 0.6);
    assert_eq!(effective["num_train"], 3);
    assert_eq!(effective["num_test"], 2);
    assert_eq!(effective["frames"], 50);
    assert_eq!(effective["lambda"], 0.3);
}

#[test]
fn train_eval_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train", "--train", s(&train), "--eval", s(&test), "--out", s(&run), "--d", "8", "--h", "8",
        "--epochs", "2", "--lambda", "0.2",
    ]);
    assert!(stdout.contains("epoch   1"), "{stdout}");
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        assert_eq!(line["epoch"], i);
        assert!(line["mean_Lv"].is_f64() && line["mean_Lr"].is_f64());
        assert!(line["metrics"]["miou"].is_f64());
    }
    assert_eq!(read_json(&run.join("config.json"))["lambda"], 0.2);

    let ckpt = run.join("model.wslc");
    let table = ok(&[
        "eval", "--checkpoint", s(&ckpt), "--manifest", s(&test), "--ks", "1,5", "--ths", "0.1,0.3,0.5,0.7",
        "--out", s(&run),
    ]);
    assert!(table.starts_with("R@k"), "{table}");
    let report = read_json(&run.join("report.json"));
    let cells = report["recalls"].as_array().unwrap();
    assert_eq!(cells.len(), 8);
    let recall = |k: u64, th: f64| {
        cells
            .iter()
            .find(|c| c["k"] == k && c["iou"] == th)
            .unwrap()["recall"]
            .as_f64()
            .unwrap()
    };
    for th in [0.1, 0.3, 0.5, 0.7] {
        assert!(recall(5, th) >= recall(1, th));
    }
    for w in [0.1, 0.3, 0.5, 0.7].windows(2) {
        assert!(recall(1, w[0]) >= recall(1, w[1]));
    }

    let features = dir.path().join("features/v00024.wslf");
    let manifest = read_json(&test);
    let query: Vec<String> = manifest["videos"][0]["queries"][0]["feature"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.to_string())
        .collect();
    let ranked = ok(&["predict", "--checkpoint", s(&ckpt), "--features", s(&features), "--query", &query.join(",")]);
    let rows: Vec<Vec<f64>> = ranked
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 15);
    assert!(rows.windows(2).all(|w| w[0][3] >= w[1][3]));
    assert!(rows.iter().all(|r| r[1] < r[2] && r[1] >= 0.0 && r[2] <= 50.0));
}

#[test]
fn ablate_requires_mode_and_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = small_corpus(dir.path(), &[]);
    let out = wslln(&["ablate", "--train", s(&train), "--out", s(&dir.path().join("a"))]);
    assert!(!out.status.success());
    let run = dir.path().join("b");
    let stdout = ok(&[
        "ablate", "--mode", "detect-only", "--train", s(&train), "--out", s(&run), "--d", "4", "--h", "4",
        "--epochs", "1",
    ]);
    assert!(stdout.contains("detect-only"));
    assert!(run.join("model.wslc").is_file());
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = small_corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    ok(&["train", "--train", s(&train), "--out", s(&run), "--d", "4", "--h", "4", "--epochs", "1"]);
    let other = dir.path().join("other");
    let cfg = other.join("cfg.json");
    fs::create_dir_all(&other).unwrap();
    fs::write(&cfg, r#"{"visual_dim": 5, "num_train": 2, "num_test": 2}"#).unwrap();
    ok(&["synth", "--config", s(&cfg), "--out", s(&other)]);
    let out = wslln(&[
        "eval", "--checkpoint", s(&run.join("model.wslc")), "--manifest", s(&other.join("test.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Dv="));
}

#[test]
fn non_finite_training_aborts_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = small_corpus(dir.path(), &[]);
    // Poison the first frame of one video; the failing pair must be named.
    let path = dir.path().join("features/v00002.wslf");
    let mut bytes = fs::read(&path).unwrap();
    bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let out = wslln(&["train", "--train", s(&train), "--out", s(&dir.path().join("run")), "--d", "4", "--h", "4"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("v00002"), "{stderr}");
}

#[test]
fn predicted_top_span_recovers_noise_free_plant_after_training() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", s(dir.path()), "--beta", "1", "--num-train", "200", "--num-test", "20"]);
    let run = dir.path().join("run");
    ok(&[
        "train", "--train", s(&dir.path().join("train.json")), "--out", s(&run), "--d", "32", "--h", "32",
        "--lr", "0.001", "--epochs", "30",
    ]);
    let test = read_json(&dir.path().join("test.json"));
    let videos = test["videos"].as_array().unwrap();
    let mut hits = 0;
    for video in videos {
        let query = video["queries"][0]["feature"].to_string();
        let query_file = dir.path().join("query.json");
        fs::write(&query_file, query).unwrap();
        let features = dir.path().join(video["features"].as_str().unwrap());
        let ranked = ok(&[
            "predict", "--checkpoint", s(&run.join("model.wslc")), "--features", s(&features), "--query",
            s(&query_file),
        ]);
        let top: Vec<f64> = ranked.lines().nth(1).unwrap().split_whitespace().map(|x| x.parse().unwrap()).collect();
        let gt = video["queries"][0]["gt"].as_array().unwrap();
        if (top[1], top[2]) == (gt[0].as_f64().unwrap(), gt[1].as_f64().unwrap()) {
            hits += 1;
        }
    }
    // Exact recovery by chance happens for 1 in 15 videos.
    assert!(4 * hits >= videos.len(), "top span equals the planted span for {hits}/{} videos", videos.len());
}
