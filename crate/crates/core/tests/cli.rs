use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn socrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socrel")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = socrel(args);
    assert!(
        out.status.success(),
        "socrel {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn json_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SMALL: &str = "seed = 2\n[train]\nhidden = 8\niterations = 12\n[synth]\nsequences_per_relation = 6\nusers = 4\ndays_per_user = 3\n[split]\ncandidates = 100\nfolds = 2\n";

#[test]
fn pipeline_round_trip() {
    let w = Workspace::new(SMALL);
    let cfg = w.arg("run.toml");
    ok(&["synth", "--config", &cfg, "--out", &w.arg("raw.bin"), "--raw-dir", &w.arg("raw")]);
    let text = ok(&[
        "ingest",
        "--config",
        &cfg,
        "--labels",
        &w.arg("raw/labels.csv"),
        "--frames-dir",
        &w.arg("raw/frames"),
        "--out",
        &w.arg("data.bin"),
    ]);
    assert!(text.contains("explained variance"));
    assert!(w.path("data.bin.compressors.json").exists());
    ok(&["split", "--config", &cfg, "--data", &w.arg("data.bin"), "--out", &w.arg("splits.json")]);
    ok(&[
        "augment",
        "--config",
        &cfg,
        "--data",
        &w.arg("data.bin"),
        "--splits",
        &w.arg("splits.json"),
        "--out",
        &w.arg("aug.bin"),
    ]);
    ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &w.arg("aug.bin"),
        "--splits",
        &w.arg("splits.json"),
        "--fold",
        "1",
        "--out",
        &w.arg("model"),
    ]);
    for f in ["model.bin", "history.jsonl", "config.toml"] {
        assert!(w.path("model").join(f).exists(), "missing {f}");
    }
    let history = json_lines(&w.path("model/history.jsonl"));
    assert_eq!(history.len(), 13);
    let best = history[0]["best_val_macro_f1"].as_f64().unwrap();
    assert!(history[0]["provenance"]["config_hash"].as_str().unwrap().len() == 64);

    ok(&[
        "eval",
        "--model",
        &w.arg("model/model.bin"),
        "--data",
        &w.arg("aug.bin"),
        "--splits",
        &w.arg("splits.json"),
        "--fold",
        "1",
        "--out",
        &w.arg("eval.json"),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.path("eval.json")).unwrap()).unwrap();
    let relation = report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["mode"] == "relation-direct")
        .unwrap();
    assert_eq!(relation["macro_f1"].as_f64().unwrap(), best);

    ok(&["predict", "--model", &w.arg("model/model.bin"), "--data", &w.arg("data.bin"), "--out", &w.arg("p.jsonl")]);
    let preds = json_lines(&w.path("p.jsonl"));
    assert_eq!(preds[0]["architecture"], "MT-TD");
    let first = &preds[1];
    for key in ["relation_probs", "domain_probs", "inferred_domain_probs"] {
        let sum: f64 = first[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{key} sums to {sum}");
    }

    ok(&["export", "--data", &w.arg("data.bin"), "--out", &w.arg("data.jsonl")]);
    let file = std::fs::File::open(w.path("data.jsonl")).unwrap();
    let back = socrel::dataset::Dataset::read_text(std::io::BufReader::new(file)).unwrap();
    assert_eq!(back, socrel::dataset::Dataset::read(w.path("data.bin")).unwrap());
}

#[test]
fn benchmark_writes_table() {
    let w = Workspace::new(SMALL);
    let cfg = w.arg("run.toml");
    ok(&["synth", "--config", &cfg, "--out", &w.arg("data.bin")]);
    ok(&["split", "--config", &cfg, "--data", &w.arg("data.bin"), "--out", &w.arg("splits.json")]);
    ok(&[
        "benchmark",
        "--config",
        &cfg,
        "--iterations",
        "2",
        "--hidden",
        "4",
        "--architectures",
        "ST-REL,MT-TD",
        "--subsets",
        "face,ctx",
        "--data",
        &w.arg("data.bin"),
        "--splits",
        &w.arg("splits.json"),
        "--out",
        &w.arg("table.txt"),
        "--json",
        &w.arg("table.json"),
    ]);
    let table = std::fs::read_to_string(w.path("table.txt")).unwrap();
    for label in ["REL-ST", "REL-MT-TD", "DOM-MT-TD", "DOM-INF-MT-TD", "REL-FACE", "DOM-CTX"] {
        assert!(table.lines().any(|l| l.starts_with(label)), "missing {label}:\n{table}");
    }
    assert!(table.starts_with("# socrel"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.path("table.json")).unwrap()).unwrap();
    assert!(json["table"]["rows"].as_array().unwrap().len() >= 6);
}

#[test]
fn config_hash_tracks_flags() {
    let w = Workspace::new(SMALL);
    let cfg = w.arg("run.toml");
    ok(&["synth", "--config", &cfg, "--out", &w.arg("data.bin")]);
    ok(&["split", "--config", &cfg, "--data", &w.arg("data.bin"), "--out", &w.arg("splits.json")]);
    let train = |out: &str, extra: &[&str]| {
        let mut args: Vec<String> = vec![
            "train".into(),
            "--config".into(),
            cfg.clone(),
            "--data".into(),
            w.arg("data.bin"),
            "--splits".into(),
            w.arg("splits.json"),
            "--out".into(),
            w.arg(out),
            "--iterations".into(),
            "2".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
        json_lines(&w.path(out).join("history.jsonl"))[0]["provenance"].clone()
    };
    let a = train("a", &[]);
    let b = train("b", &["--dropout", "0.1"]);
    let c = train("c", &[]);
    let d = train("d", &["--seed", "5"]);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_eq!(a, c);
    assert_eq!(d["seed"], 5);
    assert_ne!(a["config_hash"], d["config_hash"]);
}

#[test]
fn invalid_input_exits_with_two() {
    let w = Workspace::new("[train]\nhiden = 3\n");
    let out = socrel(&["synth", "--config", &w.arg("run.toml"), "--out", &w.arg("d.bin")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden"));

    let w = Workspace::new(SMALL);
    let cfg = w.arg("run.toml");
    ok(&["synth", "--config", &cfg, "--out", &w.arg("data.bin")]);
    ok(&["split", "--config", &cfg, "--data", &w.arg("data.bin"), "--out", &w.arg("splits.json")]);
    let args = |extra: &[&str]| {
        let mut v: Vec<String> = ["train", "--config", &cfg, "--data", &w.arg("data.bin"), "--splits", &w.arg("splits.json"), "--out", &w.arg("m")]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_socrel")).args(args(extra)).output().unwrap()
    };
    assert_eq!(run(&["--hidden", "0"]).status.code(), Some(2));
    assert_eq!(run(&["--fold", "9"]).status.code(), Some(2));
    assert_eq!(run(&["--arch", "XL"]).status.code(), Some(2));

    let missing = socrel(&["export", "--data", &w.arg("nope.bin"), "--out", &w.arg("x.jsonl")]);
    assert_eq!(missing.status.code(), Some(1));
}
