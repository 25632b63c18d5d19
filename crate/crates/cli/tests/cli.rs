use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const TINY: &str = r#"
profile = "synthetic"

[synth]
num_train = 12
num_val = 4
num_test = 4
n_sentences_range = [2, 3]
clip_len_range = [24, 40]
feature_dim = 8
vocab_size = 60
noise_sigma = 1.0
seed = 3
word_dim = 8
num_topics = 10
words_per_topic = 3
coverage_range = [0.6, 0.9]
signal_gain = 1.4

[model]
d_model = 8
heads = 2
ffn_dim = 16
video_layers = 1
query_layers = 1
decoder_layers = 2
gru_hidden = 8
dropout = 0.1
feature_dim = 8
word_dim = 8
init_seed = 0

[train]
mode = "ws"
learning_rate = 1e-3
batch_size = 4
epochs = 1
seed = 0
labeled_fraction = 0.5
grad_clip = 1.0

[train.compose]
t = 24
rrs_stride_range = [1.0, 3.0]
rbs_fraction = 0.1

[train.weights]
screg = 2.0
oga = 1.0
csc = 10.0
cb = 1.0
ar = 1.0
pa = 1.0
beta = 0.5

[concepts]
top_k = 10

[eval]
thresholds = [0.3, 0.5, 0.7]
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_siamgtr"));
    cmd.env_remove("SIAMGTR_DATA_ROOT").env("RUST_LOG", "warn");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn sha(path: &Path) -> String {
    Sha256::digest(fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

fn tree_digest(root: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), sha(&p)));
            }
        }
    }
    out.sort();
    out
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        let f = Self { dir };
        run(bin().args(["synth-gen", "--config"]).arg(f.config()).arg("--out").arg(f.data()));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("tiny.toml")
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn train(&self, mode: &str, out: &str) -> Output {
        bin()
            .arg("train")
            .arg("--data")
            .arg(self.data())
            .arg("--config")
            .arg(self.config())
            .args(["--mode", mode, "--out"])
            .arg(self.path(out))
            .output()
            .unwrap()
    }
}

fn strip_spans(annotations: &Path) {
    let mut json: Value = serde_json::from_str(&fs::read_to_string(annotations).unwrap()).unwrap();
    for video in json["videos"].as_array_mut().unwrap() {
        for s in video["sentences"].as_array_mut().unwrap() {
            s.as_object_mut().unwrap().remove("span_s");
        }
    }
    fs::write(annotations, serde_json::to_string(&json).unwrap()).unwrap();
}

#[test]
fn synth_gen_is_deterministic() {
    let a = Fixture::new();
    let b = Fixture::new();
    assert_eq!(tree_digest(&a.data()), tree_digest(&b.data()));
    assert!(a.data().join("manifest.json").exists());
}

#[test]
fn missing_config_key_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, TINY.replace("learning_rate = 1e-3\n", "")).unwrap();
    let out = bin().args(["synth-gen", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("d")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_subcommand_exits_with_usage_code() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn weak_training_needs_no_timestamps_but_full_does() {
    let f = Fixture::new();
    strip_spans(&f.data().join("train/annotations.json"));
    let ws = f.train("ws", "ws");
    assert!(ws.status.success(), "{}", String::from_utf8_lossy(&ws.stderr));
    assert!(f.path("ws/checkpoint.sgck").exists());
    let log = fs::read_to_string(f.path("ws/train_log.jsonl")).unwrap();
    assert!(log.lines().any(|l| l.contains("\"kind\":\"epoch\"")));

    let fs_run = f.train("fs", "fs");
    assert!(!fs_run.status.success());
    assert!(!String::from_utf8_lossy(&fs_run.stderr).trim().is_empty());
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let f = Fixture::new();
    assert!(f.train("ss", "a").status.success());
    assert!(f.train("ss", "b").status.success());
    assert_eq!(sha(&f.path("a/checkpoint.sgck")), sha(&f.path("b/checkpoint.sgck")));
}

#[test]
fn predictions_file_scores_like_the_checkpoint() {
    let f = Fixture::new();
    assert!(f.train("ws", "run").status.success());
    let ckpt = f.path("run/checkpoint.sgck");
    run(bin().arg("predict").arg("--data").arg(f.data()).arg("--ckpt").arg(&ckpt).arg("--out").arg(f.path("preds.json")));
    assert!(f.path("preds.json.manifest.json").exists());
    run(bin().arg("eval").arg("--data").arg(f.data()).arg("--ckpt").arg(&ckpt).arg("--out").arg(f.path("a.json")));
    run(bin()
        .arg("eval")
        .arg("--data")
        .arg(f.data())
        .arg("--predictions")
        .arg(f.path("preds.json"))
        .arg("--out")
        .arg(f.path("b.json")));
    let a: Value = serde_json::from_str(&fs::read_to_string(f.path("a.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&fs::read_to_string(f.path("b.json")).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decode_dump_has_a_row_per_layer_and_query() {
    let f = Fixture::new();
    assert!(f.train("ws", "run").status.success());
    run(bin()
        .args(["inspect", "decode", "--data"])
        .arg(f.data())
        .arg("--ckpt")
        .arg(f.path("run/checkpoint.sgck"))
        .arg("--out")
        .arg(f.path("dec.csv")));
    let csv = fs::read_to_string(f.path("dec.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let ann: Value = serde_json::from_str(&fs::read_to_string(f.data().join("test/annotations.json")).unwrap()).unwrap();
    let queries = ann["videos"][0]["sentences"].as_array().unwrap().len();
    // query 0 is the whole paragraph
    assert_eq!(rows.len(), 2 * (queries + 1));
    let first = ann["videos"][0]["id"].as_str().unwrap();
    assert!(rows.iter().all(|r| r.starts_with(first)));
}

#[test]
fn compose_dump_reports_interval_and_provenance() {
    let f = Fixture::new();
    run(bin()
        .args(["inspect", "compose", "--data"])
        .arg(f.data())
        .arg("--config")
        .arg(f.config())
        .arg("--out")
        .arg(f.path("comp.json")));
    let json: Value = serde_json::from_str(&fs::read_to_string(f.path("comp.json")).unwrap()).unwrap();
    assert_eq!(json["t"], 24);
    let iv = &json["pseudo_interval"];
    let (start, end) = (iv["start"].as_f64().unwrap(), iv["end"].as_f64().unwrap());
    assert!(0.0 <= start && start < end && end <= 1.0);
    assert!(json["provenance"]["fg_video_id"].as_str().is_some_and(|id| id.starts_with("train_")));
}

#[test]
fn data_root_comes_from_the_environment() {
    let f = Fixture::new();
    let out = bin()
        .env("SIAMGTR_DATA_ROOT", f.data())
        .args(["inspect", "compose", "--config"])
        .arg(f.config())
        .arg("--out")
        .arg(f.path("env.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = bin().args(["inspect", "compose", "--config"]).arg(f.config()).arg("--out").arg(f.path("x.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
