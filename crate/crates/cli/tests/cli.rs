use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"format_version = 1
label = "tiny"
out_dir = "runs/tiny"
dataset_dir = "data/tiny"

[generator]
classes = 6
per_class = 20
test_per_class = 10
visual_dim = 6
audio_dim = 6

[noise]
label_mode = "symmetric"
label_rate = 0.4
correspondence_rate = 0.2

[train]
epochs = 3
warmup_epochs = 1
batch_size = 16
knn_k = 5
"#;

struct Ws {
    dir: TempDir,
}

impl Ws {
    fn new() -> Ws {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
        Ws { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ntml"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    rd.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_audited_dataset() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    let audit = json(&ws.path("data/tiny/audit.json"));
    assert_eq!(audit["train"]["label_flips"], 48);
    assert_eq!(audit["train"]["achieved_label_rate"], 0.4);
    assert_eq!(audit["train"]["mismatched"], 24);
    assert_eq!(audit["train"]["donor_class_violations"], 0);
    assert_eq!(audit["format_version"], 1);
    assert_eq!(audit["config_hash"].as_str().unwrap().len(), 16);
    assert_eq!(ws.read("data/tiny/config.toml"), CONFIG);
    let manifest = json(&ws.path("data/tiny/manifest.json"));
    let names: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"train.ntd") && names.contains(&"test.ntd"));
}

#[test]
fn generate_is_deterministic() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml", "--out", "a"]);
    ws.ok(&["generate", "--config", "exp.toml", "--out", "b"]);
    for f in ["train.ntd", "test.ntd", "audit.json"] {
        assert_eq!(
            fs::read(ws.path("a").join(f)).unwrap(),
            fs::read(ws.path("b").join(f)).unwrap(),
            "{f}"
        );
    }
    ws.ok(&["generate", "--config", "exp.toml", "--out", "c", "--seed", "99"]);
    assert_ne!(
        fs::read(ws.path("a/train.ntd")).unwrap(),
        fs::read(ws.path("c/train.ntd")).unwrap()
    );
}

#[test]
fn correspondence_grid_gives_four_datasets() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml", "--sweep", "correspondence-rate"]);
    for (rate, mismatched) in [("0.1", 12), ("0.2", 24), ("0.3", 36), ("0.4", 48)] {
        let audit = json(&ws.path(&format!("data/tiny/correspondence-rate-{rate}/audit.json")));
        assert_eq!(audit["train"]["mismatched"], mismatched, "rate {rate}");
    }
}

#[test]
fn train_writes_reports_and_checkpoint() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    ws.ok(&["train", "--config", "exp.toml"]);
    let epochs = csv_rows(&ws.read("runs/tiny/epochs.csv"));
    assert_eq!(epochs.len(), 1 + 3);
    assert_eq!(column(&epochs, "epoch"), ["1", "2", "3"]);
    let samples = csv_rows(&ws.read("runs/tiny/samples.csv"));
    assert_eq!(samples.len(), 1 + 120);
    for flag in column(&samples, "correspondence_clean") {
        assert!(flag == "true" || flag == "false");
    }
    assert_eq!(ws.read("runs/tiny/epochs.jsonl").lines().count(), 3);
    assert!(ws.path("runs/tiny/model.ckpt").is_file());
    assert_eq!(ws.read("runs/tiny/config.toml"), CONFIG);

    // every table carries the run metadata and is documented
    let info = json(&ws.path("runs/tiny/run.json"));
    let hash = info["config_hash"].as_str().unwrap();
    let schema = ws.read("runs/tiny/schema.txt");
    for table in [&epochs, &samples] {
        assert!(column(table, "config_hash").iter().all(|h| h == hash));
        assert!(column(table, "format_version").iter().all(|v| v == "1"));
        for name in &table[0] {
            assert!(schema.contains(&format!("{name}:")), "{name} undocumented");
        }
    }
}

#[test]
fn train_without_dataset_fails_at_runtime() {
    let ws = Ws::new();
    let out = ws.run(&["train", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset"));
}

#[test]
fn invalid_config_fails_at_runtime() {
    let ws = Ws::new();
    fs::write(ws.path("bad.toml"), "[noise]\nlabel_rate = 1.5\n").unwrap();
    let out = ws.run(&["generate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("label_rate"));
    fs::write(ws.path("typo.toml"), "[train]\nepoch = 3\n").unwrap();
    assert_eq!(ws.run(&["generate", "--config", "typo.toml"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let ws = Ws::new();
    for args in [
        &["train"][..],
        &["train", "--config", "exp.toml", "--ablate", "--variant", "full"],
        &["train", "--config", "exp.toml", "--variant", "everything"],
        &["generate", "--config", "exp.toml", "--sweep", "gamma"],
        &["frobnicate"],
    ] {
        assert_eq!(ws.run(args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gamma_sweep_covers_zero_to_one() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    ws.ok(&["train", "--config", "exp.toml", "--sweep", "gamma", "--out", "sweep"]);
    let rows = csv_rows(&ws.read("sweep/summary.csv"));
    let values: Vec<f64> = column(&rows, "value").iter().map(|v| v.parse().unwrap()).collect();
    let want: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(values, want);
    assert!(column(&rows, "sweep").iter().all(|s| s == "gamma"));
    assert!(ws.path("sweep/gamma-0.5/epochs.csv").is_file());
}

#[test]
fn ablation_emits_four_variants() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    ws.ok(&["train", "--config", "exp.toml", "--ablate", "--out", "abl"]);
    let rows = csv_rows(&ws.read("abl/summary.csv"));
    assert_eq!(column(&rows, "method"), ["none", "ins-only", "cat-only", "full"]);
    let hashes = column(&rows, "config_hash");
    assert_eq!(
        hashes.iter().collect::<std::collections::BTreeSet<_>>().len(),
        4,
        "variants must hash differently"
    );
}

#[test]
fn label_rate_sweep_trains_on_each_generated_dataset() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml", "--sweep", "label-rate", "--values", "0.2,0.6"]);
    ws.ok(&[
        "train", "--config", "exp.toml", "--sweep", "label-rate", "--values", "0.2,0.6", "--variant",
        "baseline", "--out", "lr",
    ]);
    let rows = csv_rows(&ws.read("lr/summary.csv"));
    assert_eq!(column(&rows, "observed_label_acc"), ["0.8", "0.4"]);
    assert_eq!(column(&rows, "corrected_label_acc"), ["", ""]);
}

fn grid(ws: &Ws) -> Vec<Vec<String>> {
    csv_rows(&ws.read("rep/grid.csv"))
}

#[test]
fn report_of_single_run_is_identity() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    ws.ok(&["train", "--config", "exp.toml"]);
    ws.ok(&["report", "runs", "--out", "rep"]);
    let g = grid(&ws);
    assert_eq!(g.len(), 2);
    let info = json(&ws.path("runs/tiny/run.json"));
    let acc = info["final_test_top1"].as_f64().unwrap();
    assert_eq!(column(&g, "full_mean")[0].parse::<f64>().unwrap(), acc);
    assert_eq!(column(&g, "full_spread"), ["0"]);
    assert_eq!(column(&g, "full_runs"), ["1"]);
    assert_eq!(column(&g, "label_rate"), ["0.4"]);
    assert_eq!(column(&g, "correspondence_rate"), ["0.2"]);

    let series = csv_rows(&ws.read("rep/series.csv"));
    assert_eq!(series.len(), 1 + 3);
    let weights = csv_rows(&ws.read("rep/weights.csv"));
    for modality in ["visual", "audio"] {
        let (mut clean, mut mism) = (0, 0);
        for r in &weights[1..] {
            if r[3] == modality {
                clean += r[6].parse::<usize>().unwrap();
                mism += r[7].parse::<usize>().unwrap();
            }
        }
        assert_eq!((clean, mism), (96, 24), "{modality}");
    }
}

#[test]
fn report_merges_seeds_into_mean_and_spread() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    ws.ok(&["train", "--config", "exp.toml", "--seed", "1", "--out", "runs/s1"]);
    ws.ok(&["train", "--config", "exp.toml", "--seed", "2", "--out", "runs/s2"]);
    ws.ok(&["report", "runs", "--out", "rep"]);
    let accs: Vec<f64> = ["runs/s1", "runs/s2"]
        .iter()
        .map(|d| json(&ws.path(d).join("run.json"))["final_test_top1"].as_f64().unwrap())
        .collect();
    let mean = (accs[0] + accs[1]) / 2.0;
    let spread = ((accs[0] - mean).powi(2) + (accs[1] - mean).powi(2)).sqrt();
    let g = grid(&ws);
    assert_eq!(g.len(), 2);
    assert_eq!(column(&g, "full_runs"), ["2"]);
    let got_mean: f64 = column(&g, "full_mean")[0].parse().unwrap();
    let got_spread: f64 = column(&g, "full_spread")[0].parse().unwrap();
    assert!((got_mean - mean).abs() < 1e-12);
    assert!((got_spread - spread).abs() < 1e-12);
}

#[test]
fn report_refuses_other_format_versions() {
    let ws = Ws::new();
    ws.ok(&["generate", "--config", "exp.toml"]);
    ws.ok(&["train", "--config", "exp.toml", "--out", "runs/a"]);
    ws.ok(&["train", "--config", "exp.toml", "--out", "runs/b", "--seed", "3"]);

    let info = ws.read("runs/b/run.json").replace("\"format_version\": 1", "\"format_version\": 2");
    fs::write(ws.path("runs/b/run.json"), info).unwrap();
    let out = ws.run(&["report", "runs", "--out", "rep"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    // a table rewritten by another version is caught as well
    ws.ok(&["train", "--config", "exp.toml", "--out", "runs/b", "--seed", "3"]);
    let csv = ws.read("runs/b/epochs.csv");
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    lines[2] = lines[2].replacen("1,", "2,", 1);
    fs::write(ws.path("runs/b/epochs.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(ws.run(&["report", "runs", "--out", "rep"]).status.code(), Some(2));
}

#[test]
fn report_without_runs_fails() {
    let ws = Ws::new();
    fs::create_dir(ws.path("empty")).unwrap();
    assert_eq!(ws.run(&["report", "empty", "--out", "rep"]).status.code(), Some(2));
}
