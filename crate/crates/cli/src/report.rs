//! `ntml report`: merges finished runs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ntml_core::metrics::Histogram;
use ntml_core::report::{config_hash, read_epochs_csv, read_samples_csv, schema_text, FORMAT_VERSION};
use ntml_core::trainer::{EpochRecord, SampleDiagnostic};
use serde::Serialize;
use walkdir::WalkDir;

use crate::output::{write_text, RunInfo, RUN_FILE};

const METHOD_ORDER: [&str; 5] = ["baseline", "none", "ins-only", "cat-only", "full"];

pub const GRID_COLUMNS: &[(&str, &str)] = &[
    ("format_version", "output format version"),
    ("config_hash", "hash over the config hashes of the merged runs"),
    ("label_mode", "label noise mode"),
    ("label_rate", "label noise rate"),
    ("correspondence_rate", "correspondence noise rate"),
    ("setting", "swept training parameter, e.g. gamma=0.5; empty otherwise"),
    ("<method>_mean", "mean final clean test top-1 over runs of that method"),
    ("<method>_spread", "sample standard deviation of the same, 0 for a single run"),
    ("<method>_runs", "number of runs merged"),
];

pub const SERIES_COLUMNS: &[(&str, &str)] = &[
    ("format_version", "output format version"),
    ("config_hash", "hash of the run configuration"),
    ("run", "run directory"),
    ("method", "baseline or contrastive variant"),
    ("seed", "training seed"),
    ("epoch", "epochs completed"),
    ("phase", "warmup, main or baseline"),
    ("train_top1", "accuracy on the noisy training labels"),
    ("test_top1", "clean test top-1 accuracy"),
    ("test_top5", "clean test top-5 accuracy"),
    ("corrected_label_acc", "accuracy of KNN-corrected training labels"),
];

pub const WEIGHT_COLUMNS: &[(&str, &str)] = &[
    ("format_version", "output format version"),
    ("config_hash", "hash of the run configuration"),
    ("run", "run directory"),
    ("modality", "visual or audio weight"),
    ("bin_lo", "lower bin edge"),
    ("bin_hi", "upper bin edge"),
    ("clean", "correctly paired samples in the bin"),
    ("mismatched", "mismatched samples in the bin"),
];

struct Run {
    dir: PathBuf,
    info: RunInfo,
    records: Vec<EpochRecord>,
    samples: Vec<SampleDiagnostic>,
}

fn find_runs(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for root in roots {
        if !root.is_dir() {
            bail!("{} is not a directory", root.display());
        }
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry?;
            if entry.file_type().is_file() && entry.file_name() == RUN_FILE {
                dirs.push(entry.path().parent().expect("file has a parent").to_path_buf());
            }
        }
    }
    dirs.sort();
    dirs.dedup();
    if dirs.is_empty() {
        bail!("no runs found (looked for {RUN_FILE})");
    }
    Ok(dirs)
}

fn load_run(dir: &Path) -> Result<Run> {
    let path = dir.join(RUN_FILE);
    let info: RunInfo = serde_json::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if info.format_version != FORMAT_VERSION {
        bail!(
            "{} has format version {}, this build reads only version {FORMAT_VERSION}; refusing to mix versions",
            dir.display(),
            info.format_version
        );
    }
    let (meta, records) = read_epochs_csv(File::open(dir.join("epochs.csv"))?)
        .with_context(|| format!("reading {}", dir.join("epochs.csv").display()))?;
    let (smeta, samples) = read_samples_csv(File::open(dir.join("samples.csv"))?)
        .with_context(|| format!("reading {}", dir.join("samples.csv").display()))?;
    if meta.config_hash != info.config_hash || smeta.config_hash != info.config_hash {
        bail!("{}: tables and {RUN_FILE} disagree on the config hash", dir.display());
    }
    Ok(Run {
        dir: dir.to_path_buf(),
        info,
        records,
        samples,
    })
}

/// Mean and sample standard deviation.
fn mean_spread(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GridKey {
    label_mode: String,
    /// Rates as their decimal text so the key is totally ordered.
    label_rate: String,
    correspondence_rate: String,
    setting: String,
}

fn grid_key(info: &RunInfo) -> GridKey {
    let setting = match &info.sweep {
        Some(s) if s.param == "gamma" => format!("gamma={}", s.value),
        _ => String::new(),
    };
    GridKey {
        label_mode: serde_json::to_value(info.label_mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        label_rate: info.label_rate.to_string(),
        correspondence_rate: info.correspondence_rate.to_string(),
        setting,
    }
}

/// Final top-1 and config hash of each run, by method.
type Cell<'a> = BTreeMap<&'a str, Vec<(f64, &'a str)>>;

fn write_grid(runs: &[Run], out: &Path) -> Result<()> {
    let mut cells: BTreeMap<GridKey, Cell> = BTreeMap::new();
    for r in runs {
        cells
            .entry(grid_key(&r.info))
            .or_default()
            .entry(r.info.method.as_str())
            .or_default()
            .push((r.info.final_test_top1, &r.info.config_hash));
    }
    let mut methods: Vec<&str> = METHOD_ORDER
        .into_iter()
        .filter(|m| runs.iter().any(|r| r.info.method == *m))
        .collect();
    for r in runs {
        if !methods.contains(&r.info.method.as_str()) {
            methods.push(&r.info.method);
        }
    }
    let mut w = csv::Writer::from_path(out.join("grid.csv"))?;
    let mut header: Vec<String> = GRID_COLUMNS[..6].iter().map(|c| c.0.to_string()).collect();
    for m in &methods {
        header.extend([format!("{m}_mean"), format!("{m}_spread"), format!("{m}_runs")]);
    }
    w.write_record(&header)?;
    for (key, by_method) in &cells {
        let mut hashes: Vec<&str> = by_method.values().flatten().map(|(_, h)| *h).collect();
        hashes.sort_unstable();
        let mut row = vec![
            FORMAT_VERSION.to_string(),
            config_hash(&hashes)?,
            key.label_mode.clone(),
            key.label_rate.clone(),
            key.correspondence_rate.clone(),
            key.setting.clone(),
        ];
        for m in &methods {
            match by_method.get(m) {
                Some(v) => {
                    let accs: Vec<f64> = v.iter().map(|x| x.0).collect();
                    let (mean, spread) = mean_spread(&accs);
                    row.extend([mean.to_string(), spread.to_string(), accs.len().to_string()]);
                }
                None => row.extend([String::new(), String::new(), "0".into()]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    format_version: u32,
    config_hash: &'a str,
    run: &'a str,
    method: &'a str,
    seed: u64,
    epoch: usize,
    phase: ntml_core::trainer::Phase,
    train_top1: f64,
    test_top1: f64,
    test_top5: f64,
    corrected_label_acc: Option<f64>,
}

#[derive(Serialize)]
struct WeightRow<'a> {
    format_version: u32,
    config_hash: &'a str,
    run: &'a str,
    modality: &'a str,
    bin_lo: f64,
    bin_hi: f64,
    clean: usize,
    mismatched: usize,
}

pub fn run(roots: &[PathBuf], out: &Path, bins: usize) -> Result<()> {
    let dirs = find_runs(roots)?;
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    write_grid(&runs, out)?;

    let mut series = csv::Writer::from_path(out.join("series.csv"))?;
    let mut weights = csv::Writer::from_path(out.join("weights.csv"))?;
    for r in &runs {
        let name = r.dir.display().to_string();
        for rec in &r.records {
            series.serialize(SeriesRow {
                format_version: FORMAT_VERSION,
                config_hash: &r.info.config_hash,
                run: &name,
                method: &r.info.method,
                seed: r.info.seed,
                epoch: rec.epoch,
                phase: rec.phase,
                train_top1: rec.train_top1,
                test_top1: rec.test_top1,
                test_top5: rec.test_top5,
                corrected_label_acc: rec.corrected_label_acc,
            })?;
        }
        for (modality, pick) in [
            ("visual", (|s: &SampleDiagnostic| s.omega_v) as fn(&SampleDiagnostic) -> f64),
            ("audio", |s: &SampleDiagnostic| s.omega_a),
        ] {
            let split = |clean: bool| -> Vec<f64> {
                r.samples
                    .iter()
                    .filter(|s| s.correspondence_clean == clean)
                    .map(pick)
                    .collect()
            };
            let hc = Histogram::new(&split(true), 0.0, 1.0, bins);
            let hm = Histogram::new(&split(false), 0.0, 1.0, bins);
            let edges = hc.edges();
            for b in 0..bins {
                weights.serialize(WeightRow {
                    format_version: FORMAT_VERSION,
                    config_hash: &r.info.config_hash,
                    run: &name,
                    modality,
                    bin_lo: edges[b],
                    bin_hi: edges[b + 1],
                    clean: hc.counts[b],
                    mismatched: hm.counts[b],
                })?;
            }
        }
    }
    series.flush()?;
    weights.flush()?;
    let schema = [
        schema_text("grid.csv", GRID_COLUMNS),
        schema_text("series.csv", SERIES_COLUMNS),
        schema_text("weights.csv", WEIGHT_COLUMNS),
    ]
    .join("\n");
    write_text(&out.join("schema.txt"), &schema)?;
    println!("merged {} runs into {}", runs.len(), out.display());
    Ok(())
}
