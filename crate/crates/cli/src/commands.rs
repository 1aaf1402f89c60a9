use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ntml_core::report::{
    config_hash, schema_text, write_epochs_csv, write_jsonl, write_samples_csv, RunMeta, EPOCH_COLUMNS,
    SAMPLE_COLUMNS,
};
use ntml_core::synth::{apply_noise, audit, generate as synthesize, NoiseAudit};
use ntml_core::trainer::{self, GammaSchedule, TrainReport, Variant};
use ntml_core::{LabelNoiseMode, MultimodalDataset};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{sweep_dir, write_configs, write_json, write_manifest, RunInfo, SweepPoint, RUN_FILE};
use crate::{Method, Sweep};

pub const AUDIT_FILE: &str = "audit.json";
pub const SUMMARY_FILE: &str = "summary.csv";

pub struct GenerateOpts {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sweep: Option<(Sweep, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
pub struct AuditFile {
    pub format_version: u32,
    pub config_hash: String,
    pub label: String,
    pub train: NoiseAudit,
    pub test: NoiseAudit,
}

pub fn generate(opts: &GenerateOpts) -> Result<()> {
    let loaded = ExperimentConfig::load(&opts.config)?;
    let mut base = loaded.config.clone();
    if let Some(out) = &opts.out {
        base.dataset_dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        base.generator.seed = seed;
    }
    let points: Vec<(PathBuf, ExperimentConfig)> = match &opts.sweep {
        None => vec![(base.dataset_dir.clone(), base.clone())],
        Some((sweep, values)) => values
            .iter()
            .map(|&v| {
                let mut cfg = base.clone();
                match sweep {
                    Sweep::LabelRate => cfg.noise.label_rate = v,
                    Sweep::CorrespondenceRate => cfg.noise.correspondence_rate = v,
                    Sweep::Gamma => unreachable!("rejected as a usage error"),
                }
                (base.dataset_dir.join(sweep_dir(sweep.name(), v)), cfg)
            })
            .collect(),
    };
    for (dir, cfg) in points {
        cfg.validate()?;
        let meta = RunMeta::new(config_hash(&Hashed {
            generator: &cfg.generator,
            noise: &cfg.noise,
            train: None,
            method: None,
        })?);
        let mut data = synthesize(&cfg.generator)?;
        apply_noise(&mut data.train, &cfg.noise)?;
        data.save_dir(&dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
        let report = AuditFile {
            format_version: meta.format_version,
            config_hash: meta.config_hash.clone(),
            label: cfg.label.clone(),
            train: audit(&data.train),
            test: audit(&data.test),
        };
        write_json(&dir.join(AUDIT_FILE), &report)?;
        write_configs(&dir, &loaded.text, &cfg, &meta)?;
        write_manifest(&dir, &meta)?;
        println!(
            "{}: {} train / {} test, label noise {}/{} ({:.3}), mismatched {}/{} ({:.3})",
            dir.display(),
            data.train.len(),
            data.test.len(),
            report.train.label_flips,
            report.train.samples,
            report.train.achieved_label_rate,
            report.train.mismatched,
            report.train.samples,
            report.train.achieved_correspondence_rate,
        );
    }
    Ok(())
}

pub struct TrainOpts {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sweep: Option<(Sweep, Vec<f64>)>,
    /// Empty means the variant named in the config.
    pub methods: Vec<Method>,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::None => "none",
            Method::InsOnly => "ins-only",
            Method::CatOnly => "cat-only",
            Method::Full => "full",
        }
    }

    fn variant(self) -> Option<Variant> {
        match self {
            Method::Baseline => None,
            Method::None => Some(Variant::None),
            Method::InsOnly => Some(Variant::InsOnly),
            Method::CatOnly => Some(Variant::CatOnly),
            Method::Full => Some(Variant::Full),
        }
    }

    fn from_variant(v: Variant) -> Method {
        match v {
            Variant::None => Method::None,
            Variant::InsOnly => Method::InsOnly,
            Variant::CatOnly => Method::CatOnly,
            Variant::Full => Method::Full,
        }
    }
}

/// What the config hash covers: everything that decides the numbers, but
/// not paths or the run label.
#[derive(Serialize)]
struct Hashed<'a> {
    generator: &'a ntml_core::GeneratorConfig,
    noise: &'a ntml_core::NoiseConfig,
    train: Option<&'a ntml_core::trainer::TrainConfig>,
    method: Option<&'a str>,
}

struct Planned {
    dir: PathBuf,
    data_dir: PathBuf,
    sweep: Option<SweepPoint>,
    method: Method,
    config: ExperimentConfig,
}

fn plan(base: &ExperimentConfig, opts: &TrainOpts) -> Vec<Planned> {
    let methods = if opts.methods.is_empty() {
        vec![Method::from_variant(base.train.variant)]
    } else {
        opts.methods.clone()
    };
    let points: Vec<Option<(Sweep, f64)>> = match &opts.sweep {
        None => vec![None],
        Some((s, values)) => values.iter().map(|&v| Some((*s, v))).collect(),
    };
    let mut runs = Vec::new();
    for point in points {
        let mut cfg = base.clone();
        let mut dir = base.out_dir.clone();
        let mut data_dir = base.dataset_dir.clone();
        if let Some((s, v)) = point {
            dir = dir.join(sweep_dir(s.name(), v));
            match s {
                Sweep::Gamma => cfg.train.gamma = GammaSchedule::constant(v),
                Sweep::LabelRate => {
                    cfg.noise.label_rate = v;
                    data_dir = data_dir.join(sweep_dir(s.name(), v));
                }
                Sweep::CorrespondenceRate => {
                    cfg.noise.correspondence_rate = v;
                    data_dir = data_dir.join(sweep_dir(s.name(), v));
                }
            }
        }
        for &m in &methods {
            let mut c = cfg.clone();
            if let Some(v) = m.variant() {
                c.train.variant = v;
            }
            runs.push(Planned {
                dir: if methods.len() > 1 { dir.join(m.name()) } else { dir.clone() },
                data_dir: data_dir.clone(),
                sweep: point.map(|(s, v)| SweepPoint {
                    param: s.name().into(),
                    value: v,
                }),
                method: m,
                config: c,
            });
        }
    }
    runs
}

fn load_dataset(dir: &Path) -> Result<(MultimodalDataset, Option<String>)> {
    if !dir.join(MultimodalDataset::TRAIN_FILE).is_file() {
        bail!("no dataset in {} (run `ntml generate` first)", dir.display());
    }
    let data = MultimodalDataset::load_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let hash = fs::read_to_string(dir.join(AUDIT_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<AuditFile>(&t).ok())
        .map(|a| a.config_hash);
    Ok((data, hash))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    format_version: u32,
    config_hash: &'a str,
    run: String,
    sweep: &'a str,
    value: Option<f64>,
    method: &'a str,
    test_top1: f64,
    test_top5: f64,
    corrected_label_acc: Option<f64>,
    observed_label_acc: f64,
}

pub const SUMMARY_COLUMNS: &[(&str, &str)] = &[
    ("format_version", "output format version"),
    ("config_hash", "hash of the run configuration"),
    ("run", "run directory relative to the output directory"),
    ("sweep", "swept parameter, empty without a sweep"),
    ("value", "value of the swept parameter"),
    ("method", "baseline or contrastive variant"),
    ("test_top1", "final clean test top-1 accuracy"),
    ("test_top5", "final clean test top-5 accuracy"),
    ("corrected_label_acc", "final accuracy of KNN-corrected training labels"),
    ("observed_label_acc", "accuracy of the observed training labels"),
];

pub fn train(opts: &TrainOpts) -> Result<()> {
    let loaded = ExperimentConfig::load(&opts.config)?;
    let mut base = loaded.config.clone();
    if let Some(out) = &opts.out {
        base.out_dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        base.train.seed = seed;
    }
    let runs = plan(&base, opts);
    for r in &runs {
        r.config.validate()?;
    }
    fs::create_dir_all(&base.out_dir)?;
    let mut summary = Vec::with_capacity(runs.len());
    let mut cached: Option<(PathBuf, MultimodalDataset, Option<String>)> = None;
    for r in &runs {
        if cached.as_ref().map(|c| &c.0) != Some(&r.data_dir) {
            let (d, h) = load_dataset(&r.data_dir)?;
            cached = Some((r.data_dir.clone(), d, h));
        }
        let (_, data, data_hash) = cached.as_ref().expect("loaded above");
        let meta = RunMeta::new(config_hash(&Hashed {
            generator: &r.config.generator,
            noise: &r.config.noise,
            train: Some(&r.config.train),
            method: Some(r.method.name()),
        })?);
        let (model, report) = match r.method.variant() {
            None => trainer::baseline(&r.config.train, data),
            Some(v) => trainer::ablate(&r.config.train, data, v),
        }
        .with_context(|| format!("training run {}", r.dir.display()))?;
        fs::create_dir_all(&r.dir)?;
        let info = run_info(r, &meta, data, data_hash.clone(), &report);
        write_run(&r.dir, &loaded.text, r, &meta, &info, &report)?;
        model.save(&r.dir.join("model.ckpt"))?;
        write_manifest(&r.dir, &meta)?;
        println!(
            "{} [{}]: test top-1 {:.4}, top-5 {:.4}{}",
            r.dir.display(),
            r.method.name(),
            info.final_test_top1,
            info.final_test_top5,
            info.final_corrected_label_acc
                .map(|a| format!(", corrected labels {a:.4}"))
                .unwrap_or_default(),
        );
        summary.push((r, meta, info));
    }
    let path = base.out_dir.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for (r, meta, info) in &summary {
        w.serialize(SummaryRow {
            format_version: meta.format_version,
            config_hash: &meta.config_hash,
            run: r
                .dir
                .strip_prefix(&base.out_dir)
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            sweep: r.sweep.as_ref().map(|s| s.param.as_str()).unwrap_or(""),
            value: r.sweep.as_ref().map(|s| s.value),
            method: r.method.name(),
            test_top1: info.final_test_top1,
            test_top5: info.final_test_top5,
            corrected_label_acc: info.final_corrected_label_acc,
            observed_label_acc: info.observed_label_acc,
        })?;
    }
    w.flush()?;
    crate::output::write_text(
        &base.out_dir.join("summary.schema.txt"),
        &schema_text("summary.csv", SUMMARY_COLUMNS),
    )?;
    Ok(())
}

fn run_info(r: &Planned, meta: &RunMeta, data: &MultimodalDataset, dataset_hash: Option<String>, report: &TrainReport) -> RunInfo {
    let last = report.last();
    let (label_mode, label_rate) = data.train.noise.label.unwrap_or((LabelNoiseMode::None, 0.0));
    RunInfo {
        format_version: meta.format_version,
        config_hash: meta.config_hash.clone(),
        label: r.config.label.clone(),
        method: r.method.name().into(),
        sweep: r.sweep.clone(),
        seed: r.config.train.seed,
        epochs: r.config.train.epochs,
        label_mode,
        label_rate,
        correspondence_rate: data.train.noise.correspondence.unwrap_or(0.0),
        dataset_hash,
        final_test_top1: last.map_or(0.0, |l| l.test_top1),
        final_test_top5: last.map_or(0.0, |l| l.test_top5),
        final_corrected_label_acc: last.and_then(|l| l.corrected_label_acc),
        observed_label_acc: data.train.observed_label_accuracy(),
    }
}

fn write_run(
    dir: &Path,
    original: &str,
    r: &Planned,
    meta: &RunMeta,
    info: &RunInfo,
    report: &TrainReport,
) -> Result<()> {
    write_configs(dir, original, &r.config, meta)?;
    write_json(&dir.join(RUN_FILE), info)?;
    write_epochs_csv(BufWriter::new(File::create(dir.join("epochs.csv"))?), meta, &report.records)?;
    write_jsonl(BufWriter::new(File::create(dir.join("epochs.jsonl"))?), meta, &report.records)?;
    write_samples_csv(BufWriter::new(File::create(dir.join("samples.csv"))?), meta, &report.samples)?;
    write_jsonl(BufWriter::new(File::create(dir.join("samples.jsonl"))?), meta, &report.samples)?;
    let schema = format!(
        "{}\n{}",
        schema_text("epochs.csv", EPOCH_COLUMNS),
        schema_text("samples.csv", SAMPLE_COLUMNS)
    );
    crate::output::write_text(&dir.join("schema.txt"), &schema)?;
    Ok(())
}
