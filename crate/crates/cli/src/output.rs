//! Files shared by every output directory.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ntml_core::report::RunMeta;
use ntml_core::LabelNoiseMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const RUN_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Summary of one training run, read back by `ntml report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub format_version: u32,
    pub config_hash: String,
    pub label: String,
    pub method: String,
    pub sweep: Option<SweepPoint>,
    pub seed: u64,
    pub epochs: usize,
    pub label_mode: LabelNoiseMode,
    pub label_rate: f64,
    pub correspondence_rate: f64,
    /// Hash recorded in the dataset's audit file, when one exists.
    pub dataset_hash: Option<String>,
    pub final_test_top1: f64,
    pub final_test_top5: f64,
    pub final_corrected_label_acc: Option<f64>,
    pub observed_label_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: String,
    pub value: f64,
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    config_hash: &'a str,
    files: Vec<ManifestEntry>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `config.toml` is the file the user passed, byte for byte; `resolved.toml`
/// is the configuration actually used after command-line overrides.
pub fn write_configs(dir: &Path, original: &str, resolved: &ExperimentConfig, meta: &RunMeta) -> Result<()> {
    write_text(&dir.join("config.toml"), original)?;
    let text = format!(
        "# format version {}, config hash {}\n{}",
        meta.format_version,
        meta.config_hash,
        resolved.to_toml()?
    );
    write_text(&dir.join("resolved.toml"), &text)
}

/// Lists every regular file in `dir` with its digest. Binary files carry
/// no config hash of their own, so this ties them to the run.
pub fn write_manifest(dir: &Path, meta: &RunMeta) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    names.sort();
    let mut files = Vec::with_capacity(names.len());
    for name in names {
        let bytes = fs::read(dir.join(&name))?;
        files.push(ManifestEntry {
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", Sha256::digest(&bytes)),
            name,
        });
    }
    write_json(
        &dir.join(MANIFEST_FILE),
        &Manifest {
            format_version: meta.format_version,
            config_hash: &meta.config_hash,
            files,
        },
    )
}

/// Directory name for one sweep point, e.g. `label-rate-0.4`.
pub fn sweep_dir(param: &str, value: f64) -> String {
    format!("{param}-{value}")
}
