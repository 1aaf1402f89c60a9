//! Tabular output of training runs. Every row carries the format version
//! and the hash of the configuration that produced it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::{EpochRecord, Phase, SampleDiagnostic};

pub const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical JSON encoding of `config`, first 16 digits.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&json);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub format_version: u32,
    pub config_hash: String,
}

impl RunMeta {
    pub fn new(config_hash: impl Into<String>) -> Self {
        RunMeta {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.into(),
        }
    }
}

/// Column name and meaning of the per-epoch table.
pub const EPOCH_COLUMNS: &[(&str, &str)] = &[
    ("format_version", "output format version"),
    ("config_hash", "hash of the run configuration"),
    ("epoch", "epochs completed, warm-up included"),
    ("phase", "warmup, main or baseline"),
    ("gamma", "weight of corrected labels in the supervised loss"),
    ("l_ins", "mean instance-level contrastive loss over batches"),
    ("l_cat", "mean category-level contrastive loss over full batches"),
    ("l_c", "mean total contrastive loss"),
    ("l_s", "mean supervised loss"),
    ("train_top1", "training accuracy against observed labels"),
    ("test_top1", "clean test top-1 accuracy"),
    ("test_top5", "clean test top-5 accuracy"),
    ("top5_degenerate", "true when there are at most 5 classes"),
    ("observed_label_acc", "fraction of observed training labels that are correct"),
    ("corrected_label_acc", "fraction of KNN-corrected labels that are correct"),
    ("omega_v_clean", "mean visual weight over correctly paired samples"),
    ("omega_v_mismatched", "mean visual weight over mismatched samples"),
    ("omega_a_clean", "mean audio weight over correctly paired samples"),
    ("omega_a_mismatched", "mean audio weight over mismatched samples"),
    ("ce_clean", "mean training cross-entropy of correctly labeled samples"),
    ("ce_noisy", "mean training cross-entropy of mislabeled samples"),
];

pub const SAMPLE_COLUMNS: &[(&str, &str)] = &[
    ("format_version", "output format version"),
    ("config_hash", "hash of the run configuration"),
    ("id", "sample id"),
    ("true_label", "generating class"),
    ("observed_label", "training label after noise injection"),
    ("corrected_label", "KNN majority-vote label"),
    ("agreement", "fraction of neighbors voting for the corrected label"),
    ("label_clean", "observed label equals true label"),
    ("correspondence_clean", "audio belongs to this sample"),
    ("omega_v", "estimated correspondence weight of the visual term"),
    ("omega_a", "estimated correspondence weight of the audio term"),
    ("ce_observed", "cross-entropy against the observed label"),
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Warmup => "warmup",
        Phase::Main => "main",
        Phase::Baseline => "baseline",
    }
}

fn epoch_fields(meta: &RunMeta, r: &EpochRecord) -> Vec<String> {
    vec![
        meta.format_version.to_string(),
        meta.config_hash.clone(),
        r.epoch.to_string(),
        phase_name(r.phase).to_string(),
        r.gamma.to_string(),
        opt(r.l_ins),
        opt(r.l_cat),
        opt(r.l_c),
        r.l_s.to_string(),
        r.train_top1.to_string(),
        r.test_top1.to_string(),
        r.test_top5.to_string(),
        r.top5_degenerate.to_string(),
        r.observed_label_acc.to_string(),
        opt(r.corrected_label_acc),
        opt(r.omega_v_clean),
        opt(r.omega_v_mismatched),
        opt(r.omega_a_clean),
        opt(r.omega_a_mismatched),
        opt(r.ce_clean),
        opt(r.ce_noisy),
    ]
}

fn header(cols: &[(&'static str, &str)]) -> Vec<&'static str> {
    cols.iter().map(|c| c.0).collect()
}

pub fn write_epochs_csv<W: Write>(out: W, meta: &RunMeta, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(EPOCH_COLUMNS))?;
    for r in records {
        w.write_record(epoch_fields(meta, r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn epochs_csv(meta: &RunMeta, records: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_epochs_csv(&mut buf, meta, records)?;
    Ok(buf)
}

pub fn write_samples_csv<W: Write>(out: W, meta: &RunMeta, samples: &[SampleDiagnostic]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(SAMPLE_COLUMNS))?;
    for s in samples {
        w.write_record([
            meta.format_version.to_string(),
            meta.config_hash.clone(),
            s.id.to_string(),
            s.true_label.to_string(),
            s.observed_label.to_string(),
            s.corrected_label.to_string(),
            s.agreement.to_string(),
            s.label_clean.to_string(),
            s.correspondence_clean.to_string(),
            s.omega_v.to_string(),
            s.omega_a.to_string(),
            s.ce_observed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(detail: impl Into<String>) -> Error {
    Error::Format {
        path: "<csv>".into(),
        detail: detail.into(),
    }
}

fn parse<T: std::str::FromStr>(field: &str, name: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_err(format!("column `{name}`: cannot parse `{field}`")))
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, name).map(Some)
    }
}

/// Checks the column header and pulls the shared metadata out of each row.
struct TableReader<R: Read> {
    rd: csv::Reader<R>,
    meta: Option<RunMeta>,
}

impl<R: Read> TableReader<R> {
    fn new(input: R, cols: &[(&str, &str)]) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let want: Vec<&str> = cols.iter().map(|c| c.0).collect();
        let got: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if got != want {
            return Err(parse_err(format!("unexpected columns {got:?}")));
        }
        Ok(TableReader { rd, meta: None })
    }

    fn rows(&mut self) -> Result<Vec<csv::StringRecord>> {
        let mut out = Vec::new();
        for row in self.rd.records() {
            let row = row?;
            let version: u32 = parse(row.get(0).unwrap_or(""), "format_version")?;
            if version != FORMAT_VERSION {
                return Err(Error::Version {
                    path: "<csv>".into(),
                    found: version,
                    expected: FORMAT_VERSION,
                });
            }
            let m = RunMeta::new(row.get(1).unwrap_or(""));
            match &self.meta {
                Some(prev) if *prev != m => {
                    return Err(parse_err("rows from different configurations in one table"))
                }
                None => self.meta = Some(m),
                _ => {}
            }
            out.push(row);
        }
        Ok(out)
    }
}

/// Reads a per-epoch table written by [`write_epochs_csv`]. Rows must share
/// one config hash and the current format version.
pub fn read_epochs_csv<R: Read>(input: R) -> Result<(RunMeta, Vec<EpochRecord>)> {
    let mut t = TableReader::new(input, EPOCH_COLUMNS)?;
    let mut records = Vec::new();
    for row in t.rows()? {
        let f = |i: usize| row.get(i).unwrap_or("");
        let phase = match f(3) {
            "warmup" => Phase::Warmup,
            "main" => Phase::Main,
            "baseline" => Phase::Baseline,
            other => return Err(parse_err(format!("unknown phase `{other}`"))),
        };
        records.push(EpochRecord {
            epoch: parse(f(2), "epoch")?,
            phase,
            gamma: parse(f(4), "gamma")?,
            l_ins: parse_opt(f(5), "l_ins")?,
            l_cat: parse_opt(f(6), "l_cat")?,
            l_c: parse_opt(f(7), "l_c")?,
            l_s: parse(f(8), "l_s")?,
            train_top1: parse(f(9), "train_top1")?,
            test_top1: parse(f(10), "test_top1")?,
            test_top5: parse(f(11), "test_top5")?,
            top5_degenerate: parse(f(12), "top5_degenerate")?,
            observed_label_acc: parse(f(13), "observed_label_acc")?,
            corrected_label_acc: parse_opt(f(14), "corrected_label_acc")?,
            omega_v_clean: parse_opt(f(15), "omega_v_clean")?,
            omega_v_mismatched: parse_opt(f(16), "omega_v_mismatched")?,
            omega_a_clean: parse_opt(f(17), "omega_a_clean")?,
            omega_a_mismatched: parse_opt(f(18), "omega_a_mismatched")?,
            ce_clean: parse_opt(f(19), "ce_clean")?,
            ce_noisy: parse_opt(f(20), "ce_noisy")?,
        });
    }
    let meta = t.meta.ok_or(Error::Empty("epoch table"))?;
    Ok((meta, records))
}

/// Reads a per-sample table written by [`write_samples_csv`].
pub fn read_samples_csv<R: Read>(input: R) -> Result<(RunMeta, Vec<SampleDiagnostic>)> {
    let mut t = TableReader::new(input, SAMPLE_COLUMNS)?;
    let mut samples = Vec::new();
    for row in t.rows()? {
        let f = |i: usize| row.get(i).unwrap_or("");
        samples.push(SampleDiagnostic {
            id: parse(f(2), "id")?,
            true_label: parse(f(3), "true_label")?,
            observed_label: parse(f(4), "observed_label")?,
            corrected_label: parse(f(5), "corrected_label")?,
            agreement: parse(f(6), "agreement")?,
            label_clean: parse(f(7), "label_clean")?,
            correspondence_clean: parse(f(8), "correspondence_clean")?,
            omega_v: parse(f(9), "omega_v")?,
            omega_a: parse(f(10), "omega_a")?,
            ce_observed: parse(f(11), "ce_observed")?,
        });
    }
    let meta = t.meta.ok_or(Error::Empty("sample table"))?;
    Ok((meta, samples))
}

#[derive(Serialize)]
struct JsonLine<'a, T> {
    format_version: u32,
    config_hash: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

/// One JSON object per line, each tagged with the run metadata.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, meta: &RunMeta, items: &[T]) -> Result<()> {
    for item in items {
        let line = JsonLine {
            format_version: meta.format_version,
            config_hash: &meta.config_hash,
            record: item,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Markdown-free plain text schema listing for a set of columns.
pub fn schema_text(title: &str, cols: &[(&str, &str)]) -> String {
    let mut s = format!("# {title} (format version {FORMAT_VERSION})\n");
    for (name, doc) in cols {
        s.push_str(&format!("{name}: {doc}\n"));
    }
    s
}
