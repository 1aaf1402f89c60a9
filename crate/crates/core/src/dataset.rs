//! Paired visual/audio samples with clean and observed labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"NTMD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub id: u64,
    pub visual: Vec<f64>,
    pub audio: Vec<f64>,
    pub true_label: usize,
    pub observed_label: usize,
    /// False iff the audio vector was taken from a sample of another class.
    pub correspondence_clean: bool,
    /// Id of the sample the audio vector was generated for.
    pub audio_source: u64,
}

impl MultimodalSample {
    pub fn label_clean(&self) -> bool {
        self.true_label == self.observed_label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelNoiseMode {
    None,
    Symmetric,
    Asymmetric,
}

impl LabelNoiseMode {
    fn code(self) -> u8 {
        match self {
            LabelNoiseMode::None => 0,
            LabelNoiseMode::Symmetric => 1,
            LabelNoiseMode::Asymmetric => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LabelNoiseMode::None),
            1 => Some(LabelNoiseMode::Symmetric),
            2 => Some(LabelNoiseMode::Asymmetric),
            _ => None,
        }
    }
}

/// Which noise passes have been applied, so neither runs twice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseState {
    pub label: Option<(LabelNoiseMode, f64)>,
    pub correspondence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub samples: Vec<MultimodalSample>,
    pub noise: NoiseState,
}

impl Dataset {
    pub fn new(classes: usize, visual_dim: usize, audio_dim: usize) -> Self {
        Dataset {
            classes,
            visual_dim,
            audio_dim,
            samples: Vec::new(),
            noise: NoiseState::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks dimensions and label ranges of every sample.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.visual.len() != self.visual_dim || s.audio.len() != self.audio_dim {
                return Err(Error::shape(
                    "Dataset::validate",
                    format!("sample {} has dims ({}, {})", s.id, s.visual.len(), s.audio.len()),
                ));
            }
            for label in [s.true_label, s.observed_label] {
                if label >= self.classes {
                    return Err(Error::InvalidLabel {
                        label,
                        classes: self.classes,
                    });
                }
            }
        }
        Ok(())
    }

    /// Visual vectors of the given samples as a `len × d_v` matrix.
    pub fn visual_batch(&self, idx: &[usize]) -> Tensor {
        gather(idx.iter().map(|&i| &self.samples[i].visual), idx.len(), self.visual_dim)
    }

    pub fn audio_batch(&self, idx: &[usize]) -> Tensor {
        gather(idx.iter().map(|&i| &self.samples[i].audio), idx.len(), self.audio_dim)
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    pub fn true_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    pub fn correspondence_flags(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.correspondence_clean).collect()
    }

    pub fn label_clean_flags(&self) -> Vec<bool> {
        self.samples.iter().map(MultimodalSample::label_clean).collect()
    }

    /// Fraction of observed labels equal to the true label.
    pub fn observed_label_accuracy(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        self.samples.iter().filter(|s| s.label_clean()).count() as f64 / self.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.classes as u32);
        w.u32(self.visual_dim as u32);
        w.u32(self.audio_dim as u32);
        w.u64(self.samples.len() as u64);
        match self.noise.label {
            Some((mode, rate)) => {
                w.u8(1);
                w.u8(mode.code());
                w.f64(rate);
            }
            None => {
                w.u8(0);
                w.u8(0);
                w.f64(0.0);
            }
        }
        match self.noise.correspondence {
            Some(rate) => {
                w.u8(1);
                w.f64(rate);
            }
            None => {
                w.u8(0);
                w.f64(0.0);
            }
        }
        for s in &self.samples {
            w.u64(s.id);
            w.u32(s.true_label as u32);
            w.u32(s.observed_label as u32);
            w.u8(s.correspondence_clean as u8);
            w.u64(s.audio_source);
            w.f64s(&s.visual);
            w.f64s(&s.audio);
        }
        w.into_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, DATASET_MAGIC, DATASET_VERSION, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let payload = container::read_file(path, DATASET_MAGIC, DATASET_VERSION)?;
        let mut r = Reader::new(&payload, path);
        let classes = r.u32()? as usize;
        let visual_dim = r.u32()? as usize;
        let audio_dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        let has_label = r.u8()?;
        let mode = LabelNoiseMode::from_code(r.u8()?)
            .ok_or_else(|| r.format_error("unknown label-noise mode"))?;
        let label_rate = r.f64()?;
        let has_corr = r.u8()?;
        let corr_rate = r.f64()?;
        let noise = NoiseState {
            label: (has_label == 1).then_some((mode, label_rate)),
            correspondence: (has_corr == 1).then_some(corr_rate),
        };
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u64()?;
            let true_label = r.u32()? as usize;
            let observed_label = r.u32()? as usize;
            let correspondence_clean = r.u8()? != 0;
            let audio_source = r.u64()?;
            let visual = r.f64s(visual_dim)?;
            let audio = r.f64s(audio_dim)?;
            samples.push(MultimodalSample {
                id,
                visual,
                audio,
                true_label,
                observed_label,
                correspondence_clean,
                audio_source,
            });
        }
        r.finish()?;
        let ds = Dataset {
            classes,
            visual_dim,
            audio_dim,
            samples,
            noise,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn gather<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, n: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::new(vec![n, dim], data).expect("rows validated against dataset dims")
}

/// A training split and a clean held-out test split.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl MultimodalDataset {
    pub const TRAIN_FILE: &'static str = "train.ntd";
    pub const TEST_FILE: &'static str = "test.ntd";

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.train.save(&dir.join(Self::TRAIN_FILE))?;
        self.test.save(&dir.join(Self::TEST_FILE))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(MultimodalDataset {
            train: Dataset::load(&dir.join(Self::TRAIN_FILE))?,
            test: Dataset::load(&dir.join(Self::TEST_FILE))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mut ds = Dataset::new(3, 2, 3);
        for i in 0..4u64 {
            ds.samples.push(MultimodalSample {
                id: i,
                visual: vec![i as f64, -0.5],
                audio: vec![0.1 * i as f64, 1e-300, -7.25],
                true_label: (i % 3) as usize,
                observed_label: ((i + 1) % 3) as usize,
                correspondence_clean: i % 2 == 0,
                audio_source: i,
            });
        }
        ds.noise.label = Some((LabelNoiseMode::Asymmetric, 0.25));
        ds
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ntd");
        let ds = tiny();
        ds.save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), ds);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ntd");
        tiny().save(&p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Checksum(_))));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ntd");
        let ds = Dataset::new(2, 4, 4);
        ds.save(&p).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, ds);
    }

    #[test]
    fn batches_preserve_order() {
        let ds = tiny();
        let v = ds.visual_batch(&[3, 1]);
        assert_eq!(v.shape(), &[2, 2]);
        assert_eq!(v.row_slice(0), &[3.0, -0.5]);
        assert_eq!(v.row_slice(1), &[1.0, -0.5]);
    }
}
