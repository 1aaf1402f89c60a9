//! Synthetic class-structured two-modality data and controlled noise.
//!
//! Each class owns a latent mean; the class means sit on orthogonal axes so
//! every pair is exactly `class_separation` apart in units of the
//! within-class standard deviation. A sample draws a shared latent offset and
//! a private offset per modality, mixed by `modality_correlation`, and each
//! modality observes its latent through a fixed random projection plus
//! isotropic observation noise.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelNoiseMode, MultimodalDataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Distance between class means in within-class standard deviations.
    pub class_separation: f64,
    /// Fraction of within-class latent variance shared by both modalities.
    pub modality_correlation: f64,
    /// Part of the unit within-class std that is added as isotropic noise
    /// in observation space rather than in the latent space. In `[0, 1)`.
    pub observation_noise: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            classes: 10,
            per_class: 200,
            test_per_class: 50,
            visual_dim: 32,
            audio_dim: 32,
            class_separation: 4.0,
            modality_correlation: 0.3,
            observation_noise: 0.3,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.classes < 2 {
            return bad("generator needs at least 2 classes");
        }
        if self.per_class < 1 {
            return bad("per_class must be at least 1");
        }
        if self.visual_dim < 2 || self.audio_dim < 2 {
            return bad("modality dimensions must be at least 2");
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be a finite non-negative number");
        }
        if !(0.0..=1.0).contains(&self.modality_correlation) {
            return bad("modality_correlation must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.observation_noise) {
            return bad("observation_noise must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Generates a clean train split and a clean test split from one
/// distribution.
pub fn generate(cfg: &GeneratorConfig) -> Result<MultimodalDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let latent = cfg.classes;
    let mean_scale = cfg.class_separation / std::f64::consts::SQRT_2;
    let proj_v = projection(cfg.visual_dim, latent, &mut rng);
    let proj_a = projection(cfg.audio_dim, latent, &mut rng);

    let make_split = |per_class: usize, first_id: u64, rng: &mut ChaCha8Rng| {
        let mut ds = Dataset::new(cfg.classes, cfg.visual_dim, cfg.audio_dim);
        // latent and observation noise variances add up to 1
        let latent_std = (1.0 - cfg.observation_noise.powi(2)).sqrt();
        let shared_w = latent_std * cfg.modality_correlation.sqrt();
        let private_w = latent_std * (1.0 - cfg.modality_correlation).sqrt();
        let mut id = first_id;
        for class in 0..cfg.classes {
            for _ in 0..per_class {
                let shared = Tensor::randn(&[latent], 1.0, rng);
                let latent_of = |rng: &mut ChaCha8Rng| {
                    let private = Tensor::randn(&[latent], 1.0, rng);
                    let mut z: Vec<f64> = shared
                        .data()
                        .iter()
                        .zip(private.data())
                        .map(|(s, p)| shared_w * s + private_w * p)
                        .collect();
                    z[class] += mean_scale;
                    z
                };
                let zv = latent_of(rng);
                let za = latent_of(rng);
                let visual = observe(&proj_v, &zv, cfg.observation_noise, rng);
                let audio = observe(&proj_a, &za, cfg.observation_noise, rng);
                ds.samples.push(MultimodalSample {
                    id,
                    visual,
                    audio,
                    true_label: class,
                    observed_label: class,
                    correspondence_clean: true,
                    audio_source: id,
                });
                id += 1;
            }
        }
        ds
    };

    let train = make_split(cfg.per_class, 0, &mut rng);
    let test_first = train.len() as u64;
    let test = make_split(cfg.test_per_class, test_first, &mut rng);
    Ok(MultimodalDataset { train, test })
}

/// `dim × latent` map. Orthonormal columns when `dim >= latent`, so latent
/// distances are preserved; scaled Gaussian otherwise.
fn projection(dim: usize, latent: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(latent);
    for _ in 0..latent {
        let mut c = Tensor::randn(&[dim], 1.0, rng).into_data();
        if dim >= latent {
            for prev in &cols {
                let d = crate::tensor::dot(&c, prev);
                for (x, p) in c.iter_mut().zip(prev) {
                    *x -= d * p;
                }
            }
            let n = crate::tensor::l2_norm(&c);
            c.iter_mut().for_each(|x| *x /= n);
        } else {
            let s = 1.0 / (dim as f64).sqrt();
            c.iter_mut().for_each(|x| *x *= s);
        }
        cols.push(c);
    }
    let mut m = Tensor::zeros(&[dim, latent]);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    m
}

fn observe(proj: &Tensor, z: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (dim, _) = (proj.rows(), proj.cols());
    let eps = Tensor::randn(&[dim], noise, rng);
    (0..dim)
        .map(|i| crate::tensor::dot(proj.row_slice(i), z) + eps.data()[i])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub label_mode: LabelNoiseMode,
    pub label_rate: f64,
    pub correspondence_rate: f64,
    pub seed: u64,
    /// When false, mismatched audio is only injected into samples whose
    /// label was left clean.
    pub allow_overlap: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            label_mode: LabelNoiseMode::None,
            label_rate: 0.0,
            correspondence_rate: 0.0,
            seed: 11,
            allow_overlap: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("label_rate", self.label_rate),
            ("correspondence_rate", self.correspondence_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Applies label noise then correspondence noise to the train split.
pub fn apply_noise(ds: &mut Dataset, cfg: &NoiseConfig) -> Result<()> {
    cfg.validate()?;
    inject_label_noise(ds, cfg.label_mode, cfg.label_rate, cfg.seed)?;
    let corr_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    if cfg.allow_overlap {
        inject_correspondence_noise(ds, cfg.correspondence_rate, corr_seed)
    } else {
        let eligible: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label_clean()).collect();
        inject_correspondence_noise_among(ds, cfg.correspondence_rate, corr_seed, &eligible)
    }
}

fn exact_count(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

/// Flips exactly `round(rate·N)` observed labels chosen uniformly without
/// replacement. Symmetric flips draw uniformly from the other `K − 1`
/// classes; asymmetric flips map class `k` to `(k + 1) mod K`.
pub fn inject_label_noise(ds: &mut Dataset, mode: LabelNoiseMode, rate: f64, seed: u64) -> Result<()> {
    if ds.noise.label.is_some() {
        return Err(Error::AlreadyInjected("label"));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("label rate {rate} outside [0, 1]")));
    }
    if mode != LabelNoiseMode::None && rate > 0.0 && ds.classes < 2 {
        return Err(Error::InvalidConfig("label noise needs at least 2 classes".into()));
    }
    if ds.samples.iter().any(|s| !s.label_clean()) {
        return Err(Error::AlreadyInjected("label"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = ds.classes;
    let n = ds.len();
    if mode != LabelNoiseMode::None {
        let chosen = index::sample(&mut rng, n, exact_count(rate, n).min(n));
        for i in chosen.iter() {
            let s = &mut ds.samples[i];
            s.observed_label = match mode {
                LabelNoiseMode::Symmetric => {
                    let r = rng.random_range(0..k - 1);
                    if r >= s.true_label {
                        r + 1
                    } else {
                        r
                    }
                }
                LabelNoiseMode::Asymmetric => (s.true_label + 1) % k,
                LabelNoiseMode::None => unreachable!(),
            };
        }
    }
    let applied_rate = if mode == LabelNoiseMode::None { 0.0 } else { rate };
    ds.noise.label = Some((mode, applied_rate));
    Ok(())
}

/// Replaces the audio of exactly `round(rate·N)` samples with the audio of a
/// uniformly chosen sample of a different true class.
pub fn inject_correspondence_noise(ds: &mut Dataset, rate: f64, seed: u64) -> Result<()> {
    let all: Vec<usize> = (0..ds.len()).collect();
    inject_correspondence_noise_among(ds, rate, seed, &all)
}

fn inject_correspondence_noise_among(
    ds: &mut Dataset,
    rate: f64,
    seed: u64,
    eligible: &[usize],
) -> Result<()> {
    if ds.noise.correspondence.is_some() {
        return Err(Error::AlreadyInjected("correspondence"));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "correspondence rate {rate} outside [0, 1]"
        )));
    }
    let n = ds.len();
    let count = exact_count(rate, n);
    if count > 0 {
        if ds.classes < 2 {
            return Err(Error::InvalidConfig(
                "correspondence noise needs a donor from another class; only one class exists".into(),
            ));
        }
        if count > eligible.len() {
            return Err(Error::InvalidConfig(format!(
                "{count} mismatched samples requested but only {} are eligible",
                eligible.len()
            )));
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.true_label].push(i);
    }
    let original: Vec<(Vec<f64>, u64)> = ds
        .samples
        .iter()
        .map(|s| (s.audio.clone(), s.id))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, eligible.len(), count);
    for pick in chosen.iter() {
        let i = eligible[pick];
        let own = ds.samples[i].true_label;
        let donors = n - by_class[own].len();
        if donors == 0 {
            return Err(Error::InvalidConfig(format!(
                "no donor outside class {own} for sample {}",
                ds.samples[i].id
            )));
        }
        // Uniform over samples of other classes: index into the
        // concatenation of every other class's member list.
        let mut r = rng.random_range(0..donors);
        let mut donor = usize::MAX;
        for (c, members) in by_class.iter().enumerate() {
            if c == own {
                continue;
            }
            if r < members.len() {
                donor = members[r];
                break;
            }
            r -= members.len();
        }
        let (audio, source) = original[donor].clone();
        let s = &mut ds.samples[i];
        s.audio = audio;
        s.audio_source = source;
        s.correspondence_clean = false;
    }
    ds.noise.correspondence = Some(rate);
    Ok(())
}

/// Post-hoc accounting of injected noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseAudit {
    pub samples: usize,
    pub label_mode: Option<LabelNoiseMode>,
    pub requested_label_rate: f64,
    pub label_flips: usize,
    pub achieved_label_rate: f64,
    /// `flip_map[t][o]`: samples with true class `t` observed as `o`.
    pub flip_map: Vec<Vec<usize>>,
    /// Asymmetric-mode flips that do not follow `k → (k + 1) mod K`.
    pub asymmetric_violations: usize,
    pub requested_correspondence_rate: f64,
    pub mismatched: usize,
    pub achieved_correspondence_rate: f64,
    /// Mismatched samples whose audio donor shares their true class.
    pub donor_class_violations: usize,
    /// Samples whose flag disagrees with the audio provenance.
    pub flag_inconsistencies: usize,
    pub both_noisy: usize,
}

pub fn audit(ds: &Dataset) -> NoiseAudit {
    let k = ds.classes;
    let n = ds.len();
    let mut flip_map = vec![vec![0usize; k]; k];
    let mut flips = 0;
    let mut asym = 0;
    for s in &ds.samples {
        flip_map[s.true_label][s.observed_label] += 1;
        if !s.label_clean() {
            flips += 1;
            if s.observed_label != (s.true_label + 1) % k {
                asym += 1;
            }
        }
    }
    let label_of: std::collections::HashMap<u64, usize> =
        ds.samples.iter().map(|s| (s.id, s.true_label)).collect();
    let mut mismatched = 0;
    let mut donor_viol = 0;
    let mut flag_bad = 0;
    let mut both = 0;
    for s in &ds.samples {
        let swapped = s.audio_source != s.id;
        if swapped == s.correspondence_clean {
            flag_bad += 1;
        }
        if !s.correspondence_clean {
            mismatched += 1;
            if !s.label_clean() {
                both += 1;
            }
            if label_of.get(&s.audio_source) == Some(&s.true_label) {
                donor_viol += 1;
            }
        }
    }
    let mode = ds.noise.label.map(|(m, _)| m);
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    NoiseAudit {
        samples: n,
        label_mode: mode,
        requested_label_rate: ds.noise.label.map_or(0.0, |(_, r)| r),
        label_flips: flips,
        achieved_label_rate: frac(flips),
        asymmetric_violations: if mode == Some(LabelNoiseMode::Asymmetric) { asym } else { 0 },
        flip_map,
        requested_correspondence_rate: ds.noise.correspondence.unwrap_or(0.0),
        mismatched,
        achieved_correspondence_rate: frac(mismatched),
        donor_class_violations: donor_viol,
        flag_inconsistencies: flag_bad,
        both_noisy: both,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            classes: 5,
            per_class: 40,
            test_per_class: 4,
            visual_dim: 8,
            audio_dim: 6,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn two_classes_one_each() {
        let cfg = GeneratorConfig {
            classes: 2,
            per_class: 1,
            ..small(1)
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.train.true_labels(), vec![0, 1]);
        assert!(ds.train.samples.iter().all(|s| s.correspondence_clean && s.label_clean()));
    }

    #[test]
    fn degenerate_configs_rejected() {
        for cfg in [
            GeneratorConfig { classes: 1, ..small(1) },
            GeneratorConfig { per_class: 0, ..small(1) },
            GeneratorConfig { visual_dim: 1, ..small(1) },
            GeneratorConfig { class_separation: -1.0, ..small(1) },
            GeneratorConfig { modality_correlation: 1.5, ..small(1) },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn generation_is_reproducible() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn zero_rate_leaves_labels() {
        let mut ds = generate(&small(1)).unwrap().train;
        let before = ds.clone();
        inject_label_noise(&mut ds, LabelNoiseMode::Symmetric, 0.0, 5).unwrap();
        assert_eq!(ds.samples, before.samples);
        inject_correspondence_noise(&mut ds, 0.0, 5).unwrap();
        assert!(ds.samples.iter().all(|s| s.correspondence_clean));
    }

    #[test]
    fn full_asymmetric_rotation() {
        let cfg = GeneratorConfig { classes: 3, ..small(2) };
        let mut ds = generate(&cfg).unwrap().train;
        inject_label_noise(&mut ds, LabelNoiseMode::Asymmetric, 1.0, 9).unwrap();
        for s in &ds.samples {
            assert_eq!(s.observed_label, (s.true_label + 1) % 3);
        }
    }

    #[test]
    fn double_injection_rejected() {
        let mut ds = generate(&small(1)).unwrap().train;
        inject_label_noise(&mut ds, LabelNoiseMode::Symmetric, 0.2, 5).unwrap();
        assert!(matches!(
            inject_label_noise(&mut ds, LabelNoiseMode::Symmetric, 0.2, 5),
            Err(Error::AlreadyInjected("label"))
        ));
        inject_correspondence_noise(&mut ds, 0.2, 5).unwrap();
        assert!(matches!(
            inject_correspondence_noise(&mut ds, 0.2, 5),
            Err(Error::AlreadyInjected("correspondence"))
        ));
    }

    #[test]
    fn single_class_has_no_donor() {
        let mut ds = Dataset::new(1, 2, 2);
        for i in 0..4 {
            ds.samples.push(MultimodalSample {
                id: i,
                visual: vec![0.0; 2],
                audio: vec![0.0; 2],
                true_label: 0,
                observed_label: 0,
                correspondence_clean: true,
                audio_source: i,
            });
        }
        assert!(inject_correspondence_noise(&mut ds.clone(), 0.5, 1).is_err());
        assert!(inject_correspondence_noise(&mut ds, 0.0, 1).is_ok());
    }

    #[test]
    fn correspondence_noise_touches_only_audio() {
        let mut ds = generate(&small(5)).unwrap().train;
        let before = ds.clone();
        inject_correspondence_noise(&mut ds, 0.3, 17).unwrap();
        let a = audit(&ds);
        assert_eq!(a.mismatched, 60);
        assert_eq!(a.donor_class_violations, 0);
        assert_eq!(a.flag_inconsistencies, 0);
        for (x, y) in ds.samples.iter().zip(&before.samples) {
            assert_eq!(x.visual, y.visual);
            assert_eq!(x.true_label, y.true_label);
            assert_eq!(x.observed_label, y.observed_label);
            assert_eq!(x.correspondence_clean, x.audio == y.audio);
        }
    }

    #[test]
    fn disjoint_noise_sets_when_overlap_disabled() {
        let mut ds = generate(&small(6)).unwrap().train;
        let cfg = NoiseConfig {
            label_mode: LabelNoiseMode::Symmetric,
            label_rate: 0.4,
            correspondence_rate: 0.4,
            allow_overlap: false,
            ..Default::default()
        };
        apply_noise(&mut ds, &cfg).unwrap();
        let a = audit(&ds);
        assert_eq!(a.label_flips, 80);
        assert_eq!(a.mismatched, 80);
        assert_eq!(a.both_noisy, 0);
    }
}
