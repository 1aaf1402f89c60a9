//! Trainable components: per-modality encoders, the fusion classifier, the
//! two prototype banks and the tied-weight category autoencoder.
//!
//! Everything lives in one [`ParamStore`] so a single tape can differentiate
//! any combination of components.

use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::container::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{l2_norm, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NTMC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Norm floor used when normalizing features inside the differentiable
/// losses; a dead (all-zero) feature row maps to the zero vector.
pub const FEATURE_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub classes: usize,
    /// Width `d` of the common feature space.
    pub feature_dim: usize,
    /// Hidden widths of each encoder, input to output.
    pub encoder_hidden: Vec<usize>,
    pub classifier_hidden: usize,
    /// Input width of the category autoencoder; equals the training batch size.
    pub batch_size: usize,
    pub ae_hidden: usize,
    pub ae_activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_dim: 32,
            audio_dim: 32,
            classes: 10,
            feature_dim: 32,
            encoder_hidden: vec![64],
            classifier_hidden: 64,
            batch_size: 64,
            ae_hidden: 32,
            ae_activation: Activation::Relu,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.visual_dim == 0 || self.audio_dim == 0 || self.feature_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.classes < 1 {
            return bad("model needs at least one class".into());
        }
        if self.encoder_hidden.contains(&0) || self.classifier_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        if self.ae_hidden == 0 || self.ae_hidden > self.batch_size {
            return bad(format!(
                "autoencoder hidden width {} must lie in 1..={}",
                self.ae_hidden, self.batch_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    visual: Vec<Layer>,
    audio: Vec<Layer>,
    classifier: [Layer; 2],
    prototypes: ParamId,
    category_prototypes: ParamId,
    ae_weight: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

fn he(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[fan_in, fan_out], (2.0 / fan_in as f64).sqrt(), rng)
}

fn random_unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::randn(&[rows, cols], 1.0, rng);
    for i in 0..rows {
        let r = t.row_slice_mut(i);
        let n = l2_norm(r);
        r.iter_mut().for_each(|v| *v /= n);
    }
    t
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();

        let encoder = |name: &str, input: usize, params: &mut ParamStore, rng: &mut ChaCha8Rng| {
            let mut widths = vec![input];
            widths.extend(&config.encoder_hidden);
            widths.push(config.feature_dim);
            widths
                .windows(2)
                .enumerate()
                .map(|(l, w)| Layer {
                    weight: params.add(format!("{name}.{l}.weight"), he(w[0], w[1], rng)),
                    bias: params.add(format!("{name}.{l}.bias"), Tensor::zeros(&[w[1]])),
                })
                .collect::<Vec<_>>()
        };
        let visual = encoder("visual", config.visual_dim, &mut params, &mut rng);
        let audio = encoder("audio", config.audio_dim, &mut params, &mut rng);

        let fused = 2 * config.feature_dim;
        let h = config.classifier_hidden;
        let classifier = [
            Layer {
                weight: params.add("classifier.0.weight", he(fused, h, &mut rng)),
                bias: params.add("classifier.0.bias", Tensor::zeros(&[h])),
            },
            Layer {
                weight: params.add(
                    "classifier.1.weight",
                    Tensor::randn(&[h, config.classes], (1.0 / h as f64).sqrt(), &mut rng),
                ),
                bias: params.add("classifier.1.bias", Tensor::zeros(&[config.classes])),
            },
        ];

        let prototypes = params.add(
            "prototypes.instance",
            random_unit_rows(config.classes, config.feature_dim, &mut rng),
        );
        let category_prototypes = params.add(
            "prototypes.category",
            random_unit_rows(config.classes, config.feature_dim, &mut rng),
        );
        let ae_weight = params.add(
            "autoencoder.weight",
            he(config.batch_size, config.ae_hidden, &mut rng),
        );

        Ok(Model {
            config,
            params,
            ids: Ids {
                visual,
                audio,
                classifier,
                prototypes,
                category_prototypes,
                ae_weight,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Same architecture with a replacement parameter store, which must
    /// match the current one name by name and shape by shape.
    pub fn with_params(&self, params: ParamStore) -> Result<Model> {
        let same = params.len() == self.params.len()
            && params
                .iter()
                .zip(self.params.iter())
                .all(|((_, n1, t1), (_, n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !same {
            return Err(Error::shape("with_params", "parameter layout differs"));
        }
        Ok(Model {
            config: self.config.clone(),
            params,
            ids: self.ids.clone(),
        })
    }

    pub fn prototypes_id(&self) -> ParamId {
        self.ids.prototypes
    }

    pub fn category_prototypes_id(&self) -> ParamId {
        self.ids.category_prototypes
    }

    pub fn ae_weight_id(&self) -> ParamId {
        self.ids.ae_weight
    }

    fn encoder_layers(&self, m: Modality) -> &[Layer] {
        match m {
            Modality::Visual => &self.ids.visual,
            Modality::Audio => &self.ids.audio,
        }
    }

    fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.config.visual_dim,
            Modality::Audio => self.config.audio_dim,
        }
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.ids
            .visual
            .iter()
            .chain(&self.ids.audio)
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.ids.classifier.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Parameters touched by the contrastive objective.
    pub fn contrastive_params(&self) -> Vec<ParamId> {
        let mut p = self.encoder_params();
        p.extend([
            self.ids.prototypes,
            self.ids.category_prototypes,
            self.ids.ae_weight,
        ]);
        p
    }

    /// Parameters touched by the supervised objective.
    pub fn supervised_params(&self) -> Vec<ParamId> {
        let mut p = self.encoder_params();
        p.extend(self.classifier_params());
        p
    }

    /// Records the encoder of modality `m` applied to the rows of `x`.
    /// Every layer, including the last, is followed by a ReLU.
    pub fn encode_var(&self, tape: &mut Tape, m: Modality, x: Var) -> Result<Var> {
        let want = self.input_dim(m);
        let got = tape.value(x).cols();
        if got != want {
            return Err(Error::shape(
                "encode",
                format!("{m:?} input has {got} features, encoder expects {want}"),
            ));
        }
        let mut h = x;
        for layer in self.encoder_layers(m) {
            let w = tape.param(&self.params, layer.weight);
            let b = tape.param(&self.params, layer.bias);
            let lin = tape.matmul(h, w)?;
            let lin = tape.add_row(lin, b)?;
            h = tape.relu(lin)?;
        }
        Ok(h)
    }

    /// Logits from the concatenation `[z_v | z_a]`; ReLU after the first
    /// layer only.
    pub fn classify_var(&self, tape: &mut Tape, zv: Var, za: Var) -> Result<Var> {
        let d = self.config.feature_dim;
        for z in [zv, za] {
            if tape.value(z).cols() != d {
                return Err(Error::shape(
                    "classify",
                    format!("feature width {} but model uses d = {d}", tape.value(z).cols()),
                ));
            }
        }
        let fused = tape.concat_cols(zv, za)?;
        let [l0, l1] = &self.ids.classifier;
        let w0 = tape.param(&self.params, l0.weight);
        let b0 = tape.param(&self.params, l0.bias);
        let h = tape.matmul(fused, w0)?;
        let h = tape.add_row(h, b0)?;
        let h = tape.relu(h)?;
        let w1 = tape.param(&self.params, l1.weight);
        let b1 = tape.param(&self.params, l1.bias);
        let out = tape.matmul(h, w1)?;
        tape.add_row(out, b1)
    }

    /// Tied-weight autoencoder over the `K × B` category representations:
    /// `U = act(P·W)`, `P′ = U·Wᵀ`.
    pub fn autoencode_var(&self, tape: &mut Tape, p: Var) -> Result<(Var, Var)> {
        let b = self.config.batch_size;
        let width = tape.value(p).cols();
        if width != b {
            return Err(Error::shape(
                "autoencode",
                format!("representation width {width} but autoencoder input is {b}"),
            ));
        }
        let w = tape.param(&self.params, self.ids.ae_weight);
        let pre = tape.matmul(p, w)?;
        let u = match self.config.ae_activation {
            Activation::Relu => tape.relu(pre)?,
            Activation::Linear => pre,
        };
        let wt = tape.transpose(w)?;
        let recon = tape.matmul(u, wt)?;
        Ok((u, recon))
    }

    pub fn encode(&self, m: Modality, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let xv = tape.constant(x.clone());
        let z = self.encode_var(&mut tape, m, xv)?;
        Ok(tape.value(z).clone())
    }

    pub fn classify(&self, zv: &Tensor, za: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let a = tape.constant(zv.clone());
        let b = tape.constant(za.clone());
        let out = self.classify_var(&mut tape, a, b)?;
        Ok(tape.value(out).clone())
    }

    /// Logits for paired raw inputs.
    pub fn logits(&self, visual: &Tensor, audio: &Tensor) -> Result<Tensor> {
        let zv = self.encode(Modality::Visual, visual)?;
        let za = self.encode(Modality::Audio, audio)?;
        self.classify(&zv, &za)
    }

    pub fn autoencode(&self, p: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new(&self.params);
        let pv = tape.constant(p.clone());
        let (u, r) = self.autoencode_var(&mut tape, pv)?;
        Ok((tape.value(u).clone(), tape.value(r).clone()))
    }

    /// Rescales both prototype banks to unit-norm rows. Returns the number of
    /// zero prototypes that had to be re-drawn.
    pub fn normalize_prototypes(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let mut redrawn = 0;
        for id in [self.ids.prototypes, self.ids.category_prototypes] {
            redrawn += normalize_bank(self.params.get_mut(id), rng);
        }
        redrawn
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.str(&serde_json::to_string(&self.config)?);
        w.u32(self.params.len() as u32);
        for (_, name, t) in self.params.iter() {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        container::write_file(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &w.into_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let payload = container::read_file(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let mut r = Reader::new(&payload, path);
        let config: ModelConfig = serde_json::from_str(&r.str()?)?;
        let mut model = Model::new(config)?;
        let n = r.u32()? as usize;
        if n != model.params.len() {
            return Err(r.format_error("parameter count does not match model config"));
        }
        for id in 0..n {
            let name = r.str()?;
            if name != model.params.name(id) {
                return Err(r.format_error(&format!("unexpected parameter `{name}`")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != model.params.get(id).shape() {
                return Err(r.format_error(&format!("shape mismatch for `{name}`")));
            }
            let len = model.params.get(id).len();
            let data = r.f64s(len)?;
            *model.params.get_mut(id) = Tensor::new(shape, data)?;
        }
        r.finish()?;
        Ok(model)
    }
}

/// Normalizes every row of a prototype bank in place; a zero row is
/// replaced by a seeded random unit vector.
pub fn normalize_bank(bank: &mut Tensor, rng: &mut ChaCha8Rng) -> usize {
    let (rows, cols) = (bank.rows(), bank.cols());
    let mut redrawn = 0;
    for i in 0..rows {
        let n = l2_norm(bank.row_slice(i));
        if n > 0.0 && n.is_finite() {
            bank.row_slice_mut(i).iter_mut().for_each(|v| *v /= n);
        } else {
            warn!("prototype {i} has zero norm; re-initializing");
            let fresh = random_unit_rows(1, cols, rng);
            bank.row_slice_mut(i).copy_from_slice(fresh.data());
            redrawn += 1;
        }
    }
    redrawn
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            visual_dim: 4,
            audio_dim: 3,
            classes: 3,
            feature_dim: 4,
            encoder_hidden: vec![5],
            classifier_hidden: 6,
            batch_size: 6,
            ae_hidden: 3,
            ae_activation: Activation::Relu,
            seed: 3,
        }
    }

    fn zero_all(model: &mut Model) {
        for id in 0..model.params.len() {
            let shape = model.params.get(id).shape().to_vec();
            *model.params.get_mut(id) = Tensor::zeros(&shape);
        }
    }

    #[test]
    fn zero_weights_give_zero_features_and_uniform_softmax() {
        let mut m = Model::new(tiny_config()).unwrap();
        zero_all(&mut m);
        let x = Tensor::randn(&[2, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let z = m.encode(Modality::Visual, &x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let logits = m.classify(&z, &z).unwrap();
        let p = logits.softmax_rows().unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn identity_single_layer_is_relu() {
        let cfg = ModelConfig {
            visual_dim: 4,
            feature_dim: 4,
            encoder_hidden: vec![],
            ..tiny_config()
        };
        let mut m = Model::new(cfg).unwrap();
        let w = m.ids.visual[0].weight;
        *m.params.get_mut(w) = Tensor::identity(4);
        let x = Tensor::new(vec![2, 4], vec![1.0, -2.0, 0.5, -0.1, -3.0, 0.0, 2.0, 4.0]).unwrap();
        let z = m.encode(Modality::Visual, &x).unwrap();
        assert_eq!(z, x.map(|v| v.max(0.0)));
    }

    #[test]
    fn batch_rows_keep_order() {
        let m = Model::new(tiny_config()).unwrap();
        let x = Tensor::randn(&[5, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let z = m.encode(Modality::Audio, &x).unwrap();
        assert_eq!(z.shape(), &[5, 4]);
        for i in 0..5 {
            let single = m.encode(Modality::Audio, &x.select_rows(&[i]).unwrap()).unwrap();
            assert_eq!(single.row_slice(0), z.row_slice(i));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = Model::new(tiny_config()).unwrap();
        assert!(m.encode(Modality::Visual, &Tensor::zeros(&[1, 3])).is_err());
        assert!(m.classify(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 4])).is_err());
        assert!(m.autoencode(&Tensor::zeros(&[3, 5])).is_err());
    }

    #[test]
    fn hand_computed_logits() {
        // d = 1, K = 3, classifier hidden 2.
        let cfg = ModelConfig {
            feature_dim: 1,
            classifier_hidden: 2,
            ..tiny_config()
        };
        let mut m = Model::new(cfg).unwrap();
        let [l0, l1] = m.ids.classifier.clone();
        *m.params.get_mut(l0.weight) = Tensor::new(vec![2, 2], vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        *m.params.get_mut(l0.bias) = Tensor::new(vec![2], vec![0.0, -1.0]).unwrap();
        *m.params.get_mut(l1.weight) =
            Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]).unwrap();
        *m.params.get_mut(l1.bias) = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        // concat = [3, 1]; hidden = relu([3+2, -3+0.5-1]) = [5, 0]
        // logits = [5, 0, -5] + bias
        let zv = Tensor::row(&[3.0]);
        let za = Tensor::row(&[1.0]);
        let logits = m.classify(&zv, &za).unwrap();
        assert_eq!(logits.data(), &[5.1, 0.2, -4.7]);
        // hidden = relu([1+6, -1+1.5-1]) = [7, 0] → [7, 0, -7] + bias
        let swapped = m.classify(&za, &zv).unwrap();
        assert_eq!(swapped.data(), &[7.1, 0.2, -6.7]);
    }

    #[test]
    fn prototype_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bank = Tensor::new(vec![2, 2], vec![3.0, 4.0, 0.6, 0.8]).unwrap();
        assert_eq!(normalize_bank(&mut bank, &mut rng), 0);
        assert_eq!(bank.data(), &[0.6, 0.8, 0.6, 0.8]);
        let snapshot = bank.clone();
        normalize_bank(&mut bank, &mut rng);
        assert_eq!(bank, snapshot);

        let mut zero = Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(normalize_bank(&mut zero, &mut rng), 1);
        for n in zero.row_norms().unwrap() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_prototype_argmax_invariant_after_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bank = random_unit_rows(4, 3, &mut rng);
        let z = [0.3, -0.2, 0.9];
        let before = bank.clone();
        bank.row_slice_mut(2).iter_mut().for_each(|v| *v *= 7.5);
        normalize_bank(&mut bank, &mut rng);
        let scores = |b: &Tensor| (0..4).map(|k| crate::tensor::dot(b.row_slice(k), &z)).collect::<Vec<_>>();
        assert_eq!(
            crate::tensor::argmax(&scores(&before)),
            crate::tensor::argmax(&scores(&bank))
        );
        for n in bank.row_norms().unwrap() {
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn autoencoder_edges() {
        let mut m = Model::new(ModelConfig {
            ae_activation: Activation::Linear,
            ae_hidden: 6,
            ..tiny_config()
        })
        .unwrap();
        let p = Tensor::randn(&[3, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(2));

        let ae = m.ids.ae_weight;
        *m.params.get_mut(ae) = Tensor::zeros(&[6, 6]);
        let (_, recon) = m.autoencode(&p).unwrap();
        assert!(recon.data().iter().all(|&v| v == 0.0));

        // A signed permutation has orthonormal columns.
        let mut q = Tensor::zeros(&[6, 6]);
        for (i, j, s) in [(0, 3, 1.0), (1, 0, -1.0), (2, 5, 1.0), (3, 1, 1.0), (4, 2, -1.0), (5, 4, 1.0)] {
            q.set(i, j, s);
        }
        *m.params.get_mut(ae) = q;
        let (u, recon) = m.autoencode(&p).unwrap();
        assert_eq!(u.shape(), &[3, 6]);
        for (a, b) in recon.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::new(tiny_config()).unwrap();
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
    }
}
