//! The two-phase training loop: warm-up with plain cross-entropy, then per
//! epoch noise estimation, contrastive learning, KNN label rectification
//! and hybrid supervised learning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::correction::{knn_correct, CorrectedLabels};
use crate::dataset::{Dataset, MultimodalDataset};
use crate::error::{Error, Result};
use crate::losses::{
    category_loss_var, category_representation_var, cross_entropy_var, estimate_weights,
    hybrid_loss_var, instance_loss_var, per_sample_cross_entropy, probs_from_scores_var,
    prototype_scores_var, AssignmentMatrix, CorrespondenceWeights, FeatureCache, SimilarityConfig,
    SinkhornConfig,
};
use crate::metrics::{masked_mean, topk};
use crate::model::{Activation, Modality, Model, ModelConfig};
use crate::optim::{AdamConfig, AdamState};

/// Which parts of the contrastive phase run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    None,
    InsOnly,
    CatOnly,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::None, Variant::InsOnly, Variant::CatOnly, Variant::Full];

    pub fn uses_instance(self) -> bool {
        matches!(self, Variant::InsOnly | Variant::Full)
    }

    pub fn uses_category(self) -> bool {
        matches!(self, Variant::CatOnly | Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::InsOnly => "ins-only",
            Variant::CatOnly => "cat-only",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

/// γ is `initial` for global epochs before `switch_epoch` (0-based) and
/// `final` from then on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    pub switch_epoch: usize,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule {
            initial: 0.6,
            final_: 0.8,
            switch_epoch: 15,
        }
    }
}

impl GammaSchedule {
    pub fn constant(gamma: f64) -> Self {
        GammaSchedule {
            initial: gamma,
            final_: gamma,
            switch_epoch: 0,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if epoch < self.switch_epoch {
            self.initial
        } else {
            self.final_
        }
    }
}

/// Network widths; input dims and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub feature_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub classifier_hidden: usize,
    pub ae_hidden: usize,
    pub ae_activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        ArchConfig {
            feature_dim: m.feature_dim,
            encoder_hidden: m.encoder_hidden,
            classifier_hidden: m.classifier_hidden,
            ae_hidden: m.ae_hidden,
            ae_activation: m.ae_activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total epochs, warm-up included.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Adam step size of the supervised phase and warm-up.
    pub lr: f64,
    /// Adam step size of the contrastive phase.
    pub contrastive_lr: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub eps_v: f64,
    pub eps_a: f64,
    pub similar_cap: usize,
    pub sinkhorn: SinkhornConfig,
    pub knn_k: usize,
    pub gamma: GammaSchedule,
    pub variant: Variant,
    pub seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            warmup_epochs: 5,
            batch_size: 64,
            lr: 1e-3,
            contrastive_lr: 3e-3,
            tau1: 1.0,
            tau2: 0.1,
            eps_v: 0.5,
            eps_a: 0.5,
            similar_cap: 16,
            sinkhorn: SinkhornConfig::default(),
            knn_k: 10,
            gamma: GammaSchedule::default(),
            variant: Variant::Full,
            seed: 1,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("eps_v", self.eps_v), ("eps_a", self.eps_a)] {
            if v.is_nan() {
                return bad(format!("{name} is NaN"));
            }
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        let g = self.gamma;
        if !(0.0..=1.0).contains(&g.initial) || !(0.0..=1.0).contains(&g.final_) {
            return bad(format!("gamma values {} and {} must lie in [0, 1]", g.initial, g.final_));
        }
        if self.sinkhorn.reg.is_nan() || self.sinkhorn.reg <= 0.0 {
            return bad("sinkhorn reg must be positive".into());
        }
        AdamConfig::with_lr(self.lr).validate()?;
        AdamConfig::with_lr(self.contrastive_lr).validate()?;
        Ok(())
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            tau1: self.tau1,
            eps_a: self.eps_a,
            eps_v: self.eps_v,
            cap: self.similar_cap,
        }
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            visual_dim: data.visual_dim,
            audio_dim: data.audio_dim,
            classes: data.classes,
            feature_dim: self.arch.feature_dim,
            encoder_hidden: self.arch.encoder_hidden.clone(),
            classifier_hidden: self.arch.classifier_hidden,
            batch_size: self.batch_size,
            ae_hidden: self.arch.ae_hidden.min(self.batch_size),
            ae_activation: self.arch.ae_activation,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
    Baseline,
}

/// Metrics of one completed epoch. Loss columns that were not computed in
/// the epoch are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Number of epochs completed, warm-up included.
    pub epoch: usize,
    pub phase: Phase,
    pub gamma: f64,
    pub l_ins: Option<f64>,
    pub l_cat: Option<f64>,
    pub l_c: Option<f64>,
    pub l_s: f64,
    /// Accuracy against observed training labels.
    pub train_top1: f64,
    pub test_top1: f64,
    pub test_top5: f64,
    pub top5_degenerate: bool,
    pub observed_label_acc: f64,
    pub corrected_label_acc: Option<f64>,
    pub omega_v_clean: Option<f64>,
    pub omega_v_mismatched: Option<f64>,
    pub omega_a_clean: Option<f64>,
    pub omega_a_mismatched: Option<f64>,
    /// Mean training cross-entropy on observed labels, label-clean samples.
    pub ce_clean: Option<f64>,
    /// Same for samples whose observed label is wrong.
    pub ce_noisy: Option<f64>,
}

impl EpochRecord {
    /// `ce_noisy − ce_clean`, when both groups exist.
    pub fn ce_gap(&self) -> Option<f64> {
        Some(self.ce_noisy? - self.ce_clean?)
    }
}

/// Per-sample state of the final model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostic {
    pub id: u64,
    pub true_label: usize,
    pub observed_label: usize,
    pub corrected_label: usize,
    pub agreement: f64,
    pub label_clean: bool,
    pub correspondence_clean: bool,
    pub omega_v: f64,
    pub omega_a: f64,
    pub ce_observed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub samples: Vec<SampleDiagnostic>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn final_test_top1(&self) -> Option<f64> {
        self.last().map(|r| r.test_top1)
    }

    pub fn at_epoch(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub top1: f64,
    /// 1.0 with `top5_degenerate` set when there are at most 5 classes.
    pub top5: f64,
    pub top5_degenerate: bool,
}

pub fn evaluate(model: &Model, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let idx: Vec<usize> = (0..test.len()).collect();
    let logits = model.logits(&test.visual_batch(&idx), &test.audio_batch(&idx))?;
    let truth = test.true_labels();
    let top1 = topk(&logits, &truth, 1)?;
    let degenerate = test.classes <= 5;
    let top5 = if degenerate { 1.0 } else { topk(&logits, &truth, 5)? };
    Ok(Evaluation {
        top1,
        top5,
        top5_degenerate: degenerate,
    })
}

/// Labels the supervised phase fits.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// Plain cross-entropy on observed labels.
    Observed,
    /// Hybrid loss mixing observed and corrected labels with weight γ.
    Hybrid { corrected: &'a [usize], gamma: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContrastiveLosses {
    pub l_ins: Option<f64>,
    pub l_cat: Option<f64>,
    pub l_c: f64,
}

const STREAM_SUPERVISED: u64 = 1;
const STREAM_CONTRASTIVE: u64 = 2;

/// Model plus optimizer state, advanced one epoch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    supervised: AdamState,
    contrastive: AdamState,
    proto_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(train))?;
        Self::with_model(config, model)
    }

    pub fn with_model(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        if model.config().batch_size != config.batch_size {
            return Err(Error::InvalidConfig(format!(
                "model built for batch size {} but training uses {}",
                model.config().batch_size,
                config.batch_size
            )));
        }
        let supervised = AdamState::for_params(
            AdamConfig::with_lr(config.lr),
            model.params(),
            model.supervised_params(),
        );
        let contrastive = AdamState::for_params(
            AdamConfig::with_lr(config.contrastive_lr),
            model.params(),
            model.contrastive_params(),
        );
        let proto_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_C0DE);
        Ok(Trainer {
            config,
            model,
            supervised,
            contrastive,
            proto_rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn batches(&self, n: usize, stream: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        let seed = self
            .config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((self.epoch as u64) << 4 | stream);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Encoded features of every training sample under the current model.
    pub fn feature_cache(&self, train: &Dataset) -> Result<FeatureCache> {
        let idx: Vec<usize> = (0..train.len()).collect();
        let zv = self.model.encode(Modality::Visual, &train.visual_batch(&idx))?;
        let za = self.model.encode(Modality::Audio, &train.audio_batch(&idx))?;
        FeatureCache::new(&zv, &za)
    }

    pub fn estimate_weights(&self, cache: &FeatureCache) -> CorrespondenceWeights {
        estimate_weights(cache, &self.config.similarity())
    }

    pub fn correct_labels(&self, cache: &FeatureCache, train: &Dataset) -> Result<CorrectedLabels> {
        knn_correct(&cache.fused(), &train.observed_labels(), self.config.knn_k)
    }

    /// One pass of the supervised objective over shuffled batches; returns
    /// the per-batch losses.
    pub fn supervised_epoch(&mut self, train: &Dataset, targets: Targets) -> Result<Vec<f64>> {
        let observed = train.observed_labels();
        let mut losses = Vec::new();
        for (b, idx) in self.batches(train.len(), STREAM_SUPERVISED).into_iter().enumerate() {
            let diverged = |e: Error| Error::Diverged {
                phase: "supervised",
                epoch: self.epoch,
                batch: b,
                detail: e.to_string(),
            };
            let mut tape = Tape::new(self.model.params());
            let logits = self.logits_var(&mut tape, train, &idx).map_err(diverged)?;
            let obs: Vec<usize> = idx.iter().map(|&i| observed[i]).collect();
            let loss = match targets {
                Targets::Observed => cross_entropy_var(&mut tape, logits, &obs),
                Targets::Hybrid { corrected, gamma } => {
                    let cor: Vec<usize> = idx.iter().map(|&i| corrected[i]).collect();
                    hybrid_loss_var(&mut tape, logits, &obs, &cor, gamma).map(|t| t.total)
                }
            }
            .map_err(diverged)?;
            losses.push(tape.value(loss).item()?);
            let grads = tape.backward(loss).map_err(diverged)?;
            self.supervised
                .step(self.model.params_mut(), &grads)
                .map_err(diverged)?;
        }
        Ok(losses)
    }

    fn logits_var(&self, tape: &mut Tape, data: &Dataset, idx: &[usize]) -> Result<Var> {
        let xv = tape.constant(data.visual_batch(idx));
        let xa = tape.constant(data.audio_batch(idx));
        let zv = self.model.encode_var(tape, Modality::Visual, xv)?;
        let za = self.model.encode_var(tape, Modality::Audio, xa)?;
        self.model.classify_var(tape, zv, za)
    }

    /// One pass of `L_c` (restricted by the variant) over shuffled batches.
    /// The category terms skip the final partial batch.
    pub fn contrastive_epoch(
        &mut self,
        train: &Dataset,
        weights: &CorrespondenceWeights,
    ) -> Result<ContrastiveLosses> {
        let variant = self.config.variant;
        let (mut ins, mut cat, mut total) = (Vec::new(), Vec::new(), Vec::new());
        if variant == Variant::None {
            return Ok(ContrastiveLosses::default());
        }
        for (b, idx) in self.batches(train.len(), STREAM_CONTRASTIVE).into_iter().enumerate() {
            let diverged = |e: Error| Error::Diverged {
                phase: "contrastive",
                epoch: self.epoch,
                batch: b,
                detail: e.to_string(),
            };
            let mut tape = Tape::new(self.model.params());
            let terms = self
                .contrastive_graph(&mut tape, train, &idx, weights)
                .map_err(diverged)?;
            let (l_ins, l_cat) = terms;
            let loss = match (l_ins, l_cat) {
                (Some(a), Some(c)) => tape.add(a, c).map_err(diverged)?,
                (Some(a), None) => a,
                (None, Some(c)) => c,
                (None, None) => continue,
            };
            if let Some(v) = l_ins {
                ins.push(tape.value(v).item()?);
            }
            if let Some(v) = l_cat {
                cat.push(tape.value(v).item()?);
            }
            total.push(tape.value(loss).item()?);
            let grads = tape.backward(loss).map_err(diverged)?;
            self.contrastive
                .step(self.model.params_mut(), &grads)
                .map_err(diverged)?;
            self.model.normalize_prototypes(&mut self.proto_rng);
        }
        let avg = |v: &[f64]| crate::metrics::mean(v);
        Ok(ContrastiveLosses {
            l_ins: avg(&ins),
            l_cat: avg(&cat),
            l_c: avg(&total).unwrap_or(0.0),
        })
    }

    fn contrastive_graph(
        &self,
        tape: &mut Tape,
        train: &Dataset,
        idx: &[usize],
        weights: &CorrespondenceWeights,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let cfg = &self.config;
        let xv = tape.constant(train.visual_batch(idx));
        let xa = tape.constant(train.audio_batch(idx));
        let zv = self.model.encode_var(tape, Modality::Visual, xv)?;
        let za = self.model.encode_var(tape, Modality::Audio, xa)?;
        let mut l_ins = None;
        if cfg.variant.uses_instance() {
            let c = tape.param(self.model.params(), self.model.prototypes_id());
            let sv = prototype_scores_var(tape, zv, c)?;
            let sa = prototype_scores_var(tape, za, c)?;
            let targets =
                AssignmentMatrix::from_scores(tape.value(sv), tape.value(sa), &cfg.sinkhorn)?;
            let pv = probs_from_scores_var(tape, sv, cfg.tau2)?;
            let pa = probs_from_scores_var(tape, sa, cfg.tau2)?;
            l_ins = Some(instance_loss_var(tape, pv, pa, &targets, &weights.select(idx))?);
        }
        let mut l_cat = None;
        if cfg.variant.uses_category() && idx.len() == cfg.batch_size {
            let c = tape.param(self.model.params(), self.model.category_prototypes_id());
            let p_v = category_representation_var(tape, zv, c, cfg.tau2)?;
            let p_a = category_representation_var(tape, za, c, cfg.tau2)?;
            let (_, r_v) = self.model.autoencode_var(tape, p_v)?;
            let (_, r_a) = self.model.autoencode_var(tape, p_a)?;
            l_cat = Some(category_loss_var(tape, p_v, p_a, r_v, r_a, cfg.tau1)?.total);
        }
        Ok((l_ins, l_cat))
    }

    /// Runs the remaining warm-up epochs.
    pub fn warmup(&mut self, data: &MultimodalDataset) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::new();
        while self.epoch < self.config.warmup_epochs {
            out.push(self.plain_epoch(data, Phase::Warmup)?);
        }
        Ok(out)
    }

    /// Runs the framework for the epochs left after warm-up.
    pub fn run(&mut self, data: &MultimodalDataset) -> Result<Vec<EpochRecord>> {
        if self.epoch < self.config.warmup_epochs {
            return Err(Error::InvalidConfig(format!(
                "run called after {} of {} warm-up epochs",
                self.epoch, self.config.warmup_epochs
            )));
        }
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            out.push(self.main_epoch(data)?);
        }
        Ok(out)
    }

    /// Plain cross-entropy on observed labels for the remaining epochs.
    pub fn baseline(&mut self, data: &MultimodalDataset) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            out.push(self.plain_epoch(data, Phase::Baseline)?);
        }
        Ok(out)
    }

    fn plain_epoch(&mut self, data: &MultimodalDataset, phase: Phase) -> Result<EpochRecord> {
        let losses = self.supervised_epoch(&data.train, Targets::Observed)?;
        self.epoch += 1;
        let mut rec = self.record(data, phase, 0.0, &losses)?;
        rec.corrected_label_acc = None;
        Ok(rec)
    }

    fn main_epoch(&mut self, data: &MultimodalDataset) -> Result<EpochRecord> {
        let train = &data.train;
        let cache = self.feature_cache(train)?;
        let weights = self.estimate_weights(&cache);
        let con = self.contrastive_epoch(train, &weights)?;
        let corrected = self.correct_labels(&cache, train)?;
        let gamma = self.config.gamma.at(self.epoch);
        let losses = self.supervised_epoch(
            train,
            Targets::Hybrid {
                corrected: &corrected.labels,
                gamma,
            },
        )?;
        self.epoch += 1;
        let mut rec = self.record(data, Phase::Main, gamma, &losses)?;
        if self.config.variant != Variant::None {
            rec.l_ins = con.l_ins;
            rec.l_cat = con.l_cat;
            rec.l_c = Some(con.l_c);
        }
        rec.corrected_label_acc = Some(corrected.accuracy(&train.true_labels()));
        let flags = train.correspondence_flags();
        rec.omega_v_clean = masked_mean(&weights.visual, &flags, true);
        rec.omega_v_mismatched = masked_mean(&weights.visual, &flags, false);
        rec.omega_a_clean = masked_mean(&weights.audio, &flags, true);
        rec.omega_a_mismatched = masked_mean(&weights.audio, &flags, false);
        Ok(rec)
    }

    fn record(
        &self,
        data: &MultimodalDataset,
        phase: Phase,
        gamma: f64,
        losses: &[f64],
    ) -> Result<EpochRecord> {
        let train = &data.train;
        let idx: Vec<usize> = (0..train.len()).collect();
        let logits = self
            .model
            .logits(&train.visual_batch(&idx), &train.audio_batch(&idx))?;
        let observed = train.observed_labels();
        let ce = per_sample_cross_entropy(&logits, &observed)?;
        let clean = train.label_clean_flags();
        let eval = evaluate(&self.model, &data.test)?;
        Ok(EpochRecord {
            epoch: self.epoch,
            phase,
            gamma,
            l_ins: None,
            l_cat: None,
            l_c: None,
            l_s: crate::metrics::mean(losses).unwrap_or(0.0),
            train_top1: topk(&logits, &observed, 1)?,
            test_top1: eval.top1,
            test_top5: eval.top5,
            top5_degenerate: eval.top5_degenerate,
            observed_label_acc: train.observed_label_accuracy(),
            corrected_label_acc: None,
            omega_v_clean: None,
            omega_v_mismatched: None,
            omega_a_clean: None,
            omega_a_mismatched: None,
            ce_clean: masked_mean(&ce, &clean, true),
            ce_noisy: masked_mean(&ce, &clean, false),
        })
    }

    /// ω, corrected labels and cross-entropy of every training sample under
    /// the current model.
    pub fn diagnostics(&self, train: &Dataset) -> Result<Vec<SampleDiagnostic>> {
        let cache = self.feature_cache(train)?;
        let weights = self.estimate_weights(&cache);
        let corrected = self.correct_labels(&cache, train)?;
        let idx: Vec<usize> = (0..train.len()).collect();
        let logits = self
            .model
            .logits(&train.visual_batch(&idx), &train.audio_batch(&idx))?;
        let ce = per_sample_cross_entropy(&logits, &train.observed_labels())?;
        Ok(train
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| SampleDiagnostic {
                id: s.id,
                true_label: s.true_label,
                observed_label: s.observed_label,
                corrected_label: corrected.labels[i],
                agreement: corrected.agreement[i],
                label_clean: s.label_clean(),
                correspondence_clean: s.correspondence_clean,
                omega_v: weights.visual[i],
                omega_a: weights.audio[i],
                ce_observed: ce[i],
            })
            .collect())
    }
}

/// Warm-up followed by the framework; the report holds every epoch.
pub fn train(config: &TrainConfig, data: &MultimodalDataset) -> Result<(Model, TrainReport)> {
    let mut t = Trainer::new(config.clone(), &data.train)?;
    let mut records = t.warmup(data)?;
    records.extend(t.run(data)?);
    let samples = t.diagnostics(&data.train)?;
    Ok((t.into_model(), TrainReport { records, samples }))
}

/// Plain cross-entropy on observed labels for all epochs, same seed and
/// batch order as [`train`].
pub fn baseline(config: &TrainConfig, data: &MultimodalDataset) -> Result<(Model, TrainReport)> {
    let mut t = Trainer::new(config.clone(), &data.train)?;
    let mut records = t.warmup(data)?;
    records.extend(t.baseline(data)?);
    let samples = t.diagnostics(&data.train)?;
    Ok((t.into_model(), TrainReport { records, samples }))
}

pub fn ablate(
    config: &TrainConfig,
    data: &MultimodalDataset,
    variant: Variant,
) -> Result<(Model, TrainReport)> {
    let cfg = TrainConfig {
        variant,
        ..config.clone()
    };
    train(&cfg, data)
}
