//! Objectives of the two training phases.
//!
//! Instance level: features are scored against the shared instance
//! prototypes, each modality's balanced Sinkhorn assignment supervises the
//! other modality's cluster probabilities, and every sample's two terms are
//! weighted by its estimated correspondence probability ω.
//!
//! Category level: per-class response vectors over the batch are passed
//! through the tied-weight autoencoder and contrasted against the
//! reconstructions, within and across modalities.
//!
//! Sinkhorn targets and ω are computed from detached values and enter the
//! tape as constants.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::FEATURE_NORM_EPS;
use crate::tensor::{dot, l2_norm, log_sum_exp, Tensor};

/// Floor applied inside `log` for cross-entropy terms over probabilities.
pub const CE_LOG_FLOOR: f64 = 1e-12;

/// `(1/τ1)·cos(a, b)`.
pub fn scaled_cosine(a: &[f64], b: &[f64], tau1: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "scaled_cosine",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("scaled_cosine"));
    }
    Ok(dot(a, b) / (na * nb) / tau1)
}

/// Row-normalized copies of both modalities' features for one pass over a
/// sample pool. Zero rows stay zero and have cosine 0 with everything.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub visual: Tensor,
    pub audio: Tensor,
}

impl FeatureCache {
    pub fn new(visual: &Tensor, audio: &Tensor) -> Result<Self> {
        let (n, _) = visual.dims2("FeatureCache")?;
        let (n2, _) = audio.dims2("FeatureCache")?;
        if n != n2 {
            return Err(Error::shape(
                "FeatureCache",
                format!("{n} visual rows but {n2} audio rows"),
            ));
        }
        Ok(FeatureCache {
            visual: unit_rows(visual),
            audio: unit_rows(audio),
        })
    }

    pub fn len(&self) -> usize {
        self.visual.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[ẑ_v | ẑ_a]` rows, the input of label rectification.
    pub fn fused(&self) -> Tensor {
        self.visual
            .concat_cols(&self.audio)
            .expect("rows checked at construction")
    }
}

fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for i in 0..t.rows() {
        let r = out.row_slice_mut(i);
        let n = l2_norm(r).max(FEATURE_NORM_EPS);
        r.iter_mut().for_each(|v| *v /= n);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub tau1: f64,
    /// Gating threshold on audio similarity for the visual set `J^v`.
    pub eps_a: f64,
    /// Gating threshold on visual similarity for the audio set `J^a`.
    pub eps_v: f64,
    /// Maximum members kept per set, highest gating similarity first.
    pub cap: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            tau1: 1.0,
            eps_a: 0.5,
            eps_v: 0.5,
            cap: 16,
        }
    }
}

/// `J_i^v` and `J_i^a` for one sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarSets {
    /// Samples whose audio resembles sample i's audio.
    pub visual: Vec<usize>,
    /// Samples whose visual resembles sample i's visual.
    pub audio: Vec<usize>,
}

fn gated_neighbors(unit: &Tensor, i: usize, tau1: f64, eps: f64, cap: usize) -> Vec<usize> {
    let anchor = unit.row_slice(i);
    let mut hits: Vec<(f64, usize)> = (0..unit.rows())
        .filter(|&j| j != i)
        .map(|j| (dot(unit.row_slice(j), anchor) / tau1, j))
        .filter(|&(s, _)| s > eps)
        .collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    hits.truncate(cap);
    hits.into_iter().map(|(_, j)| j).collect()
}

/// Similar-sample sets of sample `i`. The visual set is gated by audio
/// similarity and the audio set by visual similarity; `i` is never its own
/// member.
pub fn similar_sets(cache: &FeatureCache, i: usize, cfg: &SimilarityConfig) -> SimilarSets {
    SimilarSets {
        visual: gated_neighbors(&cache.audio, i, cfg.tau1, cfg.eps_a, cfg.cap),
        audio: gated_neighbors(&cache.visual, i, cfg.tau1, cfg.eps_v, cfg.cap),
    }
}

/// Per-sample estimated correspondence probabilities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceWeights {
    pub visual: Vec<f64>,
    pub audio: Vec<f64>,
}

impl CorrespondenceWeights {
    pub fn ones(n: usize) -> Self {
        CorrespondenceWeights {
            visual: vec![1.0; n],
            audio: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.visual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        CorrespondenceWeights {
            visual: idx.iter().map(|&i| self.visual[i]).collect(),
            audio: idx.iter().map(|&i| self.audio[i]).collect(),
        }
    }
}

fn mean_similarity(unit: &Tensor, i: usize, set: &[usize], tau1: f64) -> f64 {
    if set.is_empty() {
        return 1.0;
    }
    let anchor = unit.row_slice(i);
    let s: f64 = set.iter().map(|&j| dot(unit.row_slice(j), anchor) / tau1).sum();
    (s / set.len() as f64).clamp(0.0, 1.0)
}

/// ω for every sample: mean within-modality similarity to the members of
/// the cross-gated similar set, clamped to `[0, 1]`; an empty set gives 1.
pub fn correspondence_weights(
    cache: &FeatureCache,
    sets: &[SimilarSets],
    tau1: f64,
) -> CorrespondenceWeights {
    let visual = sets
        .iter()
        .enumerate()
        .map(|(i, s)| mean_similarity(&cache.visual, i, &s.visual, tau1))
        .collect();
    let audio = sets
        .iter()
        .enumerate()
        .map(|(i, s)| mean_similarity(&cache.audio, i, &s.audio, tau1))
        .collect();
    CorrespondenceWeights { visual, audio }
}

/// Similar sets and ω for the whole pool in one call.
pub fn estimate_weights(cache: &FeatureCache, cfg: &SimilarityConfig) -> CorrespondenceWeights {
    let sets: Vec<SimilarSets> = (0..cache.len()).map(|i| similar_sets(cache, i, cfg)).collect();
    correspondence_weights(cache, &sets, cfg.tau1)
}

/// Records cosine scores `ẑ_i · c_k` of feature rows against unit
/// prototypes.
pub fn prototype_scores_var(tape: &mut Tape, features: Var, prototypes: Var) -> Result<Var> {
    let z = tape.normalize_rows(features, FEATURE_NORM_EPS)?;
    let ct = tape.transpose(prototypes)?;
    tape.matmul(z, ct)
}

/// Row-wise softmax of `scores / τ2`.
pub fn probs_from_scores_var(tape: &mut Tape, scores: Var, tau2: f64) -> Result<Var> {
    let s = tape.scale(scores, 1.0 / tau2)?;
    tape.softmax_rows(s)
}

/// `B × K` cluster probabilities of feature rows against unit prototypes.
pub fn cluster_probs(features: &Tensor, prototypes: &Tensor, tau2: f64) -> Result<Tensor> {
    if features.row_norms()?.contains(&0.0) {
        return Err(Error::ZeroVector("cluster_probs"));
    }
    if features.cols() != prototypes.cols() {
        return Err(Error::shape(
            "cluster_probs",
            format!(
                "feature width {} vs prototype width {}",
                features.cols(),
                prototypes.cols()
            ),
        ));
    }
    let mut tape = Tape::constants_only();
    let f = tape.constant(features.clone());
    let c = tape.constant(prototypes.clone());
    let s = prototype_scores_var(&mut tape, f, c)?;
    let p = probs_from_scores_var(&mut tape, s, tau2)?;
    Ok(tape.value(p).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMode {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    /// Minimum number of row/column rounds.
    pub iterations: usize,
    pub reg: f64,
    pub mode: AssignmentMode,
    /// Rounds continue past `iterations` until every column sum is within
    /// this distance of `B/K`.
    pub tolerance: f64,
    pub max_rounds: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            iterations: 3,
            reg: 0.05,
            mode: AssignmentMode::Soft,
            tolerance: 1e-6,
            max_rounds: 10_000,
        }
    }
}

/// Balanced assignment of `B` samples to `K` clusters. Soft mode returns a
/// plan with unit row sums and column sums `B/K`; hard mode one-hot encodes
/// the row-wise argmax of that plan.
pub fn sinkhorn_assign(scores: &Tensor, cfg: &SinkhornConfig) -> Result<Tensor> {
    let (b, k) = scores.dims2("sinkhorn_assign")?;
    if b == 0 || k == 0 {
        return Err(Error::Empty("sinkhorn scores"));
    }
    if !scores.all_finite() {
        return Err(Error::NonFinite {
            context: "sinkhorn input scores".into(),
        });
    }
    if cfg.reg.is_nan() || cfg.reg <= 0.0 {
        return Err(Error::InvalidConfig(format!("sinkhorn reg {} must be positive", cfg.reg)));
    }
    let col_target = b as f64 / k as f64;
    let log_col_target = col_target.ln();
    // log-domain iterates of exp(scores / reg)
    let mut lq = scores.scale(1.0 / cfg.reg);
    let mut col = vec![0.0; b];
    let mut round = 0;
    loop {
        for j in 0..k {
            for (i, c) in col.iter_mut().enumerate() {
                *c = lq.get(i, j);
            }
            let shift = log_col_target - log_sum_exp(&col);
            for i in 0..b {
                lq.set(i, j, lq.get(i, j) + shift);
            }
        }
        for i in 0..b {
            let row = lq.row_slice_mut(i);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        round += 1;
        if !lq.all_finite() {
            return Err(Error::NonFinite {
                context: format!("sinkhorn round {round}"),
            });
        }
        if round >= cfg.iterations {
            let worst = (0..k)
                .map(|j| {
                    let s: f64 = (0..b).map(|i| lq.get(i, j).exp()).sum();
                    (s - col_target).abs()
                })
                .fold(0.0, f64::max);
            if worst <= cfg.tolerance {
                break;
            }
            if round >= cfg.max_rounds {
                return Err(Error::SinkhornNotConverged(round));
            }
        }
    }
    let q = lq.map(f64::exp);
    Ok(match cfg.mode {
        AssignmentMode::Soft => q,
        AssignmentMode::Hard => {
            let mut h = Tensor::zeros(&[b, k]);
            for (i, j) in q.argmax_rows()?.into_iter().enumerate() {
                h.set(i, j, 1.0);
            }
            h
        }
    })
}

/// Detached targets `q(y|v_i)` and `q(y|a_i)` for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub visual: Tensor,
    pub audio: Tensor,
    pub mode: AssignmentMode,
}

impl AssignmentMatrix {
    pub fn from_scores(scores_v: &Tensor, scores_a: &Tensor, cfg: &SinkhornConfig) -> Result<Self> {
        Ok(AssignmentMatrix {
            visual: sinkhorn_assign(scores_v, cfg)?,
            audio: sinkhorn_assign(scores_a, cfg)?,
            mode: cfg.mode,
        })
    }
}

/// Weighted swapped-prediction loss
/// `(1/B) Σ_i [ω_i^v·CE(q_a,i, p_v,i) + ω_i^a·CE(q_v,i, p_a,i)]`.
pub fn instance_loss_var(
    tape: &mut Tape,
    probs_v: Var,
    probs_a: Var,
    targets: &AssignmentMatrix,
    weights: &CorrespondenceWeights,
) -> Result<Var> {
    let (b, k) = tape.value(probs_v).dims2("instance_loss")?;
    for (name, t) in [
        ("audio probabilities", tape.value(probs_a)),
        ("visual targets", &targets.visual),
        ("audio targets", &targets.audio),
    ] {
        if t.shape() != [b, k] {
            return Err(Error::shape(
                "instance_loss",
                format!("{name} {:?}, expected [{b}, {k}]", t.shape()),
            ));
        }
    }
    if weights.len() != b {
        return Err(Error::shape(
            "instance_loss",
            format!("{} weights for batch of {b}", weights.len()),
        ));
    }
    let weighted = |q: &Tensor, w: &[f64]| {
        let mut t = q.clone();
        for (i, &wi) in w.iter().enumerate() {
            t.row_slice_mut(i).iter_mut().for_each(|v| *v *= wi);
        }
        t
    };
    // audio targets supervise visual probabilities and vice versa
    let wv = tape.constant(weighted(&targets.audio, &weights.visual));
    let wa = tape.constant(weighted(&targets.visual, &weights.audio));
    let lv = tape.log(probs_v, CE_LOG_FLOOR)?;
    let la = tape.log(probs_a, CE_LOG_FLOOR)?;
    let tv = tape.mul(wv, lv)?;
    let ta = tape.mul(wa, la)?;
    let s = tape.add(tv, ta)?;
    let s = tape.sum(s)?;
    tape.scale(s, -1.0 / b as f64)
}

pub fn instance_loss(
    probs_v: &Tensor,
    probs_a: &Tensor,
    targets: &AssignmentMatrix,
    weights: &CorrespondenceWeights,
) -> Result<f64> {
    let mut tape = Tape::constants_only();
    let pv = tape.constant(probs_v.clone());
    let pa = tape.constant(probs_a.clone());
    let l = instance_loss_var(&mut tape, pv, pa, targets, weights)?;
    tape.value(l).item()
}

/// `K × B` category representations of one modality: softmax responses of
/// each sample against the category prototypes, transposed so row `k` holds
/// class `k`'s response across the batch.
pub fn category_representation_var(
    tape: &mut Tape,
    features: Var,
    category_prototypes: Var,
    tau2: f64,
) -> Result<Var> {
    let s = prototype_scores_var(tape, features, category_prototypes)?;
    let p = probs_from_scores_var(tape, s, tau2)?;
    tape.transpose(p)
}

/// Value-level `(P_v, P_a)`; `None` when the batch is not the configured
/// width, which means the category loss is skipped for it.
pub fn category_representations(
    features_v: &Tensor,
    features_a: &Tensor,
    category_prototypes: &Tensor,
    tau2: f64,
    batch_size: usize,
) -> Result<Option<(Tensor, Tensor)>> {
    if features_v.rows() != batch_size || features_a.rows() != batch_size {
        return Ok(None);
    }
    let mut tape = Tape::constants_only();
    let c = tape.constant(category_prototypes.clone());
    let fv = tape.constant(features_v.clone());
    let fa = tape.constant(features_a.clone());
    let pv = category_representation_var(&mut tape, fv, c, tau2)?;
    let pa = category_representation_var(&mut tape, fa, c, tau2)?;
    Ok(Some((tape.value(pv).clone(), tape.value(pa).clone())))
}

/// Tape handles of the four category-level terms and their mean.
#[derive(Clone, Copy, Debug)]
pub struct CategoryTerms {
    pub l_rv: Var,
    pub l_ra: Var,
    pub l_cv: Var,
    pub l_ca: Var,
    pub total: Var,
}

/// `−(1/K) Σ_i log softmax_i` where anchor row i is contrasted against all
/// rows of `positives` and `others` (scaled cosine), and the positive is
/// row i of `positives`.
fn contrast(tape: &mut Tape, anchor: Var, positives: Var, others: Var, tau1: f64) -> Result<Var> {
    let k = tape.value(anchor).rows();
    let a = tape.normalize_rows(anchor, FEATURE_NORM_EPS)?;
    let p = tape.normalize_rows(positives, FEATURE_NORM_EPS)?;
    let o = tape.normalize_rows(others, FEATURE_NORM_EPS)?;
    let pt = tape.transpose(p)?;
    let ot = tape.transpose(o)?;
    let s_pos = tape.matmul(a, pt)?;
    let s_oth = tape.matmul(a, ot)?;
    let logits = tape.concat_cols(s_pos, s_oth)?;
    let logits = tape.scale(logits, 1.0 / tau1)?;
    let ls = tape.log_softmax_rows(logits)?;
    let mut mask = Tensor::zeros(&[k, 2 * k]);
    for i in 0..k {
        mask.set(i, i, 1.0);
    }
    let mask = tape.constant(mask);
    let picked = tape.mul(mask, ls)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / k as f64)
}

/// Intra-modal (`l_rv`, `l_ra`) and inter-modal (`l_cv`, `l_ca`)
/// category contrastive terms and `L_cat`, their mean.
pub fn category_loss_var(
    tape: &mut Tape,
    p_v: Var,
    p_a: Var,
    recon_v: Var,
    recon_a: Var,
    tau1: f64,
) -> Result<CategoryTerms> {
    let shape = tape.value(p_v).shape().to_vec();
    for v in [p_a, recon_v, recon_a] {
        if tape.value(v).shape() != shape.as_slice() {
            return Err(Error::shape(
                "category_loss",
                format!("{:?} vs {:?}", tape.value(v).shape(), shape),
            ));
        }
    }
    for v in [p_v, p_a, recon_v, recon_a] {
        if tape.value(v).row_norms()?.contains(&0.0) {
            return Err(Error::ZeroVector("category_loss"));
        }
    }
    let l_rv = contrast(tape, p_v, recon_v, recon_a, tau1)?;
    let l_ra = contrast(tape, p_a, recon_a, recon_v, tau1)?;
    let l_cv = contrast(tape, recon_v, recon_a, recon_v, tau1)?;
    let l_ca = contrast(tape, recon_a, recon_v, recon_a, tau1)?;
    let s = tape.add(l_cv, l_ca)?;
    let s = tape.add(s, l_rv)?;
    let s = tape.add(s, l_ra)?;
    let total = tape.scale(s, 0.25)?;
    Ok(CategoryTerms {
        l_rv,
        l_ra,
        l_cv,
        l_ca,
        total,
    })
}

/// Values of the category-level terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryLoss {
    pub l_rv: f64,
    pub l_ra: f64,
    pub l_cv: f64,
    pub l_ca: f64,
    pub l_cat: f64,
}

pub fn category_loss(
    p_v: &Tensor,
    p_a: &Tensor,
    recon_v: &Tensor,
    recon_a: &Tensor,
    tau1: f64,
) -> Result<CategoryLoss> {
    let mut tape = Tape::constants_only();
    let [a, b, c, d] = [p_v, p_a, recon_v, recon_a].map(|t| tape.constant(t.clone()));
    let t = category_loss_var(&mut tape, a, b, c, d, tau1)?;
    Ok(CategoryLoss {
        l_rv: tape.value(t.l_rv).item()?,
        l_ra: tape.value(t.l_ra).item()?,
        l_cv: tape.value(t.l_cv).item()?,
        l_ca: tape.value(t.l_ca).item()?,
        l_cat: tape.value(t.total).item()?,
    })
}

/// `L_c = L_ins + L_cat`.
pub fn contrastive_loss(l_ins: f64, l_cat: f64) -> f64 {
    l_ins + l_cat
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {rows} rows", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    Ok(())
}

/// Mean softmax cross-entropy of `logits` against integer labels.
pub fn cross_entropy_var(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, k) = tape.value(logits).dims2("cross_entropy")?;
    check_labels(labels, k, b)?;
    let mut onehot = Tensor::zeros(&[b, k]);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let ls = tape.log_softmax_rows(logits)?;
    let m = tape.constant(onehot);
    let picked = tape.mul(m, ls)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / b.max(1) as f64)
}

/// Tape handles of the hybrid supervised objective and its two parts.
#[derive(Clone, Copy, Debug)]
pub struct HybridTerms {
    pub observed: Var,
    pub corrected: Var,
    pub total: Var,
}

/// `L_s = (1 − γ)·CE(observed) + γ·CE(corrected)`.
pub fn hybrid_loss_var(
    tape: &mut Tape,
    logits: Var,
    observed: &[usize],
    corrected: &[usize],
    gamma: f64,
) -> Result<HybridTerms> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} outside [0, 1]")));
    }
    let a = cross_entropy_var(tape, logits, observed)?;
    let b = cross_entropy_var(tape, logits, corrected)?;
    let wa = tape.scale(a, 1.0 - gamma)?;
    let wb = tape.scale(b, gamma)?;
    let total = tape.add(wa, wb)?;
    Ok(HybridTerms {
        observed: a,
        corrected: b,
        total,
    })
}

pub fn hybrid_loss(logits: &Tensor, observed: &[usize], corrected: &[usize], gamma: f64) -> Result<f64> {
    let mut tape = Tape::constants_only();
    let l = tape.constant(logits.clone());
    let t = hybrid_loss_var(&mut tape, l, observed, corrected, gamma)?;
    tape.value(t.total).item()
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::constants_only();
    let l = tape.constant(logits.clone());
    let ce = cross_entropy_var(&mut tape, l, labels)?;
    tape.value(ce).item()
}

/// Per-row cross-entropy, used for diagnostics.
pub fn per_sample_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (b, k) = logits.dims2("per_sample_cross_entropy")?;
    check_labels(labels, k, b)?;
    Ok((0..b)
        .map(|i| log_sum_exp(logits.row_slice(i)) - logits.get(i, labels[i]))
        .collect())
}

/// All scalar objectives of one batch or epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ins: f64,
    pub l_rv: f64,
    pub l_ra: f64,
    pub l_cv: f64,
    pub l_ca: f64,
    pub l_cat: f64,
    pub l_c: f64,
    pub ce_observed: f64,
    pub ce_corrected: f64,
    pub l_s: f64,
}
