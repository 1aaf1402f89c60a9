//! Accuracy, ranking and distribution summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fraction of rows whose argmax equals the label.
pub fn top1(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    topk(logits, labels, 1)
}

/// Fraction of rows whose label is among the `k` largest entries. A label
/// tied with the k-th largest value counts only if fewer than k entries are
/// strictly larger and it is not beaten on index among the ties.
pub fn topk(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let (n, c) = logits.dims2("topk")?;
    if labels.len() != n {
        return Err(Error::shape("topk", format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("topk logits"));
    }
    let mut hits = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidLabel { label: y, classes: c });
        }
        let row = logits.row_slice(i);
        let v = row[y];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &x)| x > v || (x == v && j < y))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

pub fn label_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 1.0;
    }
    let hit = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hit as f64 / pred.len() as f64
}

/// Area under the ROC curve of `scores` for separating positives from
/// negatives (Mann-Whitney form, ties count half). `None` if either class
/// is absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&t| positive[t]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Mean of `xs` over the entries where `mask` equals `want`.
pub fn masked_mean(xs: &[f64], mask: &[bool], want: bool) -> Option<f64> {
    let sel: Vec<f64> = xs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .map(|(&x, _)| x)
        .collect();
    mean(&sel)
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into
/// the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() { 0.0 } else { b };
            let b = (b.max(0.0) as usize).min(counts.len() - 1);
            counts[b] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (0..=self.counts.len()).map(|i| self.lo + w * i as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top1_and_top5() {
        let l = Tensor::from_rows(&[vec![0.1, 0.9, 0.0], vec![0.5, 0.2, 0.3]]).unwrap();
        assert_eq!(top1(&l, &[1, 0]).unwrap(), 1.0);
        assert_eq!(top1(&l, &[1, 2]).unwrap(), 0.5);
        assert_eq!(topk(&l, &[1, 2], 2).unwrap(), 1.0);
        assert_eq!(topk(&l, &[2, 1], 3).unwrap(), 1.0);
        assert!(topk(&l, &[3, 0], 1).is_err());
    }

    #[test]
    fn tied_logits_resolve_by_index() {
        let l = Tensor::row(&[1.0, 1.0, 1.0]);
        assert_eq!(top1(&l, &[0]).unwrap(), 1.0);
        assert_eq!(top1(&l, &[1]).unwrap(), 0.0);
        assert_eq!(topk(&l, &[1], 2).unwrap(), 1.0);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
        // brute-force pair count with half credit for ties
        let s = [0.3, 0.1, 0.3, 0.7, 0.2, 0.7];
        let p = [true, false, false, true, true, false];
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if p[i] && !p[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc(&s, &p).unwrap() - num / den).abs() < 1e-15);
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[0.0, 0.05, 0.5, 0.99, 1.0, 1.5, -1.0], 0.0, 1.0, 10);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
        assert_eq!(h.counts[0], 3);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[9], 3);
        assert_eq!(h.edges().len(), 11);
    }

    #[test]
    fn masked_means() {
        let x = [1.0, 2.0, 3.0];
        let m = [true, false, true];
        assert_eq!(masked_mean(&x, &m, true), Some(2.0));
        assert_eq!(masked_mean(&x, &m, false), Some(2.0));
        assert_eq!(masked_mean(&x, &[true; 3], false), None);
    }
}
