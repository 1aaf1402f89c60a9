//! KNN majority-vote label rectification over fused features.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FEATURE_NORM_EPS;
use crate::tensor::{dot, l2_norm, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectedLabels {
    pub labels: Vec<usize>,
    /// Fraction of the k neighbors that voted for the chosen label.
    pub agreement: Vec<f64>,
}

impl CorrectedLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of corrected labels equal to `truth`.
    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        if self.labels.is_empty() {
            return 1.0;
        }
        let hit = self.labels.iter().zip(truth).filter(|(a, b)| a == b).count();
        hit as f64 / self.labels.len() as f64
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn unit_rows(features: &Tensor) -> Tensor {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let r = out.row_slice_mut(i);
        let n = l2_norm(r).max(FEATURE_NORM_EPS);
        r.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Cosine distance `1 − cos` between rows, with zero rows treated as
/// orthogonal to everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot(a, b) / (na * nb)
}

/// Majority vote of the observed labels of each sample's k nearest
/// neighbors (itself excluded) under cosine distance. Neighbor ranking
/// breaks distance ties by lower index; vote ties go to the class with the
/// smaller summed neighbor distance, then to the lower class.
pub fn knn_correct(features: &Tensor, observed: &[usize], k: usize) -> Result<CorrectedLabels> {
    let (n, _) = features.dims2("knn_correct")?;
    if observed.len() != n {
        return Err(Error::shape(
            "knn_correct",
            format!("{} labels for {n} samples", observed.len()),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("knn k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::InvalidConfig(format!(
            "knn needs more than k = {k} samples, got {n}"
        )));
    }
    if !features.all_finite() {
        return Err(Error::NonFinite {
            context: "knn features".into(),
        });
    }
    let classes = observed.iter().max().map_or(0, |&m| m + 1);
    let unit = unit_rows(features);
    let mut labels = Vec::with_capacity(n);
    let mut agreement = Vec::with_capacity(n);
    let mut heap = BinaryHeap::with_capacity(k + 1);
    let mut votes = vec![0usize; classes];
    let mut dist_sum = vec![0.0f64; classes];
    for i in 0..n {
        heap.clear();
        let anchor = unit.row_slice(i);
        for j in (0..n).filter(|&j| j != i) {
            let cand = Candidate {
                dist: 1.0 - dot(unit.row_slice(j), anchor),
                index: j,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap holds k items") {
                heap.pop();
                heap.push(cand);
            }
        }
        votes.iter_mut().for_each(|v| *v = 0);
        dist_sum.iter_mut().for_each(|v| *v = 0.0);
        // ascending order keeps the distance sums reproducible
        for c in heap.clone().into_sorted_vec() {
            votes[observed[c.index]] += 1;
            dist_sum[observed[c.index]] += c.dist;
        }
        let mut best = 0;
        for c in 1..classes {
            let better = votes[c] > votes[best]
                || (votes[c] == votes[best] && dist_sum[c] < dist_sum[best]);
            if better {
                best = c;
            }
        }
        labels.push(best);
        agreement.push(votes[best] as f64 / k as f64);
    }
    Ok(CorrectedLabels { labels, agreement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unanimous_labels_stay() {
        let f = Tensor::randn(&[12, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let c = knn_correct(&f, &[2; 12], 3).unwrap();
        assert!(c.labels.iter().all(|&y| y == 2));
        assert!(c.agreement.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn k_one_takes_nearest_label() {
        let f = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![0.1, 0.9],
        ])
        .unwrap();
        let c = knn_correct(&f, &[0, 1, 2, 3], 1).unwrap();
        assert_eq!(c.labels, vec![1, 0, 3, 2]);
    }

    #[test]
    fn vote_tie_goes_to_closer_class() {
        // neighbors of 0: one label-1 point close, one label-2 point far
        let f = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.1],
            vec![1.0, 0.5],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let c = knn_correct(&f, &[0, 2, 1, 0], 2).unwrap();
        assert_eq!(c.labels[0], 2);
        assert_eq!(c.agreement[0], 0.5);
        // exact tie in both count and distance: lower class wins
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(knn_correct(&f, &[0, 2, 1], 2).unwrap().labels[0], 1);
    }

    #[test]
    fn rejects_small_pools() {
        let f = Tensor::zeros(&[3, 2]);
        assert!(knn_correct(&f, &[0, 0, 0], 3).is_err());
        assert!(knn_correct(&f, &[0, 0, 0], 0).is_err());
        assert!(knn_correct(&f, &[0, 0], 1).is_err());
    }

    #[test]
    fn permutation_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Tensor::randn(&[30, 5], 1.0, &mut rng);
        let y: Vec<usize> = (0..30).map(|i| (i * 7) % 4).collect();
        let base = knn_correct(&f, &y, 5).unwrap();
        let perm: Vec<usize> = (0..30).rev().collect();
        let fp = f.select_rows(&perm).unwrap();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let p = knn_correct(&fp, &yp, 5).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(p.labels[new], base.labels[old]);
        }
    }

    #[test]
    fn cosine_distance_cases() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
        assert!(cosine_distance(&[1.0, 1.0], &[2.0, 2.0]).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }
}
