//! k-means base learner and external clustering scores.
//!
//! | score | definition |
//! |-------|------------|
//! | [`clustering_accuracy`] | best one-to-one cluster→class mapping, matched fraction |
//! | [`nmi`] | `MI(pred, truth) / max(H(pred), H(truth))` |

mod hungarian;
mod kmeans;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hungarian::{max_weight_matching, min_cost_assignment};
pub use kmeans::{kmeans, kmeans_restarts, KMeansResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label vectors differ in length: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no instances to score")]
    Empty,
    #[error("k-means needs n >= k, got n = {n}, k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub acc: f64,
    pub nmi: f64,
}

impl ClusterMetrics {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self, MetricsError> {
        Ok(Self {
            acc: clustering_accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
        })
    }
}

fn check(pred: &[usize], truth: &[usize]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Maps arbitrary label values to `0..distinct`, in sorted order.
fn dense(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let ids: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    let values = ids.keys().copied().collect();
    (labels.iter().map(|l| ids[l]).collect(), values)
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
    let (p, pv) = dense(pred);
    let (t, tv) = dense(truth);
    let mut table = vec![vec![0.0; tv.len()]; pv.len()];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1.0;
    }
    (table, pv, tv)
}

/// Optimal one-to-one mapping from predicted cluster ids to class ids.
/// Clusters left unmatched (more clusters than classes) are absent.
pub fn best_mapping(pred: &[usize], truth: &[usize]) -> Result<HashMap<usize, usize>, MetricsError> {
    check(pred, truth)?;
    let (table, pv, tv) = contingency(pred, truth);
    Ok(max_weight_matching(&table)
        .into_iter()
        .map(|(i, j)| (pv[i], tv[j]))
        .collect())
}

/// Fraction of instances whose class equals the image of their cluster
/// under the best one-to-one mapping.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    let (table, _, _) = contingency(pred, truth);
    let matched: f64 = max_weight_matching(&table)
        .into_iter()
        .map(|(i, j)| table[i][j])
        .sum();
    Ok(matched / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with max-entropy normalization. Two
/// single-cluster partitions score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    let n = pred.len() as f64;
    let (table, _, _) = contingency(pred, truth);
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_truth = entropy(col_sums.iter().copied(), n);
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                mi += (c / n) * ((c * n) / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    let denom = h_pred.max(h_truth);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}
