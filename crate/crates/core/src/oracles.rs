//! Simulated side information: constraints derived from ground-truth
//! labels, from the mistakes of a k-means base learner, and from distances
//! in a reference embedding.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::constraints::{closure_and_entailment, ConstraintError, DifficultyVector, PairwiseSet, Triplet};
use crate::metrics::{best_mapping, kmeans_restarts, MetricsError};
use crate::seed;
use crate::tensor::Tensor;

/// Difficulty assigned to instances the base learner gets wrong.
pub const DIFFICULT: f64 = -0.1;
/// Difficulty assigned to instances the base learner gets right.
pub const EASY: f64 = 1.0;

pub const DIFFICULTY_RESTARTS: usize = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("at least one constraint must be requested")]
    ZeroCount,
    #[error("{count} pairs requested but only {max} exist")]
    TooManyPairs { count: usize, max: usize },
    #[error("triplets need at least 3 instances, got {0}")]
    TooFewPoints(usize),
    #[error("pool fractions {pos} + {neg} must lie in (0, 1]")]
    Fractions { pos: f64, neg: f64 },
    #[error("no anchor admits a triplet with strictly ordered distances")]
    NoValidTriplet,
    #[error("labels ({labels}) and rows ({rows}) differ in length")]
    LabelLength { labels: usize, rows: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// `count` distinct random pairs, must-linked when the labels agree and
/// cannot-linked otherwise, then closed under transitivity and entailment.
pub fn gen_pairwise(y: &[usize], count: usize, seed: u64) -> Result<PairwiseSet, OracleError> {
    if count == 0 {
        return Err(OracleError::ZeroCount);
    }
    let n = y.len();
    let max = n * n.saturating_sub(1) / 2;
    if count > max {
        return Err(OracleError::TooManyPairs { count, max });
    }
    let mut rng = seed::rng(seed);
    let mut pairs = BTreeSet::new();
    let mut order = Vec::with_capacity(count);
    if count * 2 > max {
        // dense request: sample pair ranks without replacement
        for r in index::sample(&mut rng, max, count) {
            order.push(unrank(r, n));
        }
    } else {
        while order.len() < count {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && pairs.insert((a.min(b), a.max(b))) {
                order.push((a.min(b), a.max(b)));
            }
        }
    }
    let mut set = PairwiseSet::default();
    for (a, b) in order {
        if y[a] == y[b] {
            set.add_must_link(a, b)?;
        } else {
            set.add_cannot_link(a, b)?;
        }
    }
    Ok(closure_and_entailment(&set)?)
}

/// The `r`-th pair `(a, b)`, `a < b`, in row-major order.
fn unrank(mut r: usize, n: usize) -> (usize, usize) {
    for a in 0..n {
        let row = n - 1 - a;
        if r < row {
            return (a, a + 1 + r);
        }
        r -= row;
    }
    unreachable!("rank below n(n-1)/2")
}

/// Runs k-means (best of 20 restarts), aligns clusters to classes by
/// optimal matching, and marks every misclustered instance difficult.
pub fn gen_difficulty(x: &Tensor, y: &[usize], k: usize, seed: u64) -> Result<DifficultyVector, OracleError> {
    if y.len() != x.rows() {
        return Err(OracleError::LabelLength {
            labels: y.len(),
            rows: x.rows(),
        });
    }
    let run = kmeans_restarts(x, k, DIFFICULTY_RESTARTS, crate::cluster::KMEANS_MAX_ITERS, seed)?;
    let mapping = best_mapping(&run.labels, y)?;
    let m = run
        .labels
        .iter()
        .zip(y)
        .map(|(c, t)| if mapping.get(c) == Some(t) { EASY } else { DIFFICULT })
        .collect();
    Ok(DifficultyVector::new(m)?)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pool_size(frac: f64, n: usize) -> usize {
    ((frac * n as f64).ceil() as usize).clamp(1, n - 1)
}

/// Candidate positives (nearest `⌈pos_frac·n⌉`) and negatives (farthest
/// `⌈neg_frac·n⌉`) for `anchor`, each paired with its squared distance.
pub fn triplet_pools(
    z: &Tensor,
    anchor: usize,
    pos_frac: f64,
    neg_frac: f64,
) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let n = z.rows();
    let mut others: Vec<(usize, f64)> = (0..n)
        .filter(|&i| i != anchor)
        .map(|i| (i, sq_dist(z.row(anchor), z.row(i))))
        .collect();
    others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let near = others[..pool_size(pos_frac, n)].to_vec();
    let far = others[others.len() - pool_size(neg_frac, n)..].to_vec();
    (near, far)
}

/// `count` triplets with random anchors; positives come from each anchor's
/// nearest pool and negatives from its farthest pool in `z`, and every
/// triplet satisfies `dist(a, p) < dist(a, n)`.
pub fn gen_triplets(
    z: &Tensor,
    count: usize,
    pos_frac: f64,
    neg_frac: f64,
    seed: u64,
) -> Result<Vec<Triplet>, OracleError> {
    let n = z.rows();
    if n < 3 {
        return Err(OracleError::TooFewPoints(n));
    }
    if count == 0 {
        return Err(OracleError::ZeroCount);
    }
    if !(pos_frac > 0.0 && neg_frac > 0.0 && pos_frac + neg_frac <= 1.0) {
        return Err(OracleError::Fractions {
            pos: pos_frac,
            neg: neg_frac,
        });
    }
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut failures = 0;
    while out.len() < count {
        let anchor = rng.random_range(0..n);
        let (near, far) = triplet_pools(z, anchor, pos_frac, neg_frac);
        let (p, dp) = near[rng.random_range(0..near.len())];
        let (q, dq) = far[rng.random_range(0..far.len())];
        if dp < dq && p != q {
            out.push(Triplet::new(anchor, p, q)?);
        } else {
            failures += 1;
            if failures > 100 * count {
                return Err(OracleError::NoValidTriplet);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_blobs, BlobSpec};

    #[test]
    fn exhaustive_small_case() {
        let set = gen_pairwise(&[0, 0, 1], 3, 1).unwrap();
        assert_eq!(set.must_links(), &BTreeSet::from([(0, 1)]));
        assert_eq!(set.cannot_links(), &BTreeSet::from([(0, 2), (1, 2)]));
        assert!(matches!(gen_pairwise(&[0, 0, 1], 4, 1), Err(OracleError::TooManyPairs { count: 4, max: 3 })));
    }

    #[test]
    fn unrank_covers_all_pairs() {
        let n = 6;
        let all: Vec<_> = (0..15).map(|r| unrank(r, n)).collect();
        let expect: Vec<_> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn pairwise_is_deterministic_and_closed() {
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let a = gen_pairwise(&y, 40, 9).unwrap();
        assert_eq!(a, gen_pairwise(&y, 40, 9).unwrap());
        assert_eq!(closure_and_entailment(&a).unwrap(), a);
        for &(i, j) in a.must_links() {
            assert_eq!(y[i], y[j]);
        }
        for &(i, j) in a.cannot_links() {
            assert_ne!(y[i], y[j]);
        }
    }

    #[test]
    fn difficulty_on_separable_blobs() {
        let ds = make_blobs(&BlobSpec {
            num_clusters: 3,
            per_cluster: 40,
            dim: 4,
            separation: 30.0,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let y = ds.y.clone().unwrap();
        let m = gen_difficulty(&ds.x, &y, 3, 0).unwrap();
        assert!(m.values().iter().all(|&v| v == EASY));

        // move one point onto another blob's center
        let mut x = ds.x.clone();
        let target = x.row(50).to_vec();
        x.row_mut(0).copy_from_slice(&target);
        let m = gen_difficulty(&x, &y, 3, 0).unwrap();
        assert_eq!(m.values()[0], DIFFICULT);
        assert_eq!(m.values().iter().filter(|&&v| v == DIFFICULT).count(), 1);
    }

    #[test]
    fn triplet_pools_by_inspection() {
        let z = Tensor::matrix(3, 1, vec![0.0, 1.0, 10.0]).unwrap();
        let (near, far) = triplet_pools(&z, 0, 1.0 / 3.0, 1.0 / 3.0);
        assert_eq!(near, vec![(1, 1.0)]);
        assert_eq!(far, vec![(2, 100.0)]);
        let t = gen_triplets(&z, 5, 1.0 / 3.0, 1.0 / 3.0, 0).unwrap();
        for tr in &t {
            if tr.anchor == 0 {
                assert_eq!((tr.positive, tr.negative), (1, 2));
            }
        }
    }

    #[test]
    fn triplets_respect_metric() {
        let ds = make_blobs(&BlobSpec {
            per_cluster: 30,
            dim: 3,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let t = gen_triplets(&ds.x, 200, 0.05, 0.05, 3).unwrap();
        assert_eq!(t, gen_triplets(&ds.x, 200, 0.05, 0.05, 3).unwrap());
        for tr in t {
            let d = |i: usize| sq_dist(ds.x.row(tr.anchor), ds.x.row(i));
            assert!(d(tr.positive) < d(tr.negative));
        }
        assert!(matches!(
            gen_triplets(&Tensor::zeros(&[2, 1]).unwrap(), 1, 0.1, 0.1, 0),
            Err(OracleError::TooFewPoints(2))
        ));
    }
}
