//! Lloyd's k-means from k-means++ seeding.

use rand::Rng;

use super::MetricsError;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// `k × d`
    pub centroids: Tensor,
    pub labels: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, first entry from the seeding.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(x: &Tensor, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centers = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (d, r) in d2.iter_mut().zip(x.iter_rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

/// Nearest-centroid labels (ties to the lowest index) and the resulting
/// per-point squared distances.
fn assign(x: &Tensor, centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    x.iter_rows()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = sq_dist(r, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// One k-means run. Stops at an assignment fixpoint or after `max_iters`
/// update steps. An empty cluster is reseeded at the point currently
/// farthest from its own centroid.
pub fn kmeans(x: &Tensor, k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult, MetricsError> {
    let n = x.rows();
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if n < k {
        return Err(MetricsError::TooFewPoints { n, k });
    }
    let d = x.cols();
    let mut rng = seed::rng(seed);
    let mut centers = plus_plus(x, k, &mut rng);
    let (mut labels, mut dists) = assign(x, &centers);
    let mut history = vec![dists.iter().sum::<f64>()];

    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in x.iter_rows().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                centers[j] = x.row(far).to_vec();
                dists[far] = 0.0;
            }
        }
        let (next, next_dists) = assign(x, &centers);
        history.push(next_dists.iter().sum());
        dists = next_dists;
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }

    let inertia = *history.last().expect("non-empty");
    let centroids = Tensor::matrix(k, d, centers.concat()).expect("k × d");
    Ok(KMeansResult {
        centroids,
        labels,
        inertia,
        history,
    })
}

/// Best-inertia result over `restarts` runs, each seeded from `seed`.
pub fn kmeans_restarts(
    x: &Tensor,
    k: usize,
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansResult, MetricsError> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans(x, k, max_iters, seed::derive_seed(seed, r as u64))?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
