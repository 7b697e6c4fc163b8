//! Clustering head: Student's t soft assignment, the sharpened target
//! distribution and the KL self-training loss.

use thiserror::Error;

use crate::metrics::{kmeans_restarts, MetricsError};
use crate::network::NetworkParams;
use crate::tensor::{ParamId, Tape, Tensor, TensorError, Var};

/// Floor applied to every probability before a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Degrees of freedom of the Student's t kernel. Fixed.
pub const DEGREES_OF_FREEDOM: f64 = 1.0;

pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("at least one cluster is required")]
    NoClusters,
    #[error("embedding has {found} columns, centroids have {expected}")]
    EmbeddingMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Handle to the `k × e` centroid matrix inside a [`NetworkParams`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Centroids {
    pub id: ParamId,
    pub k: usize,
}

impl NetworkParams {
    /// Installs centroids as trainable parameters, replacing any present.
    pub fn attach_centroids(&mut self, mu: Tensor) -> Centroids {
        let k = mu.rows();
        let c = match self.centroids {
            Some(c) => {
                self.store.set(c.id, mu.with_requires_grad(true));
                Centroids { id: c.id, k }
            }
            None => Centroids {
                id: self.store.push(mu),
                k,
            },
        };
        self.centroids = Some(c);
        c
    }

    pub fn centroid_values(&self) -> Option<&Tensor> {
        self.centroids.map(|c| self.store.get(c.id))
    }
}

/// `q_ij ∝ (1 + ‖z_i − μ_j‖²)⁻¹`, differentiable in both `z` and `mu`.
pub fn soft_assign(tape: &mut Tape, z: Var, mu: Var) -> Result<Var, ClusterError> {
    let (zs, ms) = (tape.shape(z).to_vec(), tape.shape(mu).to_vec());
    if ms.len() != 2 || ms[0] == 0 {
        return Err(ClusterError::NoClusters);
    }
    if zs.len() != 2 || zs[1] != ms[1] {
        return Err(ClusterError::EmbeddingMismatch {
            expected: ms[1],
            found: zs.get(1).copied().unwrap_or(0),
        });
    }
    let (n, k, e) = (zs[0], ms[0], ms[1]);
    let z3 = tape.reshape(z, &[n, 1, e])?;
    let m3 = tape.reshape(mu, &[1, k, e])?;
    let diff = tape.sub(z3, m3)?;
    let sq = tape.square(diff)?;
    let dist = tape.sum_axis(sq, 2)?;
    let dist = tape.reshape(dist, &[n, k])?;
    let denom = tape.add_scalar(dist, 1.0)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let kernel = tape.div(one, denom)?;
    Ok(tape.row_normalize(kernel)?)
}

/// Plain-value soft assignment of an embedding matrix.
pub fn soft_assign_values(z: &Tensor, mu: &Tensor) -> Result<Tensor, ClusterError> {
    let mut tape = Tape::new();
    let (zv, mv) = (tape.constant(z.clone()), tape.constant(mu.clone()));
    let q = soft_assign(&mut tape, zv, mv)?;
    Ok(tape.value(q).clone())
}

/// `p_ij ∝ q_ij² / f_j` with `f_j = Σ_i q_ij`. A constant: no gradient flows
/// back into `Q`.
pub fn target_distribution(q: &Tensor) -> Tensor {
    let (n, k) = (q.rows(), q.cols());
    let mut f = vec![0.0; k];
    for row in q.iter_rows() {
        for (fj, v) in f.iter_mut().zip(row) {
            *fj += v;
        }
    }
    let mut p = Vec::with_capacity(n * k);
    for row in q.iter_rows() {
        let w: Vec<f64> = row.iter().zip(&f).map(|(v, fj)| v * v / fj).collect();
        let s: f64 = w.iter().sum();
        p.extend(w.iter().map(|x| x / s));
    }
    Tensor::matrix(n, k, p).expect("n × k")
}

/// `KL(P‖Q) = Σ p log(p / q)` with `0 · log 0 = 0` and `q` floored at
/// [`LOG_FLOOR`].
pub fn clustering_loss(tape: &mut Tape, p: &Tensor, q: Var) -> Result<Var, TensorError> {
    if p.shape() != tape.shape(q) {
        return Err(TensorError::ShapeMismatch {
            op: "clustering_loss",
            left: p.shape().to_vec(),
            right: tape.shape(q).to_vec(),
        });
    }
    let log_p: Vec<f64> = p.values().iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
    let log_p = tape.constant(Tensor::new(p.shape().to_vec(), log_p)?);
    let pv = tape.constant(p.clone());
    let floored = tape.max_scalar(q, LOG_FLOOR)?;
    let log_q = tape.log(floored)?;
    let ratio = tape.sub(log_p, log_q)?;
    let terms = tape.mul(pv, ratio)?;
    tape.sum(terms)
}

/// Row-wise argmax, ties to the lowest index.
pub fn hard_assign(q: &Tensor) -> Vec<usize> {
    q.iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Best-inertia k-means centroids of the embedding over `restarts` runs.
pub fn init_centroids(z: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<Tensor, ClusterError> {
    if k == 0 {
        return Err(ClusterError::NoClusters);
    }
    Ok(kmeans_restarts(z, k, restarts, KMEANS_MAX_ITERS, seed)?.centroids)
}
