//! Alternating training: an instance branch over random mini-batches and a
//! constraint branch over batches of must-links, cannot-links and
//! triplets.

mod experiments;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, hard_assign, init_centroids, soft_assign, soft_assign_values, target_distribution, ClusterError};
use crate::constraints::{
    cannot_link_loss, cardinality_bound_loss, cardinality_equality_loss, closure_and_entailment,
    evaluate_horn_rules_on_labels, global_size_loss, instance_difficulty_loss, must_link_loss, triplet_loss,
    CardinalityRule, ConstraintError, ConstraintSet, DifficultyForm, DifficultyVector, HornRule, Pair,
    PairwiseSet, Triplet,
};
use crate::datasets::Dataset;
use crate::metrics::{ClusterMetrics, MetricsError};
use crate::network::{NetworkError, NetworkParams};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};

pub use experiments::{
    cluster_size_report, constraint_seed, negative_ratio_study, run_pair, size_entry, sweep_constraints, Aggregate,
    ExperimentReport, PairedOutcome, RunRecord, SizeEntry, SizeReport,
};

const CENTROID_STREAM: u64 = 1;
const INSTANCE_STREAM: u64 = 2;
const CONSTRAINT_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss in the {branch} branch at epoch {epoch}, batch {batch}")]
    Diverged {
        branch: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("dataset has no labels")]
    Unlabeled,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Oracle(#[from] crate::oracles::OracleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    /// Maximum number of epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub constraint_batch_size: usize,
    /// Weight on the must-link loss in the must-link batches.
    pub ml_weight: f64,
    /// Triplet margin.
    pub theta: f64,
    pub use_difficulty: bool,
    pub use_global_size: bool,
    pub difficulty_form: DifficultyForm,
    pub learning_rate: f64,
    /// k-means restarts for centroid initialization.
    pub restarts: usize,
    /// Stop once fewer than this fraction of hard assignments change
    /// between consecutive epochs.
    pub tolerance: Option<f64>,
    /// Run the random-batch branch. Off only for ablations.
    pub instance_branch: bool,
    /// Pair the must-link loss with reconstruction. Off only for ablations.
    pub ml_reconstruction: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            epochs: 30,
            batch_size: 256,
            constraint_batch_size: 256,
            ml_weight: 0.1,
            theta: 0.1,
            use_difficulty: false,
            use_global_size: false,
            difficulty_form: DifficultyForm::Intent,
            learning_rate: 1e-3,
            restarts: 20,
            tolerance: None,
            instance_branch: true,
            ml_reconstruction: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.constraint_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.ml_weight > 0.0) {
            return bad("ml weight must be positive");
        }
        if !(self.theta > 0.0) {
            return bad("triplet margin must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.tolerance.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return bad("tolerance must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Per-epoch averages of every loss component plus assignment statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub clustering: f64,
    pub reconstruction: f64,
    pub difficulty: f64,
    pub global_size: f64,
    pub cardinality: f64,
    /// Mean over instance batches of the summed instance-branch loss.
    pub instance_total: f64,
    pub must_link: f64,
    pub cannot_link: f64,
    pub triplet: f64,
    /// Fraction of instances whose hard assignment changed this epoch.
    pub churn: f64,
    pub occupied_clusters: usize,
    pub active_pairs: usize,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: NetworkParams,
    pub history: Vec<EpochRecord>,
    pub labels: Vec<usize>,
    pub metrics: Option<ClusterMetrics>,
    /// Pairwise constraints in force at the end, horn consequents included.
    pub active_pairs: PairwiseSet,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Embeds the data and hard-assigns every instance.
pub fn predict(net: &NetworkParams, x: &Tensor) -> Result<(Tensor, Vec<usize>), TrainError> {
    let mu = net
        .centroid_values()
        .ok_or_else(|| TrainError::Config("model has no centroids".into()))?;
    let z = net.embed(x)?;
    let q = soft_assign_values(&z, mu)?;
    let labels = hard_assign(&q);
    Ok((q, labels))
}

/// Attaches k-means centroids of the current embedding unless the network
/// already carries centroids.
pub fn ensure_centroids(net: &mut NetworkParams, x: &Tensor, config: &TrainConfig) -> Result<(), TrainError> {
    if net.centroids.is_none() {
        let z = net.embed(x)?;
        let mu = init_centroids(&z, config.k, config.restarts, seed::derive_seed(config.seed, CENTROID_STREAM))?;
        net.attach_centroids(mu);
    }
    Ok(())
}

fn occupied(labels: &[usize]) -> usize {
    labels.iter().collect::<std::collections::BTreeSet<_>>().len()
}

struct Prepared {
    pairs: PairwiseSet,
    difficulty: Option<DifficultyVector>,
    triplets: Vec<Triplet>,
    pending_rules: Vec<HornRule>,
}

fn prepare(constraints: &ConstraintSet, n: usize, config: &TrainConfig) -> Result<Prepared, TrainError> {
    constraints.validate(n)?;
    let difficulty = if config.use_difficulty && !constraints.difficulty.is_empty() {
        Some(DifficultyVector::from_sparse(n, &constraints.difficulty)?)
    } else if config.use_difficulty {
        return Err(TrainError::Config("difficulty loss enabled without difficulty constraints".into()));
    } else {
        None
    };
    Ok(Prepared {
        pairs: closure_and_entailment(&constraints.pairwise)?,
        difficulty,
        triplets: constraints.triplets.clone(),
        pending_rules: constraints.horn_rules.clone(),
    })
}

fn check_finite(value: f64, branch: &'static str, epoch: usize, batch: usize) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged { branch, epoch, batch })
    }
}

fn diverged(branch: &'static str, epoch: usize, batch: usize) -> impl Fn(TrainError) -> TrainError {
    move |e| match e {
        TrainError::Tensor(TensorError::NonFinite { .. })
        | TrainError::Network(NetworkError::Tensor(TensorError::NonFinite { .. }))
        | TrainError::Cluster(ClusterError::Tensor(TensorError::NonFinite { .. }))
        | TrainError::Constraint(ConstraintError::Tensor(TensorError::NonFinite { .. })) => {
            TrainError::Diverged { branch, epoch, batch }
        }
        other => other,
    }
}

/// Encodes `rows` of `x` and returns `(x_batch, z, q)` vars on the tape.
fn forward(
    tape: &mut Tape,
    net: &NetworkParams,
    x: &Tensor,
    rows: &[usize],
) -> Result<(Var, Var, Var), TrainError> {
    let centroids = net
        .centroids
        .ok_or_else(|| TrainError::Config("model has no centroids".into()))?;
    let xb = tape.constant(x.select_rows(rows)?);
    let z = net.encode(tape, xb)?;
    let mu = tape.param(&net.store, centroids.id);
    let q = soft_assign(tape, z, mu)?;
    Ok((xb, z, q))
}

/// `Σ_r w_r ‖x_r − x̂_r‖²`
fn weighted_reconstruction(tape: &mut Tape, x: Var, x_hat: Var, weights: Vec<f64>) -> Result<Var, TensorError> {
    let n = weights.len();
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.square(diff)?;
    let per_row = tape.sum_axis(sq, 1)?;
    let w = tape.constant(Tensor::vector(weights)?);
    let weighted = tape.mul(per_row, w)?;
    debug_assert_eq!(tape.shape(weighted), [n]);
    tape.sum(weighted)
}

#[derive(Default)]
struct InstanceLosses {
    clustering: f64,
    reconstruction: f64,
    difficulty: f64,
    global_size: f64,
    cardinality: f64,
    total: f64,
}

/// Instance-branch loss of one random batch. Per-instance terms are batch
/// means; the size and cardinality terms are batch-level already.
fn instance_loss(
    tape: &mut Tape,
    net: &NetworkParams,
    x: &Tensor,
    rows: &[usize],
    prepared: &Prepared,
    constraints: &ConstraintSet,
    config: &TrainConfig,
) -> Result<(Var, InstanceLosses), TrainError> {
    let (xb, z, q) = forward(tape, net, x, rows)?;
    let inv_n = 1.0 / rows.len() as f64;
    let p = target_distribution(tape.value(q));
    let kl = cluster::clustering_loss(tape, &p, q)?;
    let l_c = tape.scale(kl, inv_n)?;
    let x_hat = net.decode(tape, z)?;
    let l_r = crate::network::reconstruction_loss(tape, xb, x_hat)?;
    let mut total = tape.add(l_c, l_r)?;
    let mut parts = InstanceLosses {
        clustering: tape.value(l_c).item(),
        reconstruction: tape.value(l_r).item(),
        ..Default::default()
    };
    if let Some(m) = &prepared.difficulty {
        let mb: Vec<f64> = rows.iter().map(|&r| m.values()[r]).collect();
        let l = instance_difficulty_loss(tape, q, &mb, config.difficulty_form)?;
        let l = tape.scale(l, inv_n)?;
        parts.difficulty = tape.value(l).item();
        total = tape.add(total, l)?;
    }
    // a batch smaller than k carries no size signal
    if config.use_global_size && rows.len() >= config.k {
        let l = global_size_loss(tape, q)?;
        parts.global_size = tape.value(l).item();
        total = tape.add(total, l)?;
    }
    let scale = rows.len() as f64 / x.rows() as f64;
    for rule in &constraints.cardinality.rules {
        let l = match rule {
            CardinalityRule::Equality { groups: [a, b] } => {
                let ma = constraints.cardinality.mask(a, rows)?;
                let mb = constraints.cardinality.mask(b, rows)?;
                cardinality_equality_loss(tape, q, &ma, &mb)?
            }
            CardinalityRule::Bounds { group, lower, upper } => {
                let mask = constraints.cardinality.mask(group, rows)?;
                cardinality_bound_loss(tape, q, &mask, lower * scale, upper * scale)?
            }
        };
        parts.cardinality += tape.value(l).item();
        total = tape.add(total, l)?;
    }
    parts.total = tape.value(total).item();
    Ok((total, parts))
}

enum ConstraintBatch {
    MustLink(Vec<Pair>),
    CannotLink(Vec<Pair>),
    Triplet(Vec<Triplet>),
}

impl ConstraintBatch {
    fn kind(&self) -> usize {
        match self {
            Self::MustLink(_) => 0,
            Self::CannotLink(_) => 1,
            Self::Triplet(_) => 2,
        }
    }

    fn rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = match self {
            Self::MustLink(p) | Self::CannotLink(p) => p.iter().flat_map(|&(a, b)| [a, b]).collect(),
            Self::Triplet(t) => t.iter().flat_map(|t| [t.anchor, t.positive, t.negative]).collect(),
        };
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

fn constraint_batches(prepared: &Prepared, size: usize, rng: &mut impl RngCore) -> Vec<ConstraintBatch> {
    let mut ml: Vec<Pair> = prepared.pairs.must_links().iter().copied().collect();
    let mut cl: Vec<Pair> = prepared.pairs.cannot_links().iter().copied().collect();
    let mut tr = prepared.triplets.clone();
    ml.shuffle(rng);
    cl.shuffle(rng);
    tr.shuffle(rng);
    let mut batches: Vec<ConstraintBatch> = ml
        .chunks(size)
        .map(|c| ConstraintBatch::MustLink(c.to_vec()))
        .chain(cl.chunks(size).map(|c| ConstraintBatch::CannotLink(c.to_vec())))
        .chain(tr.chunks(size).map(|c| ConstraintBatch::Triplet(c.to_vec())))
        .collect();
    batches.shuffle(rng);
    batches
}

/// Loss of one constraint batch: the sum of the per-constraint losses, so
/// its gradient is the sum of the per-constraint gradients. A must-link
/// pair contributes `ℓ_R(pair) + λ·ℓ_ML(pair)` with `ℓ_R(pair)` the mean
/// reconstruction error of its two instances.
fn constraint_loss(
    tape: &mut Tape,
    net: &NetworkParams,
    x: &Tensor,
    batch: &ConstraintBatch,
    config: &TrainConfig,
) -> Result<(Var, [f64; 3]), TrainError> {
    let rows = batch.rows();
    let local = |i: usize| rows.binary_search(&i).expect("row present");
    let (xb, z, q) = forward(tape, net, x, &rows)?;
    let mut parts = [0.0; 3];
    let loss = match batch {
        ConstraintBatch::MustLink(pairs) => {
            let lp: Vec<Pair> = pairs.iter().map(|&(a, b)| (local(a), local(b))).collect();
            let ml = must_link_loss(tape, q, &lp)?;
            parts[0] = tape.value(ml).item();
            let ml = tape.scale(ml, config.ml_weight)?;
            if config.ml_reconstruction {
                let mut weights = vec![0.0; rows.len()];
                for &(a, b) in &lp {
                    weights[a] += 0.5;
                    weights[b] += 0.5;
                }
                let x_hat = net.decode(tape, z)?;
                let rec = weighted_reconstruction(tape, xb, x_hat, weights)?;
                tape.add(rec, ml)?
            } else {
                ml
            }
        }
        ConstraintBatch::CannotLink(pairs) => {
            let lp: Vec<Pair> = pairs.iter().map(|&(a, b)| (local(a), local(b))).collect();
            let cl = cannot_link_loss(tape, q, &lp)?;
            parts[1] = tape.value(cl).item();
            cl
        }
        ConstraintBatch::Triplet(triples) => {
            let lt: Vec<Triplet> = triples
                .iter()
                .map(|t| Triplet {
                    anchor: local(t.anchor),
                    positive: local(t.positive),
                    negative: local(t.negative),
                })
                .collect();
            let l = triplet_loss(tape, q, &lt, config.theta)?;
            parts[2] = tape.value(l).item();
            l
        }
    };
    Ok((loss, parts))
}

/// Trains a pretrained network on `dataset` under `constraints`.
///
/// Centroids already attached to `net` are used as the initial centroids;
/// otherwise they come from k-means on the initial embedding. With an empty
/// constraint set and no extra losses the constraint branch never runs and
/// the run is identical to plain self-training under the same seed.
pub fn train(
    dataset: &Dataset,
    constraints: &ConstraintSet,
    mut net: NetworkParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let x = &dataset.x;
    let n = x.rows();
    if n < config.k {
        return Err(TrainError::Metrics(MetricsError::TooFewPoints { n, k: config.k }));
    }
    let mut prepared = prepare(constraints, n, config)?;
    ensure_centroids(&mut net, x, config)?;
    if net.centroids.map(|c| c.k) != Some(config.k) {
        return Err(TrainError::Config(format!(
            "model has {} centroids, k = {}",
            net.centroids.map_or(0, |c| c.k),
            config.k
        )));
    }

    // One optimizer state per batch kind: the branches have gradient
    // scales orders of magnitude apart and must not share moment estimates.
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&net.store, adam_config);
    let mut constraint_adam: [AdamState; 3] = std::array::from_fn(|_| AdamState::new(&net.store, adam_config));
    let mut instance_rng = seed::stream_rng(config.seed, INSTANCE_STREAM);
    let mut constraint_rng = seed::stream_rng(config.seed, CONSTRAINT_STREAM);
    let (_, mut labels) = predict(&net, x)?;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        let mut record = EpochRecord {
            epoch,
            ..Default::default()
        };
        if config.instance_branch {
            order.shuffle(&mut instance_rng);
            let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
            for (b, rows) in batches.iter().enumerate() {
                net.store.zero_grad();
                let mut tape = Tape::new();
                let (loss, parts) = instance_loss(&mut tape, &net, x, rows, &prepared, constraints, config)
                    .map_err(diverged("instance", epoch, b))?;
                check_finite(parts.total, "instance", epoch, b)?;
                tape.backward_into(loss, &mut net.store)
                    .map_err(|e| diverged("instance", epoch, b)(e.into()))?;
                adam.step(&mut net.store)?;
                let w = 1.0 / batches.len() as f64;
                record.clustering += w * parts.clustering;
                record.reconstruction += w * parts.reconstruction;
                record.difficulty += w * parts.difficulty;
                record.global_size += w * parts.global_size;
                record.cardinality += w * parts.cardinality;
                record.instance_total += w * parts.total;
            }
        }

        let batches = constraint_batches(&prepared, config.constraint_batch_size, &mut constraint_rng);
        for (b, batch) in batches.iter().enumerate() {
            net.store.zero_grad();
            let mut tape = Tape::new();
            let (loss, parts) =
                constraint_loss(&mut tape, &net, x, batch, config).map_err(diverged("constraint", epoch, b))?;
            check_finite(tape.value(loss).item(), "constraint", epoch, b)?;
            tape.backward_into(loss, &mut net.store)
                .map_err(|e| diverged("constraint", epoch, b)(e.into()))?;
            constraint_adam[batch.kind()].step(&mut net.store)?;
            record.must_link += parts[0];
            record.cannot_link += parts[1];
            record.triplet += parts[2];
        }

        let (_, next) = predict(&net, x)?;
        if !prepared.pending_rules.is_empty() {
            let fired = evaluate_horn_rules_on_labels(&prepared.pending_rules, &next);
            if !fired.is_empty() {
                let mut pairs = prepared.pairs.clone();
                for p in &fired {
                    pairs.add(p.kind, p.a, p.b)?;
                }
                prepared.pairs = closure_and_entailment(&pairs)?;
                prepared.pending_rules.retain(|r| !fired.contains(&r.consequent));
            }
        }
        record.churn = next.iter().zip(&labels).filter(|(a, b)| a != b).count() as f64 / n as f64;
        record.occupied_clusters = occupied(&next);
        record.active_pairs = prepared.pairs.len();
        if let Some(y) = &dataset.y {
            let m = ClusterMetrics::compute(&next, y)?;
            record.acc = Some(m.acc);
            record.nmi = Some(m.nmi);
        }
        labels = next;
        let stop = config.tolerance.is_some_and(|t| record.churn < t);
        history.push(record);
        if stop {
            break;
        }
    }

    let ids: Vec<_> = net.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        net.store.get_mut(id).clear_grad();
    }
    let metrics = match &dataset.y {
        Some(y) => Some(ClusterMetrics::compute(&labels, y)?),
        None => None,
    };
    Ok(TrainOutcome {
        net,
        history,
        labels,
        metrics,
        active_pairs: prepared.pairs,
    })
}
