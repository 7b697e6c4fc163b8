//! Paired constrained/unconstrained studies and cluster-size reports.
//!
//! Reports are JSON lines: one record per run, then one aggregate per
//! (arm, constraint count), then a summary line.

use std::io::Write;

use serde::Serialize;

use super::{ensure_centroids, predict, train, TrainConfig, TrainError, TrainOutcome};
use crate::constraints::ConstraintSet;
use crate::datasets::Dataset;
use crate::network::NetworkParams;
use crate::oracles::gen_pairwise;
use crate::seed;

const CONSTRAINT_SEED_STREAM: u64 = 0xC0_5E7;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub kind: &'static str,
    pub arm: &'static str,
    pub seed: u64,
    pub constraint_count: usize,
    pub set_index: usize,
    /// Pairwise constraints after closure and entailment.
    pub active_constraints: usize,
    pub acc: f64,
    pub nmi: f64,
    pub epochs_to_converge: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub kind: &'static str,
    pub arm: &'static str,
    pub constraint_count: usize,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct Summary {
    kind: &'static str,
    runs: usize,
    constrained_runs: usize,
    negative_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Fraction of constrained runs scoring a lower accuracy than the
    /// unconstrained run they are paired with.
    pub negative_ratio: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ExperimentReport {
    /// Aggregates recomputed from `records`, grouped by arm and count in
    /// first-appearance order.
    pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
        let mut keys: Vec<(&'static str, usize)> = Vec::new();
        for r in records {
            if !keys.contains(&(r.arm, r.constraint_count)) {
                keys.push((r.arm, r.constraint_count));
            }
        }
        keys.into_iter()
            .map(|(arm, count)| {
                let group: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| r.arm == arm && r.constraint_count == count)
                    .collect();
                let acc: Vec<f64> = group.iter().map(|r| r.acc).collect();
                let nmi: Vec<f64> = group.iter().map(|r| r.nmi).collect();
                let (acc_mean, acc_std) = mean_std(&acc);
                let (nmi_mean, nmi_std) = mean_std(&nmi);
                Aggregate {
                    kind: "aggregate",
                    arm,
                    constraint_count: count,
                    runs: group.len(),
                    acc_mean,
                    acc_std,
                    nmi_mean,
                    nmi_std,
                }
            })
            .collect()
    }

    pub fn mean_acc(&self, arm: &str, count: usize) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.arm == arm && a.constraint_count == count)
            .map(|a| a.acc_mean)
    }

    pub fn write_jsonl(&self, out: &mut (impl Write + ?Sized)) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        for a in &self.aggregates {
            serde_json::to_writer(&mut *out, a)?;
            out.write_all(b"\n")?;
        }
        let summary = Summary {
            kind: "summary",
            runs: self.records.len(),
            constrained_runs: self.records.iter().filter(|r| r.arm == "constrained").count(),
            negative_ratio: self.negative_ratio,
        };
        serde_json::to_writer(&mut *out, &summary)?;
        out.write_all(b"\n")
    }
}

fn record(
    arm: &'static str,
    seed: u64,
    count: usize,
    set_index: usize,
    outcome: &TrainOutcome,
) -> Result<RunRecord, TrainError> {
    let m = outcome.metrics.ok_or(TrainError::Unlabeled)?;
    Ok(RunRecord {
        kind: "run",
        arm,
        seed,
        constraint_count: count,
        set_index,
        active_constraints: outcome.active_pairs.len(),
        acc: m.acc,
        nmi: m.nmi,
        epochs_to_converge: outcome.epochs_run(),
    })
}

#[derive(Clone, Debug)]
pub struct PairedOutcome {
    pub constrained: TrainOutcome,
    pub unconstrained: TrainOutcome,
}

/// Trains with and without `constraints` from the same network, the same
/// initial centroids and the same seed.
pub fn run_pair(
    dataset: &Dataset,
    constraints: &ConstraintSet,
    mut net: NetworkParams,
    config: &TrainConfig,
) -> Result<PairedOutcome, TrainError> {
    ensure_centroids(&mut net, &dataset.x, config)?;
    Ok(PairedOutcome {
        unconstrained: train(dataset, &ConstraintSet::default(), net.clone(), config)?,
        constrained: train(dataset, constraints, net, config)?,
    })
}

/// Seed of the `set`-th pairwise constraint set of size `count`.
pub fn constraint_seed(master: u64, count: usize, set: usize) -> u64 {
    seed::derive_seed(seed::derive_seed(master ^ CONSTRAINT_SEED_STREAM, count as u64), set as u64)
}

/// For every count, `sets_per_count` random pairwise constraint sets, each
/// trained from the shared initial centroids under the shared seed and
/// compared with the single unconstrained run.
pub fn sweep_constraints(
    dataset: &Dataset,
    mut net: NetworkParams,
    counts: &[usize],
    sets_per_count: usize,
    config: &TrainConfig,
) -> Result<ExperimentReport, TrainError> {
    let y = dataset.y.as_ref().ok_or(TrainError::Unlabeled)?;
    ensure_centroids(&mut net, &dataset.x, config)?;
    let baseline = train(dataset, &ConstraintSet::default(), net.clone(), config)?;
    let base = record("unconstrained", config.seed, 0, 0, &baseline)?;
    let mut records = vec![base.clone()];
    let mut worse = 0;
    let mut constrained_runs = 0;
    for &count in counts {
        for set_index in 0..sets_per_count {
            let mut constraints = ConstraintSet::default();
            if count > 0 {
                constraints.pairwise = gen_pairwise(y, count, constraint_seed(config.seed, count, set_index))?;
            }
            let outcome = train(dataset, &constraints, net.clone(), config)?;
            let r = record("constrained", config.seed, count, set_index, &outcome)?;
            if r.acc < base.acc {
                worse += 1;
            }
            constrained_runs += 1;
            records.push(r);
        }
    }
    let aggregates = ExperimentReport::aggregate(&records);
    Ok(ExperimentReport {
        records,
        aggregates,
        negative_ratio: if constrained_runs == 0 {
            0.0
        } else {
            worse as f64 / constrained_runs as f64
        },
    })
}

/// `num_sets` paired runs at one constraint count.
pub fn negative_ratio_study(
    dataset: &Dataset,
    net: NetworkParams,
    constraint_count: usize,
    num_sets: usize,
    config: &TrainConfig,
) -> Result<ExperimentReport, TrainError> {
    sweep_constraints(dataset, net, &[constraint_count], num_sets, config)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeEntry {
    pub kind: &'static str,
    pub model: String,
    pub counts: Vec<usize>,
    /// `max_c |count_c − n/k|`
    pub max_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeReport {
    pub entries: Vec<SizeEntry>,
}

impl SizeReport {
    pub fn write_jsonl(&self, out: &mut (impl Write + ?Sized)) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut *out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn size_entry(model: &str, labels: &[usize], k: usize) -> SizeEntry {
    let mut counts = vec![0; k];
    for &l in labels {
        counts[l] += 1;
    }
    let expected = labels.len() as f64 / k as f64;
    let max_deviation = counts
        .iter()
        .map(|&c| (c as f64 - expected).abs())
        .fold(0.0, f64::max);
    SizeEntry {
        kind: "cluster_sizes",
        model: model.to_string(),
        counts,
        max_deviation,
    }
}

/// Hard-assignment histogram of each named model on `dataset`.
pub fn cluster_size_report(models: &[(&str, &NetworkParams)], dataset: &Dataset) -> Result<SizeReport, TrainError> {
    let entries = models
        .iter()
        .map(|(name, net)| {
            let k = net
                .centroids
                .ok_or_else(|| TrainError::Config(format!("model {name} has no centroids")))?
                .k;
            let (_, labels) = predict(net, &dataset.x)?;
            Ok(size_entry(name, &labels, k))
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(SizeReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_histogram() {
        let e = size_entry("m", &[0, 1, 2, 0, 1, 2], 3);
        assert_eq!(e.counts, vec![2, 2, 2]);
        assert_eq!(e.max_deviation, 0.0);
        let e = size_entry("m", &[0, 0, 0, 1], 2);
        assert_eq!(e.counts.iter().sum::<usize>(), 4);
        assert_eq!(e.max_deviation, 1.0);
    }

    #[test]
    fn aggregates_recompute() {
        let r = |arm, count, acc| RunRecord {
            kind: "run",
            arm,
            seed: 0,
            constraint_count: count,
            set_index: 0,
            active_constraints: 0,
            acc,
            nmi: acc,
            epochs_to_converge: 1,
        };
        let records = vec![r("unconstrained", 0, 0.5), r("constrained", 5, 0.6), r("constrained", 5, 0.8)];
        let agg = ExperimentReport::aggregate(&records);
        assert_eq!(agg.len(), 2);
        assert!((agg[1].acc_mean - 0.7).abs() < 1e-12);
        assert!((agg[1].acc_std - 0.1).abs() < 1e-12);
    }
}
