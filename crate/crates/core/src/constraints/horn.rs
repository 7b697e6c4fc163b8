use super::{HornRule, PairKind, PairPredicate};
use crate::cluster::hard_assign;
use crate::tensor::Tensor;

fn holds(p: &PairPredicate, labels: &[usize]) -> bool {
    let same = labels[p.a] == labels[p.b];
    match p.kind {
        PairKind::Ml => same,
        PairKind::Cl => !same,
    }
}

/// Consequents of the rules whose antecedents all hold under the hard
/// assignment `labels`.
pub fn evaluate_horn_rules_on_labels(rules: &[HornRule], labels: &[usize]) -> Vec<PairPredicate> {
    rules
        .iter()
        .filter(|r| r.antecedents.iter().all(|p| holds(p, labels)))
        .map(|r| r.consequent)
        .collect()
}

/// Like [`evaluate_horn_rules_on_labels`] with labels from the row argmax of
/// `q`.
pub fn evaluate_horn_rules(rules: &[HornRule], q: &Tensor) -> Vec<PairPredicate> {
    evaluate_horn_rules_on_labels(rules, &hard_assign(q))
}
