//! Side information and the losses that enforce it.
//!
//! | kind | loss |
//! |------|------|
//! | must-link `(a, b)` | `−log Σ_j q_aj q_bj` |
//! | cannot-link `(a, b)` | `−log (1 − Σ_j q_aj q_bj)` |
//! | instance difficulty `M_i ∈ [−1, 1]` | `Σ_i −M_i Σ_j q_ij²` |
//! | triplet `(a, p, n)` | `max(d(a,n) − d(a,p) + θ, 0)` |
//! | global size | `Σ_c (mean_i q_ic − 1/k)²` |
//! | cardinality | group-balance and count-bound penalties |
//!
//! Horn rules add pairwise constraints once their antecedents hold under the
//! current hard assignment.

mod closure;
mod horn;
mod io;
mod losses;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

pub use closure::closure_and_entailment;
pub use horn::{evaluate_horn_rules, evaluate_horn_rules_on_labels};
pub use io::{load_constraints, parse_constraints, save_constraints, write_constraints};
pub use losses::{
    assignment_similarity, cannot_link_loss, cardinality_bound_loss, cardinality_equality_loss,
    global_size_loss, instance_difficulty_loss, must_link_loss, triplet_loss, DifficultyForm,
};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("self-pair ({0}, {0})")]
    SelfPair(usize),
    #[error("({a}, {b}) is both must-linked and cannot-linked")]
    Inconsistent { a: usize, b: usize },
    #[error("index {index} out of range for {n} instances")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("difficulty {value} for instance {index} is outside [-1, 1]")]
    DifficultyRange { index: usize, value: f64 },
    #[error("triplet margin must be positive, got {0}")]
    Margin(f64),
    #[error("triplet ({0}, {1}, {2}) repeats an index")]
    DegenerateTriplet(usize, usize, usize),
    #[error("groups {0} and {1} overlap")]
    OverlappingGroups(String, String),
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("lower bound {lower} exceeds upper bound {upper}")]
    BoundOrder { lower: f64, upper: f64 },
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("horn rule needs at least one antecedent")]
    EmptyAntecedent,
    #[error("batch of {n} rows is smaller than k = {k}; the size loss is meaningless")]
    BatchTooSmall { n: usize, k: usize },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("cannot access constraint file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Pair = (usize, usize);

fn canonical(a: usize, b: usize) -> Result<Pair, ConstraintError> {
    match a.cmp(&b) {
        std::cmp::Ordering::Less => Ok((a, b)),
        std::cmp::Ordering::Greater => Ok((b, a)),
        std::cmp::Ordering::Equal => Err(ConstraintError::SelfPair(a)),
    }
}

/// Must-link and cannot-link pairs, stored as `(min, max)` without
/// duplicates. No pair is in both sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairwiseSet {
    must_links: BTreeSet<Pair>,
    cannot_links: BTreeSet<Pair>,
}

impl PairwiseSet {
    pub fn new(
        must_links: impl IntoIterator<Item = Pair>,
        cannot_links: impl IntoIterator<Item = Pair>,
    ) -> Result<Self, ConstraintError> {
        let mut set = Self::default();
        for (a, b) in must_links {
            set.add_must_link(a, b)?;
        }
        for (a, b) in cannot_links {
            set.add_cannot_link(a, b)?;
        }
        Ok(set)
    }

    pub fn add_must_link(&mut self, a: usize, b: usize) -> Result<bool, ConstraintError> {
        let p = canonical(a, b)?;
        if self.cannot_links.contains(&p) {
            return Err(ConstraintError::Inconsistent { a: p.0, b: p.1 });
        }
        Ok(self.must_links.insert(p))
    }

    pub fn add_cannot_link(&mut self, a: usize, b: usize) -> Result<bool, ConstraintError> {
        let p = canonical(a, b)?;
        if self.must_links.contains(&p) {
            return Err(ConstraintError::Inconsistent { a: p.0, b: p.1 });
        }
        Ok(self.cannot_links.insert(p))
    }

    pub fn add(&mut self, kind: PairKind, a: usize, b: usize) -> Result<bool, ConstraintError> {
        match kind {
            PairKind::Ml => self.add_must_link(a, b),
            PairKind::Cl => self.add_cannot_link(a, b),
        }
    }

    pub fn must_links(&self) -> &BTreeSet<Pair> {
        &self.must_links
    }

    pub fn cannot_links(&self) -> &BTreeSet<Pair> {
        &self.cannot_links
    }

    pub fn len(&self) -> usize {
        self.must_links.len() + self.cannot_links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.must_links
            .iter()
            .chain(&self.cannot_links)
            .flat_map(|&(a, b)| [a, b])
    }
}

/// Per-instance difficulty: positive is easy, negative is hard, zero is
/// unknown. The magnitude is the confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyVector(Vec<f64>);

impl DifficultyVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ConstraintError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(ConstraintError::DifficultyRange { index, value });
        }
        Ok(Self(values))
    }

    pub fn from_sparse(n: usize, entries: &BTreeMap<usize, f64>) -> Result<Self, ConstraintError> {
        let mut values = vec![0.0; n];
        for (&i, &m) in entries {
            *values
                .get_mut(i)
                .ok_or(ConstraintError::IndexOutOfRange { index: i, n })? = m;
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Result<Self, ConstraintError> {
        if anchor == positive || anchor == negative || positive == negative {
            return Err(ConstraintError::DegenerateTriplet(anchor, positive, negative));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletSet {
    pub triples: Vec<Triplet>,
    pub margin: f64,
}

impl TripletSet {
    pub fn new(triples: Vec<Triplet>, margin: f64) -> Result<Self, ConstraintError> {
        if !(margin > 0.0) {
            return Err(ConstraintError::Margin(margin));
        }
        Ok(Self { triples, margin })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CardinalityRule {
    /// Both groups should be equally represented in every cluster.
    Equality { groups: [String; 2] },
    /// Dataset-level member count per cluster within `[lower, upper]`.
    Bounds { group: String, lower: f64, upper: f64 },
}

/// Named instance groups and the cardinality rules over them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CardinalitySpec {
    pub groups: BTreeMap<String, BTreeSet<usize>>,
    pub rules: Vec<CardinalityRule>,
}

impl CardinalitySpec {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        let group = |name: &String| {
            self.groups
                .get(name)
                .ok_or_else(|| ConstraintError::UnknownGroup(name.clone()))
        };
        for rule in &self.rules {
            match rule {
                CardinalityRule::Equality { groups: [a, b] } => {
                    if !group(a)?.is_disjoint(group(b)?) || a == b {
                        return Err(ConstraintError::OverlappingGroups(a.clone(), b.clone()));
                    }
                }
                CardinalityRule::Bounds { group: g, lower, upper } => {
                    group(g)?;
                    if lower > upper {
                        return Err(ConstraintError::BoundOrder {
                            lower: *lower,
                            upper: *upper,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Membership mask of `group` over the given dataset rows.
    pub fn mask(&self, group: &str, rows: &[usize]) -> Result<Vec<bool>, ConstraintError> {
        let members = self
            .groups
            .get(group)
            .ok_or_else(|| ConstraintError::UnknownGroup(group.to_string()))?;
        Ok(rows.iter().map(|r| members.contains(r)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Ml,
    Cl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairPredicate {
    pub kind: PairKind,
    pub a: usize,
    pub b: usize,
}

/// `antecedents[0] ∧ .. ∧ antecedents[m] → consequent`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HornRule {
    pub antecedents: Vec<PairPredicate>,
    pub consequent: PairPredicate,
}

impl HornRule {
    pub fn new(antecedents: Vec<PairPredicate>, consequent: PairPredicate) -> Result<Self, ConstraintError> {
        if antecedents.is_empty() {
            return Err(ConstraintError::EmptyAntecedent);
        }
        for p in antecedents.iter().chain([&consequent]) {
            canonical(p.a, p.b)?;
        }
        Ok(Self {
            antecedents,
            consequent,
        })
    }
}

/// Everything a constraint file can hold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    pub pairwise: PairwiseSet,
    /// Sparse difficulty entries; missing instances carry no information.
    pub difficulty: BTreeMap<usize, f64>,
    pub triplets: Vec<Triplet>,
    pub cardinality: CardinalitySpec,
    pub horn_rules: Vec<HornRule>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.pairwise.is_empty()
            && self.difficulty.is_empty()
            && self.triplets.is_empty()
            && self.cardinality.is_empty()
            && self.horn_rules.is_empty()
    }

    /// Checks every index against a dataset of `n` instances and the
    /// internal consistency of groups and rules.
    pub fn validate(&self, n: usize) -> Result<(), ConstraintError> {
        let check = |index: usize| {
            if index < n {
                Ok(())
            } else {
                Err(ConstraintError::IndexOutOfRange { index, n })
            }
        };
        for i in self.pairwise.indices() {
            check(i)?;
        }
        DifficultyVector::from_sparse(n, &self.difficulty)?;
        for t in &self.triplets {
            Triplet::new(t.anchor, t.positive, t.negative)?;
            for i in [t.anchor, t.positive, t.negative] {
                check(i)?;
            }
        }
        for members in self.cardinality.groups.values() {
            for &i in members {
                check(i)?;
            }
        }
        self.cardinality.validate()?;
        for rule in &self.horn_rules {
            for p in rule.antecedents.iter().chain([&rule.consequent]) {
                check(p.a)?;
                check(p.b)?;
            }
        }
        Ok(())
    }
}
