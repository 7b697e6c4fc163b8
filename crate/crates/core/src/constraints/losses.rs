//! Constraint losses over a batch soft assignment `Q` (`n × k`). Indices
//! are batch rows.

use super::{ConstraintError, Pair, Triplet};
use crate::cluster::LOG_FLOOR;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// `d(q_a, q_b) = Σ_j q_aj q_bj`
pub fn assignment_similarity(qa: &[f64], qb: &[f64]) -> f64 {
    qa.iter().zip(qb).map(|(x, y)| x * y).sum()
}

/// Row-wise `Σ_j q_aj q_bj` for each pair, shape `[m]`.
fn similarities(tape: &mut Tape, q: Var, left: &[usize], right: &[usize]) -> Result<Var, TensorError> {
    let a = tape.gather_rows(q, left)?;
    let b = tape.gather_rows(q, right)?;
    let prod = tape.mul(a, b)?;
    tape.sum_axis(prod, 1)
}

fn split(pairs: &[Pair]) -> (Vec<usize>, Vec<usize>) {
    pairs.iter().copied().unzip()
}

fn neg_log_sum(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let x = tape.clamp(x, LOG_FLOOR, 1.0)?;
    let logs = tape.log(x)?;
    let total = tape.sum(logs)?;
    tape.neg(total)
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

/// `−Σ log clamp(d(q_a, q_b), ε, 1)`
pub fn must_link_loss(tape: &mut Tape, q: Var, pairs: &[Pair]) -> Result<Var, TensorError> {
    if pairs.is_empty() {
        return Ok(zero(tape));
    }
    let (a, b) = split(pairs);
    let s = similarities(tape, q, &a, &b)?;
    neg_log_sum(tape, s)
}

/// `−Σ log clamp(1 − d(q_a, q_b), ε, 1)`
pub fn cannot_link_loss(tape: &mut Tape, q: Var, pairs: &[Pair]) -> Result<Var, TensorError> {
    if pairs.is_empty() {
        return Ok(zero(tape));
    }
    let (a, b) = split(pairs);
    let s = similarities(tape, q, &a, &b)?;
    let s = tape.neg(s)?;
    let complement = tape.add_scalar(s, 1.0)?;
    neg_log_sum(tape, complement)
}

/// Sign convention of the instance-difficulty loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyForm {
    /// `Σ_i −M_i Σ_j q_ij²`: confident assignments are rewarded on easy
    /// instances and penalized on difficult ones.
    #[default]
    Intent,
    /// `Σ_{M_t<0} M_t Σ_j q_tj² − Σ_{M_s>0} M_s Σ_j q_sj²`, which rewards
    /// confidence on both.
    Literal,
}

pub fn instance_difficulty_loss(
    tape: &mut Tape,
    q: Var,
    m: &[f64],
    form: DifficultyForm,
) -> Result<Var, ConstraintError> {
    let n = tape.shape(q)[0];
    if m.len() != n {
        return Err(ConstraintError::LengthMismatch {
            expected: n,
            found: m.len(),
        });
    }
    let weights: Vec<f64> = m
        .iter()
        .map(|&v| match form {
            DifficultyForm::Intent => -v,
            DifficultyForm::Literal => -v.abs(),
        })
        .collect();
    let w = tape.constant(Tensor::matrix(n, 1, weights)?);
    let sq = tape.square(q)?;
    let weighted = tape.mul(w, sq)?;
    Ok(tape.sum(weighted)?)
}

/// `Σ max(d(a,n) − d(a,p) + θ, 0)`
pub fn triplet_loss(tape: &mut Tape, q: Var, triples: &[Triplet], margin: f64) -> Result<Var, ConstraintError> {
    if !(margin > 0.0) {
        return Err(ConstraintError::Margin(margin));
    }
    if triples.is_empty() {
        return Ok(zero(tape));
    }
    let anchors: Vec<usize> = triples.iter().map(|t| t.anchor).collect();
    let pos: Vec<usize> = triples.iter().map(|t| t.positive).collect();
    let neg: Vec<usize> = triples.iter().map(|t| t.negative).collect();
    let d_ap = similarities(tape, q, &anchors, &pos)?;
    let d_an = similarities(tape, q, &anchors, &neg)?;
    let gap = tape.sub(d_an, d_ap)?;
    let gap = tape.add_scalar(gap, margin)?;
    let hinge = tape.relu(gap)?;
    Ok(tape.sum(hinge)?)
}

/// `Σ_c (mean_i q_ic − 1/k)²`
pub fn global_size_loss(tape: &mut Tape, q: Var) -> Result<Var, ConstraintError> {
    let (n, k) = (tape.shape(q)[0], tape.shape(q)[1]);
    if n < k {
        return Err(ConstraintError::BatchTooSmall { n, k });
    }
    let sizes = tape.mean_axis(q, 0)?;
    let dev = tape.add_scalar(sizes, -1.0 / k as f64)?;
    let sq = tape.square(dev)?;
    Ok(tape.sum(sq)?)
}

fn mask_column(mask: &[bool], scale: f64) -> Result<Tensor, TensorError> {
    Tensor::matrix(mask.len(), 1, mask.iter().map(|&m| if m { scale } else { 0.0 }).collect())
}

fn check_mask(tape: &Tape, q: Var, mask: &[bool]) -> Result<usize, ConstraintError> {
    let n = tape.shape(q)[0];
    if mask.len() != n {
        return Err(ConstraintError::LengthMismatch {
            expected: n,
            found: mask.len(),
        });
    }
    Ok(n)
}

/// `Σ_c (Σ_{i∈A} q_ic / n − Σ_{j∈B} q_jc / n)²` with `n` the batch size.
pub fn cardinality_equality_loss(
    tape: &mut Tape,
    q: Var,
    group_a: &[bool],
    group_b: &[bool],
) -> Result<Var, ConstraintError> {
    let n = check_mask(tape, q, group_a)?;
    check_mask(tape, q, group_b)?;
    if group_a.iter().zip(group_b).any(|(a, b)| *a && *b) {
        return Err(ConstraintError::OverlappingGroups("first".into(), "second".into()));
    }
    let inv = 1.0 / n as f64;
    let signed: Vec<f64> = group_a
        .iter()
        .zip(group_b)
        .map(|(&a, &b)| if a { inv } else if b { -inv } else { 0.0 })
        .collect();
    let w = tape.constant(Tensor::matrix(n, 1, signed)?);
    let weighted = tape.mul(w, q)?;
    let diff = tape.sum_axis(weighted, 0)?;
    let sq = tape.square(diff)?;
    Ok(tape.sum(sq)?)
}

/// `Σ_c min(0, s_c − L)² + max(0, s_c − U)²` with `s_c = Σ_{i∈mask} q_ic`.
/// `lower` and `upper` are counts at the scale of this batch.
pub fn cardinality_bound_loss(
    tape: &mut Tape,
    q: Var,
    mask: &[bool],
    lower: f64,
    upper: f64,
) -> Result<Var, ConstraintError> {
    check_mask(tape, q, mask)?;
    if lower > upper {
        return Err(ConstraintError::BoundOrder { lower, upper });
    }
    let w = tape.constant(mask_column(mask, 1.0)?);
    let weighted = tape.mul(w, q)?;
    let s = tape.sum_axis(weighted, 0)?;
    let below = tape.add_scalar(s, -lower)?;
    let below = tape.min_scalar(below, 0.0)?;
    let below = tape.square(below)?;
    let above = tape.add_scalar(s, -upper)?;
    let above = tape.max_scalar(above, 0.0)?;
    let above = tape.square(above)?;
    let total = tape.add(below, above)?;
    Ok(tape.sum(total)?)
}
