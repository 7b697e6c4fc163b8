#![allow(dead_code)]

use std::collections::BTreeSet;

use dcc::cluster::{clustering_loss, soft_assign, soft_assign_values, target_distribution};
use dcc::constraints::{
    cardinality_bound_loss, cardinality_equality_loss, cannot_link_loss, closure_and_entailment, global_size_loss,
    instance_difficulty_loss, must_link_loss, triplet_loss, ConstraintError, DifficultyForm, PairwiseSet, Triplet,
};
use dcc::metrics::clustering_accuracy;
use dcc::network::{reconstruction_loss, ArchitectureSpec, NetworkParams};
use dcc::tensor::{finite_difference_check, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LOSSES: [&str; 10] = [
    "clustering",
    "must_link",
    "cannot_link",
    "difficulty_intent",
    "difficulty_literal",
    "triplet",
    "global_size",
    "cardinality_equality",
    "cardinality_bound",
    "reconstruction",
];

pub const GRAD_SEEDS: u64 = 10;
pub const GRAD_KS: [usize; 3] = [2, 4, 10];
pub const GRAD_BATCHES: [usize; 2] = [4, 16];
const EMBED: usize = 3;
const STEP: f64 = 1e-5;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, values).unwrap()
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::new();
    while out.len() < count {
        let i = rng.random_range(0..n);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn c(e: ConstraintError) -> TensorError {
    match e {
        ConstraintError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

/// Worst relative gradient error of `loss` for one `(seed, k, n)` case,
/// taken over the embedding and, for the clustering head, the centroids.
pub fn grad_error(loss: &str, seed: u64, k: usize, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + (k * 100 + n) as u64);
    if loss == "reconstruction" {
        let spec = ArchitectureSpec {
            input_dim: 4,
            hidden_dims: vec![6],
            embedding_dim: 2,
        };
        let net = NetworkParams::init(&spec, seed).unwrap();
        let x = random_matrix(&mut rng, n, 4, 1.0);
        return finite_difference_check(
            |tape, xv| {
                let z = net.encode(tape, xv).map_err(|e| panic!("{e}")).unwrap();
                let x_hat = net.decode(tape, z).map_err(|e| panic!("{e}")).unwrap();
                reconstruction_loss(tape, xv, x_hat)
            },
            &x,
            STEP,
        )
        .unwrap();
    }

    let z = random_matrix(&mut rng, n, EMBED, 2.0);
    let mu = random_matrix(&mut rng, k, EMBED, 2.0);
    let p = target_distribution(&soft_assign_values(&z, &mu).unwrap());
    let pairs: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let ab = distinct(&mut rng, n, 2);
            (ab[0], ab[1])
        })
        .collect();
    let q0 = soft_assign_values(&z, &mu).unwrap();
    let dot = |a: usize, b: usize| -> f64 { q0.row(a).iter().zip(q0.row(b)).map(|(x, y)| x * y).sum() };
    // Row-disjoint triples with each hinge away from its kink: a row shared
    // by two triples can cancel to an exactly zero gradient that central
    // differences only see as round-off.
    let mut triples: Vec<Triplet> = Vec::new();
    while triples.len() < n / 4 {
        let t = distinct(&mut rng, n, 3);
        let used = triples
            .iter()
            .any(|o| t.iter().any(|&r| [o.anchor, o.positive, o.negative].contains(&r)));
        if !used && (dot(t[0], t[2]) - dot(t[0], t[1]) + 0.1).abs() > 1e-3 {
            triples.push(Triplet::new(t[0], t[1], t[2]).unwrap());
        }
    }
    let m: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { -0.1 } else { 1.0 }).collect();
    let side: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let group_a: Vec<bool> = side.iter().map(|&s| s == 0).collect();
    let group_b: Vec<bool> = side.iter().map(|&s| s == 1).collect();
    let in_a = group_a.iter().filter(|&&b| b).count() as f64;
    // one bound below and one above the typical mass so both sides are exercised
    let (lower, upper) = (0.8 * in_a / k as f64, 1.1 * in_a / k as f64);

    let head = |tape: &mut Tape, zv: Var, mv: Var| -> Result<Var, TensorError> {
        let q = soft_assign(tape, zv, mv).map_err(|e| panic!("{e}")).unwrap();
        match loss {
            "clustering" => clustering_loss(tape, &p, q),
            "must_link" => must_link_loss(tape, q, &pairs),
            "cannot_link" => cannot_link_loss(tape, q, &pairs),
            "difficulty_intent" => instance_difficulty_loss(tape, q, &m, DifficultyForm::Intent).map_err(c),
            "difficulty_literal" => instance_difficulty_loss(tape, q, &m, DifficultyForm::Literal).map_err(c),
            "triplet" => triplet_loss(tape, q, &triples, 0.1).map_err(c),
            "global_size" => {
                // defined for batches of at least k rows
                if n < k {
                    let s = tape.sum(q)?;
                    return tape.scale(s, 0.0);
                }
                global_size_loss(tape, q).map_err(c)
            }
            "cardinality_equality" => cardinality_equality_loss(tape, q, &group_a, &group_b).map_err(c),
            "cardinality_bound" => cardinality_bound_loss(tape, q, &group_a, lower, upper).map_err(c),
            other => panic!("unknown loss {other}"),
        }
    };

    let wrt_z = finite_difference_check(
        |tape, zv| {
            let mv = tape.constant(mu.clone());
            head(tape, zv, mv)
        },
        &z,
        STEP,
    )
    .unwrap();
    let wrt_mu = finite_difference_check(
        |tape, mv| {
            let zv = tape.constant(z.clone());
            head(tape, zv, mv)
        },
        &mu,
        STEP,
    )
    .unwrap();
    wrt_z.max(wrt_mu)
}

/// Worst error of every loss over all seeds, cluster counts and batch sizes.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    LOSSES
        .iter()
        .map(|&loss| {
            let mut worst: f64 = 0.0;
            for seed in 0..GRAD_SEEDS {
                for k in GRAD_KS {
                    for n in GRAD_BATCHES {
                        worst = worst.max(grad_error(loss, seed, k, n));
                    }
                }
            }
            (loss, worst)
        })
        .collect()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Accuracy as the best of all `k!` relabelings of the predictions.
pub fn brute_force_accuracy(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    permutations(k)
        .iter()
        .map(|perm| pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}

/// Number of random cases on which the metric disagrees with enumeration.
pub fn accuracy_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .filter(|_| {
            let k = rng.random_range(1..=6);
            let n = rng.random_range(1..=40);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let fast = clustering_accuracy(&pred, &truth).unwrap();
            (fast - brute_force_accuracy(&pred, &truth, k)).abs() > 1e-12
        })
        .count()
}

/// Closure by reachability matrices. `None` when a cannot-link falls inside
/// a must-link component.
pub fn naive_closure(
    n: usize,
    ml: &[(usize, usize)],
    cl: &[(usize, usize)],
) -> Option<(BTreeSet<(usize, usize)>, BTreeSet<(usize, usize)>)> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in ml {
        reach[a][b] = true;
        reach[b][a] = true;
    }
    for via in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][via] && reach[via][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut must = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if reach[i][j] {
                must.insert((i, j));
            }
        }
    }
    let mut cannot = BTreeSet::new();
    for &(a, b) in cl {
        for i in 0..n {
            for j in 0..n {
                if reach[a][i] && reach[b][j] {
                    if i == j || must.contains(&(i.min(j), i.max(j))) {
                        return None;
                    }
                    cannot.insert((i.min(j), i.max(j)));
                }
            }
        }
    }
    Some((must, cannot))
}

/// Number of random 20-node graphs on which closure disagrees with the
/// reachability oracle.
pub fn closure_mismatches(cases: usize, seed: u64) -> usize {
    const N: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .filter(|_| {
            let n_ml = rng.random_range(0..15);
            let n_cl = rng.random_range(0..6);
            let mut edge = || {
                let ab = distinct(&mut rng, N, 2);
                (ab[0].min(ab[1]), ab[0].max(ab[1]))
            };
            let ml: Vec<_> = (0..n_ml).map(|_| edge()).collect();
            let cl: Vec<_> = (0..n_cl).map(|_| edge()).collect();
            let expected = naive_closure(N, &ml, &cl);
            let built = PairwiseSet::new(ml.iter().copied(), cl.iter().copied());
            let got = built.and_then(|s| closure_and_entailment(&s));
            match (expected, got) {
                (None, Err(ConstraintError::Inconsistent { .. })) => false,
                (Some((must, cannot)), Ok(set)) => set.must_links() != &must || set.cannot_links() != &cannot,
                _ => true,
            }
        })
        .count()
}
