use dcc::cluster::{clustering_loss, soft_assign_values, target_distribution};
use dcc::constraints::{
    cannot_link_loss, cardinality_bound_loss, cardinality_equality_loss, closure_and_entailment, global_size_loss,
    must_link_loss, triplet_loss, PairwiseSet, Triplet,
};
use dcc::metrics::{clustering_accuracy, kmeans_restarts, nmi};
use dcc::network::reconstruction_loss;
use dcc::oracles::gen_pairwise;
use dcc::tensor::{Tape, Tensor, Var};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

/// Random row-stochastic matrices with strictly positive entries.
fn stochastic(max_rows: usize, max_k: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 2..=max_k).prop_flat_map(|(n, k)| {
        matrix(n, k, 0.01, 1.0).prop_map(|t| {
            let (n, k) = (t.rows(), t.cols());
            let mut v = t.into_values();
            for row in v.chunks_mut(k) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            Tensor::matrix(n, k, v).unwrap()
        })
    })
}

fn scalar(q: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(q.clone());
    let out = f(&mut tape, v);
    tape.value(out).item()
}

fn assert_row_stochastic(t: &Tensor) {
    for row in t.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

fn entropy(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_assignment_and_target_are_row_stochastic(
        (z, mu) in (1usize..12, 1usize..6, 1usize..4).prop_flat_map(|(n, k, e)| (matrix(n, e, -5.0, 5.0), matrix(k, e, -5.0, 5.0)))
    ) {
        let q = soft_assign_values(&z, &mu).unwrap();
        assert_row_stochastic(&q);
        assert_row_stochastic(&target_distribution(&q));
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_equal_arguments(q in stochastic(10, 6), other in stochastic(10, 6)) {
        let same = scalar(&q, |t, v| clustering_loss(t, &q, v).unwrap());
        prop_assert!(same.abs() < 1e-12);
        let p = target_distribution(&q);
        prop_assert!(scalar(&q, |t, v| clustering_loss(t, &p, v).unwrap()) >= -1e-12);
        if other.shape() == q.shape() {
            let kl = scalar(&q, |t, v| clustering_loss(t, &other, v).unwrap());
            prop_assert!(kl >= -1e-12);
            let gap = other.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn soft_assignment_is_translation_invariant(
        (z, mu, shift) in (1usize..10, 1usize..5, 1usize..4)
            .prop_flat_map(|(n, k, e)| (matrix(n, e, -3.0, 3.0), matrix(k, e, -3.0, 3.0), prop::collection::vec(-10.0..10.0f64, e)))
    ) {
        let moved = |t: &Tensor| {
            let mut t = t.clone();
            let e = t.cols();
            for (i, v) in t.values_mut().iter_mut().enumerate() {
                *v += shift[i % e];
            }
            t
        };
        let a = soft_assign_values(&z, &mu).unwrap();
        let b = soft_assign_values(&moved(&z), &moved(&mu)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn constraint_losses_are_non_negative(q in stochastic(12, 5), picks in prop::collection::vec((0usize..12, 0usize..12, 0usize..12), 1..8), split in prop::collection::vec(0u8..3, 12)) {
        let n = q.rows();
        let pairs: Vec<(usize, usize)> = picks.iter().map(|&(a, b, _)| (a % n, b % n)).filter(|(a, b)| a != b).collect();
        let triples: Vec<Triplet> = picks.iter().filter_map(|&(a, p, m)| Triplet::new(a % n, p % n, m % n).ok()).collect();
        let a: Vec<bool> = split[..n].iter().map(|&s| s == 0).collect();
        let b: Vec<bool> = split[..n].iter().map(|&s| s == 1).collect();
        prop_assert!(scalar(&q, |t, v| must_link_loss(t, v, &pairs).unwrap()) >= 0.0);
        prop_assert!(scalar(&q, |t, v| cannot_link_loss(t, v, &pairs).unwrap()) >= 0.0);
        prop_assert!(scalar(&q, |t, v| triplet_loss(t, v, &triples, 0.1).unwrap()) >= 0.0);
        prop_assert!(scalar(&q, |t, v| cardinality_equality_loss(t, v, &a, &b).unwrap()) >= 0.0);
        prop_assert!(scalar(&q, |t, v| cardinality_bound_loss(t, v, &a, 0.5, 1.5).unwrap()) >= 0.0);
        if n >= q.cols() {
            prop_assert!(scalar(&q, |t, v| global_size_loss(t, v).unwrap()) >= 0.0);
        }
        let x_hat = q.clone();
        let rec = scalar(&q, |t, v| {
            let h = t.constant(x_hat.clone());
            reconstruction_loss(t, v, h).unwrap()
        });
        prop_assert_eq!(rec, 0.0);
    }

    #[test]
    fn pairwise_losses_are_symmetric(q in stochastic(8, 5), a in 0usize..8, b in 0usize..8) {
        let n = q.rows();
        let (a, b) = (a % n, b % n);
        prop_assume!(a != b);
        let ml = |p| scalar(&q, |t, v| must_link_loss(t, v, &[p]).unwrap());
        let cl = |p| scalar(&q, |t, v| cannot_link_loss(t, v, &[p]).unwrap());
        prop_assert_eq!(ml((a, b)), ml((b, a)));
        prop_assert_eq!(cl((a, b)), cl((b, a)));
    }

    #[test]
    fn closure_is_idempotent(ml in prop::collection::vec((0usize..15, 0usize..15), 0..12), cl in prop::collection::vec((0usize..15, 0usize..15), 0..6)) {
        let ml: Vec<_> = ml.into_iter().filter(|(a, b)| a != b).collect();
        let cl: Vec<_> = cl.into_iter().filter(|(a, b)| a != b).collect();
        if let Ok(closed) = PairwiseSet::new(ml, cl).and_then(|s| closure_and_entailment(&s)) {
            prop_assert_eq!(closure_and_entailment(&closed).unwrap(), closed);
        }
    }

    #[test]
    fn metrics_ignore_cluster_ids(pred in prop::collection::vec(0usize..5, 1..40), perm in Just(()).prop_perturb(|_, mut rng| {
        let mut p: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() { p.swap(i, rng.random_range(0..=i)); }
        p
    }), seed in 0u64..1000) {
        let truth: Vec<usize> = pred.iter().enumerate().map(|(i, &p)| if (i as u64 + seed) % 3 == 0 { (p + 1) % 4 } else { p % 4 }).collect();
        let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p] + 10).collect();
        prop_assert!((clustering_accuracy(&pred, &truth).unwrap() - clustering_accuracy(&relabeled, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&relabeled, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&truth, &pred).unwrap()).abs() < 1e-12);
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        let m = nmi(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0 + 1e-12).contains(&m));
    }

    #[test]
    fn generated_pairs_are_closed_and_reproducible(labels in prop::collection::vec(0usize..4, 4..30), count in 1usize..20, seed in any::<u64>()) {
        let max = labels.len() * (labels.len() - 1) / 2;
        let count = count.min(max);
        let set = gen_pairwise(&labels, count, seed).unwrap();
        prop_assert_eq!(&closure_and_entailment(&set).unwrap(), &set);
        prop_assert_eq!(&gen_pairwise(&labels, count, seed).unwrap(), &set);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn target_sharpens_most_rows(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (1000, 4);
        let mut v: Vec<f64> = (0..n * k).map(|_| rng.random_range(0.01..1.0)).collect();
        for row in v.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        let q = Tensor::matrix(n, k, v).unwrap();
        let p = target_distribution(&q);
        let sharper = q.iter_rows().zip(p.iter_rows()).filter(|(a, b)| entropy(b) <= entropy(a)).count();
        prop_assert!(sharper as f64 >= 0.95 * n as f64, "{sharper} of {n}");
    }
}

#[test]
fn pairwise_loss_zero_sets() {
    let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
    let ml = |p| scalar(&q, |t, v| must_link_loss(t, v, &[p]).unwrap());
    let cl = |p| scalar(&q, |t, v| cannot_link_loss(t, v, &[p]).unwrap());
    assert_eq!(ml((0, 1)), 0.0);
    assert!(ml((0, 2)) > 0.0 && ml((0, 3)) > 0.0);
    assert_eq!(cl((0, 2)), 0.0);
    assert!(cl((0, 1)) > 0.0 && cl((2, 3)) > 0.0);
}

#[test]
fn triplet_zero_exactly_when_margin_met() {
    // a·p = 0.3, a·n = 0.5 against a·n' = 0.1
    let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7], vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
    let loss = |p, n| scalar(&q, |t, v| triplet_loss(t, v, &[Triplet::new(0, p, n).unwrap()], 0.1).unwrap());
    assert!(loss(1, 2) > 0.0);
    assert_eq!(loss(1, 3), 0.0);
}

#[test]
fn more_restarts_never_hurt_kmeans() {
    let ds = dcc::datasets::make_blobs(&dcc::datasets::BlobSpec {
        num_clusters: 5,
        per_cluster: 30,
        dim: 3,
        separation: 2.0,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    for seed in 0..5 {
        let one = kmeans_restarts(&ds.x, 5, 1, 300, seed).unwrap();
        let many = kmeans_restarts(&ds.x, 5, 20, 300, seed).unwrap();
        assert!(many.inertia <= one.inertia);
        assert_eq!(many, kmeans_restarts(&ds.x, 5, 20, 300, seed).unwrap());
    }
}
