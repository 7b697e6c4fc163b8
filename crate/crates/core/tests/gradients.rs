mod common;

use common::{grad_error, GRAD_BATCHES, GRAD_KS, GRAD_SEEDS};

fn check(loss: &str) {
    for seed in 0..GRAD_SEEDS {
        for k in GRAD_KS {
            for n in GRAD_BATCHES {
                let err = grad_error(loss, seed, k, n);
                assert!(err < 1e-4, "{loss}: seed {seed}, k {k}, n {n}: relative error {err:e}");
            }
        }
    }
}

#[test]
fn clustering() {
    check("clustering");
}

#[test]
fn must_link() {
    check("must_link");
}

#[test]
fn cannot_link() {
    check("cannot_link");
}

#[test]
fn difficulty_both_forms() {
    check("difficulty_intent");
    check("difficulty_literal");
}

#[test]
fn triplet() {
    check("triplet");
}

#[test]
fn global_size() {
    check("global_size");
}

#[test]
fn cardinality() {
    check("cardinality_equality");
    check("cardinality_bound");
}

#[test]
fn reconstruction() {
    check("reconstruction");
}
