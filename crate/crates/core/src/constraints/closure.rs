use std::collections::{BTreeMap, BTreeSet};

use super::{canonical, ConstraintError, Pair, PairwiseSet};

struct UnionFind {
    parent: BTreeMap<usize, usize>,
}

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = *self.parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = self.find(p);
        self.parent.insert(x, root);
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra.max(rb), ra.min(rb));
        }
    }
}

/// Must-links become cliques over their connected components; every
/// cannot-link `(a, b)` is extended to all of `component(a) × component(b)`.
/// Fails if a cannot-link joins two members of one component.
pub fn closure_and_entailment(set: &PairwiseSet) -> Result<PairwiseSet, ConstraintError> {
    let mut uf = UnionFind {
        parent: BTreeMap::new(),
    };
    for &(a, b) in set.must_links().iter().chain(set.cannot_links()) {
        uf.find(a);
        uf.find(b);
    }
    for &(a, b) in set.must_links() {
        uf.union(a, b);
    }
    let nodes: Vec<usize> = uf.parent.keys().copied().collect();
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for x in nodes {
        let r = uf.find(x);
        components.entry(r).or_default().push(x);
    }

    let mut must: BTreeSet<Pair> = BTreeSet::new();
    for members in components.values() {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                must.insert((a, b));
            }
        }
    }
    let mut cannot: BTreeSet<Pair> = BTreeSet::new();
    for &(a, b) in set.cannot_links() {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            return Err(ConstraintError::Inconsistent { a, b });
        }
        for &x in &components[&ra] {
            for &y in &components[&rb] {
                cannot.insert(canonical(x, y)?);
            }
        }
    }
    PairwiseSet::new(must, cannot)
}
