//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use guidesat::bigram::BigramModel;
use guidesat::egraph::{EGraph, Id};
use guidesat::lang::{parse_sexpr, Signature, Term};
use rand::seq::SliceRandom;
use rand::Rng;

/// `sqr`, `*`, `+` over `x`, `y`.
pub fn sig5() -> Arc<Signature> {
    Arc::new(Signature::new(&[("sqr", 1), ("*", 2), ("+", 2)], &["x", "y"], &[]).unwrap())
}

pub fn ring() -> Arc<Signature> {
    Arc::new(Signature::ring_char2())
}

pub fn term(s: &str, sig: &Signature) -> Term {
    parse_sexpr(s, sig).unwrap_or_else(|e| panic!("{s}: {e}"))
}

pub fn random_term<R: Rng>(sig: &Signature, depth: usize, rng: &mut R) -> Term {
    let syms = sig.symbols();
    let pool: Vec<_> = if depth <= 1 {
        syms.iter().filter(|s| s.arity == 0).collect()
    } else {
        syms.iter().collect()
    };
    let s = pool.choose(rng).unwrap();
    let kids = (0..s.arity).map(|_| random_term(sig, depth - 1, rng)).collect();
    Term::new(s.name.clone(), kids)
}

/// A few random terms over `sig`, with some of their classes merged.
pub fn random_egraph<R: Rng>(sig: &Arc<Signature>, rng: &mut R) -> EGraph {
    let mut g = EGraph::new(sig.clone());
    let n_terms = rng.gen_range(1..=3);
    let mut ids: Vec<Id> = Vec::new();
    for _ in 0..n_terms {
        let t = random_term(sig, rng.gen_range(1..=3), rng);
        ids.push(g.add_term(&t).unwrap());
    }
    let all = g.class_ids();
    for _ in 0..rng.gen_range(0..=2) {
        let a = *all.choose(rng).unwrap();
        let b = *all.choose(rng).unwrap();
        g.union_classes(a, b);
    }
    g.rebuild();
    g
}

/// A random e-graph rooted at a class with between 1 and `max_terms`
/// terms of depth at most `depth`.
pub fn small_egraph<R: Rng>(sig: &Arc<Signature>, depth: usize, max_terms: usize, rng: &mut R) -> (EGraph, Id) {
    loop {
        let g = random_egraph(sig, rng);
        let ids = g.class_ids();
        let root = *ids.choose(rng).unwrap();
        let n = g.enumerate_terms(root, depth, max_terms + 1).len();
        if (1..=max_terms).contains(&n) {
            return (g, root);
        }
    }
}

/// Rows drawn uniformly from (0.05, 1], then normalized.
pub fn random_model<R: Rng>(sig: &Arc<Signature>, rng: &mut R) -> BigramModel {
    let n_rows = BigramModel::uniform(sig.clone()).row_count();
    let rows = (0..n_rows)
        .map(|_| (0..sig.len()).map(|_| rng.gen_range(0.05..=1.0)).collect())
        .collect();
    BigramModel::from_rows(sig.clone(), rows).unwrap()
}
