//! Explanations: turning the proof forest into a positional rewrite chain.
//!
//! Each union recorded an edge between two ids together with the rule (or
//! congruence) that justified it. Two equivalent ids are connected by a
//! unique path in the forest. A rule edge is a root rewrite between the two
//! ids' terms; a congruence edge is explained child by child, with the child
//! index prepended to every nested position.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use super::{EGraph, EGraphError, Id, Justification};
use crate::lang::Term;
use crate::rewrite::{apply_rule_at, Certificate, Position, RewriteError, Step};

/// Upper bound on explanation length; proofs through deep congruence
/// chains can grow very quickly.
const MAX_STEPS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExplainError {
    #[error("term {0} is not represented in the e-graph")]
    NotRepresented(Term),
    #[error("{0} and {1} are not equivalent in the e-graph")]
    NotEquivalent(Term, Term),
    #[error("the equality relies on a union asserted without a rule")]
    Asserted,
    #[error("step uses `{0}` backwards and the rule set has no inverse for it")]
    Irreversible(String),
    #[error("explanation exceeds {MAX_STEPS} steps")]
    TooLong,
    #[error("no rule set recorded; saturate before explaining")]
    NoRules,
    #[error("replaying the explanation failed: {0}")]
    Replay(#[from] RewriteError),
    #[error(transparent)]
    Graph(#[from] EGraphError),
}

#[derive(Clone, Debug)]
struct RawStep {
    rule: u32,
    forward: bool,
    position: Vec<usize>,
}

type Memo = HashMap<(Id, Id), Rc<Vec<RawStep>>>;

impl EGraph {
    /// Produces a rewrite chain from `from` to `to` using the rules of the
    /// last saturation. Both terms must be represented and equivalent.
    pub fn explain(&mut self, from: &Term, to: &Term) -> Result<Certificate, ExplainError> {
        if self.dirty {
            self.rebuild();
        }
        if self.lookup(from).is_none() {
            return Err(ExplainError::NotRepresented(from.clone()));
        }
        if self.lookup(to).is_none() {
            return Err(ExplainError::NotRepresented(to.clone()));
        }
        // Both are represented, so these only add ids joined by congruence.
        let a = self.add_term_exact(from)?;
        let b = self.add_term_exact(to)?;
        if self.find(a) != self.find(b) {
            return Err(ExplainError::NotEquivalent(from.clone(), to.clone()));
        }
        let rules = self.rules.as_ref();
        let mut memo = Memo::new();
        let raw = self.explain_ids(a, b, &mut memo)?;
        if raw.is_empty() {
            return Ok(Certificate::new(from.clone()));
        }
        let rules = rules.ok_or(ExplainError::NoRules)?;
        let mut cert = Certificate::new(from.clone());
        let mut current = from.clone();
        for step in raw.iter() {
            let idx = if step.forward {
                step.rule as usize
            } else {
                rules
                    .inverse_of(step.rule as usize)
                    .ok_or_else(|| ExplainError::Irreversible(rules.rules()[step.rule as usize].name.clone()))?
            };
            let rule = &rules.rules()[idx];
            let position = Position(step.position.clone());
            current = apply_rule_at(&current, rule, &position)?;
            cert.steps.push(Step {
                rule: rule.name.clone(),
                position,
                result: current.clone(),
            });
        }
        debug_assert_eq!(&current, to);
        Ok(cert)
    }

    /// Edges from `a` to `b` through their lowest common ancestor, as
    /// (from, to, justification, forward) in traversal order.
    fn proof_path(&self, a: Id, b: Id) -> Vec<(Id, Id, Justification, bool)> {
        let mut depth_of = HashMap::new();
        let mut up_a = Vec::new();
        let mut cur = a;
        depth_of.insert(cur, 0usize);
        while let Some(edge) = self.proof[cur.index()] {
            up_a.push((cur, edge));
            cur = edge.parent;
            depth_of.insert(cur, up_a.len());
        }
        let mut up_b = Vec::new();
        let mut cur = b;
        while !depth_of.contains_key(&cur) {
            let edge = self.proof[cur.index()].expect("ids in one class share a proof tree");
            up_b.push((cur, edge));
            cur = edge.parent;
        }
        let lca_depth = depth_of[&cur];
        let mut path: Vec<_> = up_a[..lca_depth]
            .iter()
            .map(|(n, e)| (*n, e.parent, e.justification, e.forward))
            .collect();
        path.extend(
            up_b.iter()
                .rev()
                .map(|(n, e)| (e.parent, *n, e.justification, !e.forward)),
        );
        path
    }

    fn explain_ids(&self, a: Id, b: Id, memo: &mut Memo) -> Result<Rc<Vec<RawStep>>, ExplainError> {
        if a == b {
            return Ok(Rc::new(Vec::new()));
        }
        if let Some(done) = memo.get(&(a, b)) {
            return Ok(done.clone());
        }
        let mut out = Vec::new();
        for (from, to, just, forward) in self.proof_path(a, b) {
            match just {
                Justification::Rule(rule) => out.push(RawStep {
                    rule,
                    forward,
                    position: Vec::new(),
                }),
                Justification::Asserted => return Err(ExplainError::Asserted),
                Justification::Congruence => {
                    let (fa, fb) = (&self.nodes[from.index()], &self.nodes[to.index()]);
                    debug_assert_eq!(fa.op, fb.op);
                    for (i, (&ca, &cb)) in fa.children.iter().zip(fb.children.iter()).enumerate() {
                        let inner = self.explain_ids(ca, cb, memo)?;
                        out.extend(inner.iter().map(|s| {
                            let mut position = Vec::with_capacity(s.position.len() + 1);
                            position.push(i);
                            position.extend_from_slice(&s.position);
                            RawStep {
                                rule: s.rule,
                                forward: s.forward,
                                position,
                            }
                        }));
                    }
                }
            }
            if out.len() > MAX_STEPS {
                return Err(ExplainError::TooLong);
            }
        }
        let out = Rc::new(out);
        memo.insert((a, b), out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::egraph::SaturationLimits;
    use crate::lang::{parse_sexpr, Signature};
    use crate::rewrite::{verify_chain, RuleSet};

    fn t(s: &str) -> Term {
        parse_sexpr(s, &Signature::ring_char2()).unwrap()
    }

    #[test]
    fn identical_terms_give_empty_chain() {
        let mut g = EGraph::new(Arc::new(Signature::ring_char2()));
        g.add_term(&t("(+ x y)")).unwrap();
        let c = g.explain(&t("(+ x y)"), &t("(+ x y)")).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn explains_nested_commutation() {
        let mut g = EGraph::new(Arc::new(Signature::ring_char2()));
        g.add_term(&t("(sqr (+ x y))")).unwrap();
        let rules = RuleSet::ring_char2();
        g.saturate(&rules, &SaturationLimits::iterations(2));
        let to = t("(* (+ x y) (+ y x))");
        let c = g.explain(&t("(sqr (+ x y))"), &to).unwrap();
        assert_eq!(c.final_term(), &to);
        assert!(verify_chain(&c, &rules).is_ok());
    }

    #[test]
    fn asserted_unions_are_not_explained() {
        let mut g = EGraph::new(Arc::new(Signature::ring_char2()));
        let x = g.add_term(&t("x")).unwrap();
        let y = g.add_term(&t("y")).unwrap();
        g.union_classes(x, y);
        g.rebuild();
        assert_eq!(g.explain(&t("x"), &t("y")).unwrap_err(), ExplainError::Asserted);
    }

    #[test]
    fn unrelated_terms_rejected() {
        let mut g = EGraph::new(Arc::new(Signature::ring_char2()));
        g.add_term(&t("x")).unwrap();
        g.add_term(&t("y")).unwrap();
        assert!(matches!(
            g.explain(&t("x"), &t("y")),
            Err(ExplainError::NotEquivalent(..))
        ));
        assert!(matches!(
            g.explain(&t("x"), &t("0")),
            Err(ExplainError::NotRepresented(_))
        ));
    }
}
