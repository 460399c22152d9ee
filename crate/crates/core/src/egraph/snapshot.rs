//! Read-only views: the sub-e-graph reachable from a root, term
//! enumeration, and a textual dump.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::{EGraph, Id};
use crate::lang::{Signature, Term};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SNode {
    pub op: u32,
    /// Indices into [`Snapshot::classes`].
    pub children: Vec<usize>,
}

/// The classes reachable from a root, re-indexed densely. Classes are in
/// ascending canonical-id order and nodes within a class are sorted.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub sig: Arc<Signature>,
    pub root: usize,
    pub ids: Vec<Id>,
    pub classes: Vec<Vec<SNode>>,
}

impl EGraph {
    pub fn snapshot(&self, root: Id) -> Snapshot {
        self.assert_clean();
        let root = self.find(root);
        let mut seen = vec![root];
        let mut stack = vec![root];
        let mut mark = std::collections::HashSet::from([root]);
        while let Some(c) = stack.pop() {
            for n in self.class_nodes(c) {
                for &ch in n.children.iter() {
                    if mark.insert(ch) {
                        seen.push(ch);
                        stack.push(ch);
                    }
                }
            }
        }
        seen.sort();
        let index: HashMap<Id, usize> = seen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let classes = seen
            .iter()
            .map(|&c| {
                let mut nodes: Vec<SNode> = self
                    .class_nodes(c)
                    .map(|n| SNode {
                        op: n.op,
                        children: n.children.iter().map(|ch| index[ch]).collect(),
                    })
                    .collect();
                nodes.sort();
                nodes
            })
            .collect();
        Snapshot {
            sig: self.sig.clone(),
            root: index[&root],
            ids: seen,
            classes,
        }
    }

    /// Distinct terms of depth at most `max_depth` represented by `root`,
    /// in ascending (size, lexicographic) order, at most `max_count` of them.
    pub fn enumerate_terms(&self, root: Id, max_depth: usize, max_count: usize) -> Vec<Term> {
        self.snapshot(root).enumerate(max_depth, max_count)
    }

    /// One line per class in canonical-id order: `cN: node | node ...`,
    /// with children printed as class ids.
    pub fn dump(&self) -> String {
        self.assert_clean();
        let mut out = String::new();
        for c in self.class_ids() {
            let mut nodes: Vec<String> = self
                .class_nodes(c)
                .map(|n| {
                    let op = self.sig.symbol(n.op as usize);
                    if n.children.is_empty() {
                        op.to_string()
                    } else {
                        let kids: Vec<String> = n.children.iter().map(|k| k.to_string()).collect();
                        format!("({} {})", op, kids.join(" "))
                    }
                })
                .collect();
            nodes.sort();
            let _ = writeln!(out, "{}: {}", c, nodes.join(" | "));
        }
        out
    }
}

impl Snapshot {
    pub fn node_term(&self, class: usize, node: &SNode, children: Vec<Term>) -> Term {
        let _ = class;
        Term::new(self.sig.symbol(node.op as usize).clone(), children)
    }

    pub fn node_count(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    /// Largest term size per class within `depth` levels; `None` when the
    /// class has no term that shallow.
    fn size_bounds(&self, depth: usize) -> Vec<Vec<Option<(usize, usize)>>> {
        // bounds[d][c] = (min size, max size) with depth <= d
        let mut bounds = vec![vec![None; self.classes.len()]];
        for d in 1..=depth {
            let prev = &bounds[d - 1];
            let row: Vec<Option<(usize, usize)>> = self
                .classes
                .iter()
                .map(|nodes| {
                    let mut best: Option<(usize, usize)> = None;
                    for n in nodes {
                        let mut lo = 1;
                        let mut hi = 1;
                        let mut ok = true;
                        for &ch in &n.children {
                            match prev[ch] {
                                Some((a, b)) => {
                                    lo += a;
                                    hi += b;
                                }
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if ok {
                            best = Some(match best {
                                None => (lo, hi),
                                Some((a, b)) => (a.min(lo), b.max(hi)),
                            });
                        }
                    }
                    best
                })
                .collect();
            bounds.push(row);
        }
        bounds
    }

    pub fn enumerate(&self, max_depth: usize, max_count: usize) -> Vec<Term> {
        if max_depth == 0 || max_count == 0 {
            return Vec::new();
        }
        let bounds = self.size_bounds(max_depth);
        let Some((lo, hi)) = bounds[max_depth][self.root] else {
            return Vec::new();
        };
        let mut memo = HashMap::new();
        let mut out = Vec::new();
        for size in lo..=hi {
            let mut terms = self
                .terms_of(self.root, size, max_depth, &bounds, &mut memo)
                .as_ref()
                .clone();
            terms.sort_by(|a, b| a.cmp_size_lex(b));
            for t in terms {
                if out.len() == max_count {
                    return out;
                }
                out.push(t);
            }
        }
        out
    }

    /// All terms of exactly `size` and depth at most `depth` in `class`.
    fn terms_of(
        &self,
        class: usize,
        size: usize,
        depth: usize,
        bounds: &[Vec<Option<(usize, usize)>>],
        memo: &mut HashMap<(usize, usize, usize), std::rc::Rc<Vec<Term>>>,
    ) -> std::rc::Rc<Vec<Term>> {
        if let Some(r) = memo.get(&(class, size, depth)) {
            return r.clone();
        }
        let mut out = Vec::new();
        let fits = matches!(bounds[depth][class], Some((lo, hi)) if lo <= size && size <= hi);
        if fits {
            for n in &self.classes[class] {
                if n.children.is_empty() {
                    if size == 1 {
                        out.push(self.node_term(class, n, Vec::new()));
                    }
                    continue;
                }
                if size < 1 + n.children.len() {
                    continue;
                }
                let partial: Vec<Vec<Term>> = vec![Vec::new()];
                self.products(n, 0, size - 1, depth - 1, bounds, memo, &partial, &mut out, class);
            }
        }
        let out = std::rc::Rc::new(out);
        memo.insert((class, size, depth), out.clone());
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn products(
        &self,
        n: &SNode,
        i: usize,
        remaining: usize,
        depth: usize,
        bounds: &[Vec<Option<(usize, usize)>>],
        memo: &mut HashMap<(usize, usize, usize), std::rc::Rc<Vec<Term>>>,
        partial: &[Vec<Term>],
        out: &mut Vec<Term>,
        class: usize,
    ) {
        if i == n.children.len() {
            if remaining == 0 {
                for kids in partial.iter() {
                    out.push(self.node_term(class, n, kids.clone()));
                }
            }
            return;
        }
        let later = n.children.len() - i - 1;
        let Some((lo, hi)) = bounds[depth][n.children[i]] else {
            return;
        };
        for s in lo..=hi.min(remaining.saturating_sub(later)) {
            let choices = self.terms_of(n.children[i], s, depth, bounds, memo);
            if choices.is_empty() {
                continue;
            }
            let mut next: Vec<Vec<Term>> = Vec::with_capacity(partial.len() * choices.len());
            for p in partial.iter() {
                for c in choices.iter() {
                    let mut q = p.clone();
                    q.push(c.clone());
                    next.push(q);
                }
            }
            self.products(n, i + 1, remaining - s, depth, bounds, memo, &next, out, class);
        }
    }
}
