//! E-graph with deferred congruence repair, snapshot-based equality
//! saturation, and justified unions for proof production.
//!
//! Every id names one concrete e-node as it was inserted (its children are
//! ids too), so every id also names one concrete term. Union-find classes
//! group ids; `memo` maps canonical e-nodes to the id that first produced
//! them. Unions are recorded in a proof forest (see `explain`).

mod explain;
mod snapshot;

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::lang::{Signature, Term};
use crate::rewrite::{Pattern, RuleSet};

pub use explain::ExplainError;
pub use snapshot::Snapshot;

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Id(u32);

impl Id {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub(crate) struct ENode {
    pub op: u32,
    pub children: Box<[Id]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Justification {
    /// Index into the e-graph's rule registry.
    Rule(u32),
    Congruence,
    /// Equality supplied by the caller, not derived from a rule.
    Asserted,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ProofEdge {
    pub parent: Id,
    pub justification: Justification,
    /// Whether the rule rewrote this id's term into the parent's term.
    pub forward: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EGraphError {
    #[error("symbol `{0}` is not in the e-graph signature")]
    UnknownSymbol(String),
    #[error("`{symbol}` expects {expected} children, found {found}")]
    Arity {
        symbol: String,
        expected: usize,
        found: usize,
    },
    #[error("node limit of {0} exceeded")]
    NodeLimit(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SaturationLimits {
    pub max_iterations: Option<usize>,
    pub max_nodes: Option<usize>,
    pub time_budget: Option<Duration>,
}

impl SaturationLimits {
    pub fn iterations(n: usize) -> Self {
        SaturationLimits {
            max_iterations: Some(n),
            ..Default::default()
        }
    }

    pub fn time(budget: Duration) -> Self {
        SaturationLimits {
            time_budget: Some(budget),
            ..Default::default()
        }
    }

    pub fn with_max_nodes(mut self, n: usize) -> Self {
        self.max_nodes = Some(n);
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = Some(n);
        self
    }

    pub fn with_time_budget(mut self, budget: Duration) -> Self {
        self.time_budget = Some(budget);
        self
    }

    pub fn is_bounded(&self) -> bool {
        self.max_iterations.is_some() || self.max_nodes.is_some() || self.time_budget.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Saturated,
    IterationLimit,
    NodeLimit,
    TimeLimit,
    /// The per-iteration callback asked to stop.
    Requested,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SaturationReport {
    pub iterations_run: usize,
    pub node_count: usize,
    pub class_count: usize,
    pub stop_reason: StopReason,
}

struct Match {
    rule: u32,
    subst: Vec<Id>,
}

pub struct EGraph {
    sig: Arc<Signature>,
    /// The concrete e-node each id was created for.
    nodes: Vec<ENode>,
    uf: Vec<Id>,
    /// Listed node ids per class leader; `None` for non-leaders.
    classes: Vec<Option<Vec<Id>>>,
    class_count: usize,
    /// Canonical e-node -> first id that produced it.
    memo: HashMap<ENode, Id>,
    /// Exact (uncanonical) e-node -> id, for idempotent insertion.
    exact: HashMap<ENode, Id>,
    proof: Vec<Option<ProofEdge>>,
    rules: Option<RuleSet>,
    dirty: bool,
}

impl fmt::Debug for EGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EGraph")
            .field("classes", &self.class_count)
            .field("nodes", &self.memo.len())
            .field("ids", &self.nodes.len())
            .finish()
    }
}

impl EGraph {
    pub fn new(sig: Arc<Signature>) -> Self {
        EGraph {
            sig,
            nodes: Vec::new(),
            uf: Vec::new(),
            classes: Vec::new(),
            class_count: 0,
            memo: HashMap::new(),
            exact: HashMap::new(),
            proof: Vec::new(),
            rules: None,
            dirty: false,
        }
    }

    pub fn signature(&self) -> &Arc<Signature> {
        &self.sig
    }

    /// The rule set used by the last saturation, which explanations cite.
    pub fn rules(&self) -> Option<&RuleSet> {
        self.rules.as_ref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of distinct canonical e-nodes.
    pub fn node_count(&self) -> usize {
        self.memo.len()
    }

    pub fn find(&self, id: Id) -> Id {
        let mut cur = id;
        while self.uf[cur.index()] != cur {
            cur = self.uf[cur.index()];
        }
        cur
    }

    fn find_mut(&mut self, id: Id) -> Id {
        let root = self.find(id);
        let mut cur = id;
        while self.uf[cur.index()] != root {
            let next = self.uf[cur.index()];
            self.uf[cur.index()] = root;
            cur = next;
        }
        root
    }

    fn canonicalize(&self, node: &ENode) -> ENode {
        ENode {
            op: node.op,
            children: node.children.iter().map(|&c| self.find(c)).collect(),
        }
    }

    fn fresh_id(&mut self, node: ENode) -> Id {
        let id = Id(self.nodes.len() as u32);
        self.nodes.push(node);
        self.uf.push(id);
        self.classes.push(None);
        self.proof.push(None);
        id
    }

    /// Inserts a concrete e-node and returns the id naming exactly it.
    fn add_uncanonical(&mut self, node: ENode) -> Id {
        if let Some(&id) = self.exact.get(&node) {
            return id;
        }
        let canon = self.canonicalize(&node);
        let id = self.fresh_id(node.clone());
        self.exact.insert(node, id);
        match self.memo.get(&canon) {
            Some(&existing) => {
                // Congruent to a listed node: join its class without listing.
                self.uf[id.index()] = self.find(existing);
                self.proof[id.index()] = Some(ProofEdge {
                    parent: existing,
                    justification: Justification::Congruence,
                    forward: true,
                });
            }
            None => {
                self.classes[id.index()] = Some(vec![id]);
                self.class_count += 1;
                self.memo.insert(canon, id);
            }
        }
        id
    }

    fn enode_for(&self, t: &Term, children: Box<[Id]>) -> Result<ENode, EGraphError> {
        let info = self
            .sig
            .get(t.op().as_str())
            .ok_or_else(|| EGraphError::UnknownSymbol(t.op().to_string()))?;
        if info.arity != children.len() {
            return Err(EGraphError::Arity {
                symbol: t.op().to_string(),
                expected: info.arity,
                found: children.len(),
            });
        }
        Ok(ENode {
            op: self.sig.index_of(t.op().as_str()).unwrap() as u32,
            children,
        })
    }

    /// Adds `t` and returns the id naming exactly `t` (not canonicalized).
    pub(crate) fn add_term_exact(&mut self, t: &Term) -> Result<Id, EGraphError> {
        let children = t
            .children()
            .iter()
            .map(|c| self.add_term_exact(c))
            .collect::<Result<Box<[Id]>, _>>()?;
        let node = self.enode_for(t, children)?;
        Ok(self.add_uncanonical(node))
    }

    /// Adds `t` and returns its canonical e-class id. Re-adding an equal
    /// term returns the same id and leaves the class count unchanged.
    pub fn add_term(&mut self, t: &Term) -> Result<Id, EGraphError> {
        let id = self.add_term_exact(t)?;
        Ok(self.find_mut(id))
    }

    /// Like [`EGraph::add_term`] but refuses to grow past `max_nodes`
    /// canonical e-nodes.
    pub fn add_term_bounded(&mut self, t: &Term, max_nodes: usize) -> Result<Id, EGraphError> {
        let id = self.add_term(t)?;
        if self.node_count() > max_nodes {
            return Err(EGraphError::NodeLimit(max_nodes));
        }
        Ok(id)
    }

    /// Merges the classes of two ids, recording why. Returns whether the
    /// classes were distinct.
    fn union(&mut self, a: Id, b: Id, justification: Justification) -> bool {
        let ra = self.find_mut(a);
        let rb = self.find_mut(b);
        if ra == rb {
            return false;
        }
        self.reroot(a);
        self.proof[a.index()] = Some(ProofEdge {
            parent: b,
            justification,
            forward: true,
        });
        let size_a = self.classes[ra.index()].as_ref().map_or(0, Vec::len);
        let size_b = self.classes[rb.index()].as_ref().map_or(0, Vec::len);
        let (keep, gone) = if size_a >= size_b { (ra, rb) } else { (rb, ra) };
        let moved = self.classes[gone.index()].take().unwrap_or_default();
        self.classes[keep.index()].get_or_insert_with(Vec::new).extend(moved);
        self.uf[gone.index()] = keep;
        self.class_count -= 1;
        self.dirty = true;
        true
    }

    /// Makes `id` the root of its proof tree by reversing the edges on its
    /// path to the current root.
    fn reroot(&mut self, id: Id) {
        let mut path = Vec::new();
        let mut cur = id;
        while let Some(edge) = self.proof[cur.index()] {
            path.push((cur, edge));
            cur = edge.parent;
        }
        for (child, edge) in path {
            self.proof[edge.parent.index()] = Some(ProofEdge {
                parent: child,
                justification: edge.justification,
                forward: !edge.forward,
            });
        }
        self.proof[id.index()] = None;
    }

    /// Asserts that two classes are equal without a rule justification.
    /// Explanations that need this equality fail. Call [`EGraph::rebuild`]
    /// before querying.
    pub fn union_classes(&mut self, a: Id, b: Id) -> bool {
        self.union(a, b, Justification::Asserted)
    }

    pub fn is_clean(&self) -> bool {
        !self.dirty
    }

    /// Restores the hashcons and congruence invariants after unions.
    pub fn rebuild(&mut self) {
        loop {
            let mut memo: HashMap<ENode, Id> = HashMap::with_capacity(self.memo.len());
            let mut pending = Vec::new();
            for leader in 0..self.classes.len() {
                let Some(list) = &self.classes[leader] else { continue };
                for &nid in list {
                    let key = self.canonicalize(&self.nodes[nid.index()]);
                    match memo.entry(key) {
                        Entry::Occupied(o) => {
                            let other = *o.get();
                            if self.find(other) != self.find(nid) {
                                pending.push((other, nid));
                            }
                        }
                        Entry::Vacant(v) => {
                            v.insert(nid);
                        }
                    }
                }
            }
            if pending.is_empty() {
                self.memo = memo;
                break;
            }
            for (a, b) in pending {
                self.union(a, b, Justification::Congruence);
            }
        }
        for leader in 0..self.classes.len() {
            let Some(list) = self.classes[leader].take() else {
                continue;
            };
            let kept: Vec<Id> = list
                .into_iter()
                .filter(|&nid| self.memo.get(&self.canonicalize(&self.nodes[nid.index()])) == Some(&nid))
                .collect();
            self.classes[leader] = Some(kept);
        }
        for i in 0..self.uf.len() {
            self.find_mut(Id(i as u32));
        }
        self.dirty = false;
    }

    fn assert_clean(&self) {
        assert!(!self.dirty, "e-graph has pending unions; call rebuild() first");
    }

    /// Canonical class ids in ascending order.
    pub fn class_ids(&self) -> Vec<Id> {
        (0..self.classes.len())
            .filter(|&i| self.classes[i].is_some())
            .map(|i| Id(i as u32))
            .collect()
    }

    /// Canonical e-nodes of a class as (operator index, child classes).
    pub(crate) fn class_nodes(&self, class: Id) -> impl Iterator<Item = ENode> + '_ {
        let leader = self.find(class);
        self.classes[leader.index()]
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .map(move |&nid| self.canonicalize(&self.nodes[nid.index()]))
    }

    /// The class of `t`, if `t` is represented.
    pub fn lookup(&self, t: &Term) -> Option<Id> {
        self.assert_clean();
        let children = t
            .children()
            .iter()
            .map(|c| self.lookup(c))
            .collect::<Option<Box<[Id]>>>()?;
        let op = self.sig.index_of(t.op().as_str())? as u32;
        self.memo.get(&ENode { op, children }).map(|&id| self.find(id))
    }

    /// Whether `t` is extractable from the class `root`.
    pub fn represents(&self, root: Id, t: &Term) -> bool {
        self.lookup(t) == Some(self.find(root))
    }

    /// Whether two terms are both represented and equivalent.
    pub fn equivalent(&self, a: &Term, b: &Term) -> bool {
        matches!((self.lookup(a), self.lookup(b)), (Some(x), Some(y)) if x == y)
    }

    fn search(&self, pattern: &CompiledPattern, out: &mut Vec<Vec<Id>>, rule: u32, matches: &mut Vec<Match>) {
        let Some(root_op) = pattern.root_op() else { return };
        for leader in 0..self.classes.len() {
            let Some(list) = &self.classes[leader] else { continue };
            if !list.iter().any(|&n| self.nodes[n.index()].op == root_op) {
                continue;
            }
            out.clear();
            let mut subst = vec![None; pattern.num_vars];
            self.ematch(&pattern.root, Id(leader as u32), &mut subst, &mut |s| {
                out.push(s.iter().map(|v| v.expect("all variables bound")).collect())
            });
            matches.extend(out.drain(..).map(|subst| Match { rule, subst }));
        }
    }

    fn ematch(&self, p: &PatNode, class: Id, subst: &mut Vec<Option<Id>>, yield_match: &mut dyn FnMut(&[Option<Id>])) {
        self.ematch_seq(
            std::slice::from_ref(p),
            std::slice::from_ref(&class),
            subst,
            yield_match,
        )
    }

    /// Matches `pats[i]` against `classes[i]` for all i, backtracking.
    fn ematch_seq(
        &self,
        pats: &[PatNode],
        classes: &[Id],
        subst: &mut Vec<Option<Id>>,
        yield_match: &mut dyn FnMut(&[Option<Id>]),
    ) {
        let Some((p, rest_p)) = pats.split_first() else {
            yield_match(subst);
            return;
        };
        let class = self.find(classes[0]);
        let rest_c = &classes[1..];
        match p {
            PatNode::Var(v) => match subst[*v] {
                Some(bound) => {
                    if bound == class {
                        self.ematch_seq(rest_p, rest_c, subst, yield_match);
                    }
                }
                None => {
                    subst[*v] = Some(class);
                    self.ematch_seq(rest_p, rest_c, subst, yield_match);
                    subst[*v] = None;
                }
            },
            PatNode::Node(op, children) => {
                let list = self.classes[class.index()].as_deref().unwrap_or(&[]);
                for &nid in list {
                    let node = &self.nodes[nid.index()];
                    if node.op != *op || node.children.len() != children.len() {
                        continue;
                    }
                    let mut pats2: Vec<PatNode> = children.clone();
                    pats2.extend_from_slice(rest_p);
                    let mut classes2: Vec<Id> = node.children.to_vec();
                    classes2.extend_from_slice(rest_c);
                    self.ematch_seq(&pats2, &classes2, subst, yield_match);
                }
            }
        }
    }

    /// Instantiates a pattern node by node, returning the exact id of the
    /// instance root.
    fn instantiate(&mut self, p: &PatNode, subst: &[Id]) -> Id {
        match p {
            PatNode::Var(v) => self.find_mut(subst[*v]),
            PatNode::Node(op, children) => {
                let kids: Box<[Id]> = children.iter().map(|c| self.instantiate(c, subst)).collect();
                self.add_uncanonical(ENode {
                    op: *op,
                    children: kids,
                })
            }
        }
    }

    /// Runs equality saturation until fixpoint or a limit.
    pub fn saturate(&mut self, rules: &RuleSet, limits: &SaturationLimits) -> SaturationReport {
        self.saturate_with(rules, limits, |_, _| false)
    }

    /// Like [`EGraph::saturate`], calling `after_iteration(graph, n)` after
    /// every completed iteration `n` (1-based); returning `true` stops.
    pub fn saturate_with(
        &mut self,
        rules: &RuleSet,
        limits: &SaturationLimits,
        mut after_iteration: impl FnMut(&EGraph, usize) -> bool,
    ) -> SaturationReport {
        let start = Instant::now();
        let deadline = limits.time_budget.map(|d| start + d);
        let compiled: Vec<(CompiledPattern, CompiledPattern)> = rules
            .rules()
            .iter()
            .map(|r| {
                let (lhs, vars) = CompiledPattern::compile(&r.lhs, &self.sig, Vec::new());
                let (rhs, _) = CompiledPattern::compile(&r.rhs, &self.sig, vars);
                (lhs, rhs)
            })
            .collect();
        self.rules = Some(rules.clone());
        if self.dirty {
            self.rebuild();
        }
        let timed_out = |now: Instant| deadline.is_some_and(|d| now >= d);
        let mut iterations = 0;
        let stop_reason = loop {
            if limits.max_iterations.is_some_and(|m| iterations >= m) {
                break StopReason::IterationLimit;
            }
            if timed_out(Instant::now()) {
                break StopReason::TimeLimit;
            }
            if limits.max_nodes.is_some_and(|m| self.node_count() >= m) {
                break StopReason::NodeLimit;
            }
            iterations += 1;
            let before = (self.node_count(), self.class_count);

            let mut matches = Vec::new();
            let mut scratch = Vec::new();
            let mut aborted = None;
            for (ri, (lhs, _)) in compiled.iter().enumerate() {
                if lhs.num_vars > 0 || lhs.root_op().is_some() {
                    self.search(lhs, &mut scratch, ri as u32, &mut matches);
                }
                if timed_out(Instant::now()) {
                    aborted = Some(StopReason::TimeLimit);
                    break;
                }
            }
            if aborted.is_none() {
                for (k, m) in matches.iter().enumerate() {
                    let (lhs, rhs) = &compiled[m.rule as usize];
                    let l = self.instantiate(&lhs.root, &m.subst);
                    let r = self.instantiate(&rhs.root, &m.subst);
                    self.union(l, r, Justification::Rule(m.rule));
                    if limits.max_nodes.is_some_and(|max| self.node_count() > max) {
                        aborted = Some(StopReason::NodeLimit);
                        break;
                    }
                    if k % 256 == 255 && timed_out(Instant::now()) {
                        aborted = Some(StopReason::TimeLimit);
                        break;
                    }
                }
            }
            self.rebuild();
            if let Some(reason) = aborted {
                break reason;
            }
            if after_iteration(self, iterations) {
                break StopReason::Requested;
            }
            if (self.node_count(), self.class_count) == before {
                break StopReason::Saturated;
            }
        };
        SaturationReport {
            iterations_run: iterations,
            node_count: self.node_count(),
            class_count: self.class_count,
            stop_reason,
        }
    }

    /// Checks hashcons uniqueness, congruence closure and union-find shape.
    /// Returns a description of the first violation.
    pub fn audit(&self) -> Result<(), String> {
        if self.dirty {
            return Err("pending unions".into());
        }
        let mut seen: HashMap<ENode, Id> = HashMap::new();
        let mut listed = 0;
        for leader in self.class_ids() {
            if self.find(leader) != leader {
                return Err(format!("{leader} is listed but not a root"));
            }
            for node in self.class_nodes(leader) {
                listed += 1;
                if let Some(prev) = seen.insert(node.clone(), leader) {
                    return Err(format!("e-node {node:?} appears in {prev} and {leader}"));
                }
                match self.memo.get(&node) {
                    Some(&m) if self.find(m) == leader => {}
                    _ => return Err(format!("memo disagrees for {node:?}")),
                }
            }
        }
        if listed != self.memo.len() {
            return Err(format!("{listed} listed nodes but {} memo entries", self.memo.len()));
        }
        if self.class_ids().len() != self.class_count {
            return Err("class count out of sync".into());
        }
        for i in 0..self.uf.len() {
            let r = self.find(Id(i as u32));
            if self.find(r) != r {
                return Err("find is not idempotent".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum PatNode {
    Var(usize),
    Node(u32, Vec<PatNode>),
}

struct CompiledPattern {
    root: PatNode,
    num_vars: usize,
}

impl CompiledPattern {
    /// Compiles against the signature. Symbols unknown to the signature
    /// make the pattern unmatchable (operator index `u32::MAX`).
    fn compile(p: &Pattern, sig: &Signature, mut vars: Vec<crate::lang::Symbol>) -> (Self, Vec<crate::lang::Symbol>) {
        fn go(p: &Pattern, sig: &Signature, vars: &mut Vec<crate::lang::Symbol>) -> PatNode {
            match p {
                Pattern::Var(v) => {
                    let i = vars.iter().position(|x| x == v).unwrap_or_else(|| {
                        vars.push(v.clone());
                        vars.len() - 1
                    });
                    PatNode::Var(i)
                }
                Pattern::Node(op, cs) => {
                    let idx = sig.index_of(op.as_str()).map_or(u32::MAX, |i| i as u32);
                    PatNode::Node(idx, cs.iter().map(|c| go(c, sig, vars)).collect())
                }
            }
        }
        let root = go(p, sig, &mut vars);
        (
            CompiledPattern {
                root,
                num_vars: vars.len(),
            },
            vars,
        )
    }

    fn root_op(&self) -> Option<u32> {
        match &self.root {
            PatNode::Node(op, _) if *op != u32::MAX => Some(*op),
            _ => None,
        }
    }
}
