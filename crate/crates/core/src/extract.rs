//! Model-guided extraction: depth-bounded partition weights, sampling,
//! most-probable-term extraction, and the oracle refinement loop.
//!
//! All weights are natural logs. For a class `c`, context row `r` and depth
//! budget `d`, `W(c, r, d)` is the log of the summed model probability of
//! every term of depth at most `d` extractable from `c`, where the root of
//! the term is scored in context `r`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bigram::{BigramError, BigramModel, UpdateConfig};
use crate::egraph::{EGraph, Id, Snapshot};
use crate::lang::Term;
use crate::oracle::{Choice, GoalContext, Oracle, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("no term of depth at most {0} is extractable from the root")]
    ZeroWeight(usize),
    #[error("refinement needs at least one round")]
    NoRounds,
    #[error(transparent)]
    Model(#[from] BigramError),
}

/// Two log-probabilities closer than this are treated as equal when
/// breaking ties.
pub const LOG_TIE_TOLERANCE: f64 = 1e-10;

pub fn log_close(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= LOG_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Default depth budget for a phase started from `input`.
pub fn default_max_depth(input: &Term) -> usize {
    2 * input.depth() + 2
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.filter(|x| *x > f64::NEG_INFINITY).collect();
    let Some(max) = xs.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub struct WeightTable<'a> {
    snap: &'a Snapshot,
    model: &'a BigramModel,
    max_depth: usize,
    /// Per class: the context rows it can occur in.
    rows: Vec<Vec<usize>>,
    /// `w[c][k][d]` for row `rows[c][k]`.
    w: Vec<Vec<Vec<f64>>>,
    /// `s[c][n][d]`: log of the product of child weights of node `n`.
    s: Vec<Vec<Vec<f64>>>,
    log_gamma: Vec<Vec<f64>>,
}

impl<'a> WeightTable<'a> {
    pub fn build(snap: &'a Snapshot, model: &'a BigramModel, max_depth: usize) -> Self {
        let n_classes = snap.classes.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        rows[snap.root].push(BigramModel::ROOT);
        for nodes in &snap.classes {
            for n in nodes {
                for (i, &ch) in n.children.iter().enumerate() {
                    rows[ch].push(model.child_row(n.op as usize, i));
                }
            }
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        let log_gamma: Vec<Vec<f64>> = (0..model.row_count())
            .map(|r| model.row(r).iter().map(|p| p.ln()).collect())
            .collect();
        let mut w: Vec<Vec<Vec<f64>>> = rows
            .iter()
            .map(|r| vec![vec![f64::NEG_INFINITY; max_depth + 1]; r.len()])
            .collect();
        let mut s: Vec<Vec<Vec<f64>>> = snap
            .classes
            .iter()
            .map(|nodes| vec![vec![f64::NEG_INFINITY; max_depth + 1]; nodes.len()])
            .collect();
        let mut table = WeightTable {
            snap,
            model,
            max_depth,
            rows,
            w: Vec::new(),
            s: Vec::new(),
            log_gamma,
        };
        for d in 1..=max_depth {
            for (c, nodes) in snap.classes.iter().enumerate() {
                for (k, n) in nodes.iter().enumerate() {
                    let mut acc = 0.0;
                    for (i, &ch) in n.children.iter().enumerate() {
                        let row = model.child_row(n.op as usize, i);
                        acc += w[ch][table.row_slot(ch, row)][d - 1];
                    }
                    s[c][k][d] = acc;
                }
            }
            for (c, nodes) in snap.classes.iter().enumerate() {
                for (slot, &row) in table.rows[c].iter().enumerate() {
                    w[c][slot][d] = log_sum_exp(
                        nodes
                            .iter()
                            .enumerate()
                            .map(|(k, n)| table.log_gamma[row][n.op as usize] + s[c][k][d]),
                    );
                }
            }
        }
        table.w = w;
        table.s = s;
        table
    }

    fn row_slot(&self, class: usize, row: usize) -> usize {
        self.rows[class]
            .iter()
            .position(|&r| r == row)
            .expect("context row registered for class")
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// `W(class, row, depth)` in log space.
    pub fn log_weight(&self, class: usize, row: usize, depth: usize) -> f64 {
        self.w[class][self.row_slot(class, row)][depth]
    }

    /// Log of the total probability mass at the root.
    pub fn log_total(&self) -> f64 {
        self.log_weight(self.snap.root, BigramModel::ROOT, self.max_depth)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Term, ExtractError> {
        if self.log_total() == f64::NEG_INFINITY {
            return Err(ExtractError::ZeroWeight(self.max_depth));
        }
        Ok(self.sample_at(self.snap.root, BigramModel::ROOT, self.max_depth, rng))
    }

    fn sample_at<R: Rng + ?Sized>(&self, class: usize, row: usize, depth: usize, rng: &mut R) -> Term {
        let total = self.log_weight(class, row, depth);
        let nodes = &self.snap.classes[class];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = None;
        for (k, n) in nodes.iter().enumerate() {
            let lw = self.log_gamma[row][n.op as usize] + self.s[class][k][depth];
            if lw == f64::NEG_INFINITY {
                continue;
            }
            pick = Some(k);
            acc += (lw - total).exp();
            if u < acc {
                break;
            }
        }
        let n = &nodes[pick.expect("positive weight implies a viable node")];
        let children = n
            .children
            .iter()
            .enumerate()
            .map(|(i, &ch)| self.sample_at(ch, self.model.child_row(n.op as usize, i), depth - 1, rng))
            .collect();
        self.snap.node_term(class, n, children)
    }

    /// Draws top-down choosing each e-node with probability proportional to
    /// γ(op | context) alone among the nodes that fit the remaining depth,
    /// ignoring the mass of the subterms below.
    pub fn sample_local<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Term, ExtractError> {
        if self.log_total() == f64::NEG_INFINITY {
            return Err(ExtractError::ZeroWeight(self.max_depth));
        }
        Ok(self.sample_local_at(self.snap.root, BigramModel::ROOT, self.max_depth, rng))
    }

    fn sample_local_at<R: Rng + ?Sized>(&self, class: usize, row: usize, depth: usize, rng: &mut R) -> Term {
        let nodes = &self.snap.classes[class];
        let viable: Vec<(usize, f64)> = nodes
            .iter()
            .enumerate()
            .filter(|(k, _)| self.s[class][*k][depth] > f64::NEG_INFINITY)
            .map(|(k, n)| (k, self.model.prob_at(row, n.op as usize)))
            .collect();
        let total: f64 = viable.iter().map(|(_, p)| p).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = viable[viable.len() - 1].0;
        for &(k, p) in &viable {
            if u < p {
                pick = k;
                break;
            }
            u -= p;
        }
        let n = &nodes[pick];
        let children = n
            .children
            .iter()
            .enumerate()
            .map(|(i, &ch)| self.sample_local_at(ch, self.model.child_row(n.op as usize, i), depth - 1, rng))
            .collect();
        self.snap.node_term(class, n, children)
    }

    /// Exact log-probability that [`WeightTable::sample`] returns `t`;
    /// negative infinity if `t` cannot be drawn.
    pub fn induced_log_prob(&self, t: &Term) -> f64 {
        let index = self.snap_index();
        self.induced_at(t, self.snap.root, BigramModel::ROOT, self.max_depth, &index)
    }

    fn snap_index(&self) -> HashMap<(u32, Vec<usize>), (usize, usize)> {
        let mut index = HashMap::new();
        for (c, nodes) in self.snap.classes.iter().enumerate() {
            for (k, n) in nodes.iter().enumerate() {
                index.insert((n.op, n.children.clone()), (c, k));
            }
        }
        index
    }

    fn induced_at(
        &self,
        t: &Term,
        class: usize,
        row: usize,
        depth: usize,
        index: &HashMap<(u32, Vec<usize>), (usize, usize)>,
    ) -> f64 {
        if depth == 0 {
            return f64::NEG_INFINITY;
        }
        let Some((c, k)) = self.locate(t, index) else {
            return f64::NEG_INFINITY;
        };
        if c != class {
            return f64::NEG_INFINITY;
        }
        let n = &self.snap.classes[c][k];
        let mut lp = self.log_gamma[row][n.op as usize] + self.s[c][k][depth] - self.log_weight(c, row, depth);
        for (i, (sub, &ch)) in t.children().iter().zip(&n.children).enumerate() {
            lp += self.induced_at(sub, ch, self.model.child_row(n.op as usize, i), depth - 1, index);
        }
        lp
    }

    /// The snapshot class and node index of a term, if represented.
    fn locate(&self, t: &Term, index: &HashMap<(u32, Vec<usize>), (usize, usize)>) -> Option<(usize, usize)> {
        let op = self.snap.sig.index_of(t.op().as_str())? as u32;
        let kids = t
            .children()
            .iter()
            .map(|c| self.locate(c, index).map(|(cls, _)| cls))
            .collect::<Option<Vec<usize>>>()?;
        index.get(&(op, kids)).copied()
    }
}

/// Orders candidates: higher log-probability first, then smaller size,
/// then lexicographic s-expression.
pub fn compare_candidates(a: (f64, &Term), b: (f64, &Term)) -> Ordering {
    if !log_close(a.0, b.0) {
        return b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal);
    }
    a.1.cmp_size_lex(b.1)
}

/// The most probable term of depth at most `max_depth`, ties broken by size
/// then lexicographic s-expression.
pub fn argmax(snap: &Snapshot, model: &BigramModel, max_depth: usize) -> Result<Term, ExtractError> {
    Argmax::new(snap, model, max_depth).run()
}

#[derive(Clone, Copy)]
struct Best {
    logp: f64,
    size: usize,
    node: usize,
}

struct Argmax<'a> {
    snap: &'a Snapshot,
    model: &'a BigramModel,
    max_depth: usize,
    /// `best[d][(class, row)]`.
    best: Vec<HashMap<(usize, usize), Best>>,
}

impl<'a> Argmax<'a> {
    fn new(snap: &'a Snapshot, model: &'a BigramModel, max_depth: usize) -> Self {
        Argmax {
            snap,
            model,
            max_depth,
            best: Vec::new(),
        }
    }

    fn run(mut self) -> Result<Term, ExtractError> {
        let mut needed: Vec<Vec<usize>> = vec![Vec::new(); self.snap.classes.len()];
        needed[self.snap.root].push(BigramModel::ROOT);
        for nodes in &self.snap.classes {
            for n in nodes {
                for (i, &ch) in n.children.iter().enumerate() {
                    needed[ch].push(self.model.child_row(n.op as usize, i));
                }
            }
        }
        for r in needed.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        self.best.push(HashMap::new());
        for d in 1..=self.max_depth {
            // per node: summed child log-probabilities and sizes
            let mut node_best: Vec<Vec<Option<(f64, usize)>>> = Vec::with_capacity(self.snap.classes.len());
            for nodes in &self.snap.classes {
                let row: Vec<Option<(f64, usize)>> = nodes
                    .iter()
                    .map(|n| {
                        let mut lp = 0.0;
                        let mut size = 1;
                        for (i, &ch) in n.children.iter().enumerate() {
                            let b = self.best[d - 1].get(&(ch, self.model.child_row(n.op as usize, i)))?;
                            lp += b.logp;
                            size += b.size;
                        }
                        Some((lp, size))
                    })
                    .collect();
                node_best.push(row);
            }
            let mut layer = HashMap::new();
            for (c, nodes) in self.snap.classes.iter().enumerate() {
                for &row in &needed[c] {
                    let mut cur: Option<Best> = None;
                    for (k, n) in nodes.iter().enumerate() {
                        let Some((lp, size)) = node_best[c][k] else { continue };
                        let cand = Best {
                            logp: lp + self.model.prob_at(row, n.op as usize).ln(),
                            size,
                            node: k,
                        };
                        cur = Some(match cur {
                            None => cand,
                            Some(prev) => {
                                if self.better(d, c, row, cand, prev) {
                                    cand
                                } else {
                                    prev
                                }
                            }
                        });
                    }
                    if let Some(b) = cur {
                        layer.insert((c, row), b);
                    }
                }
            }
            self.best.push(layer);
        }
        if !self.best[self.max_depth].contains_key(&(self.snap.root, BigramModel::ROOT)) {
            return Err(ExtractError::ZeroWeight(self.max_depth));
        }
        Ok(self.materialize(None, self.max_depth, self.snap.root, BigramModel::ROOT))
    }

    fn better(&self, d: usize, c: usize, row: usize, cand: Best, prev: Best) -> bool {
        if !log_close(cand.logp, prev.logp) {
            return cand.logp > prev.logp;
        }
        if cand.size != prev.size {
            return cand.size < prev.size;
        }
        let a = self.materialize(Some(cand.node), d, c, row);
        let b = self.materialize(Some(prev.node), d, c, row);
        a.cmp_size_lex(&b) == Ordering::Less
    }

    /// Builds the best term at (class, row, depth), optionally forcing the
    /// top node.
    fn materialize(&self, force: Option<usize>, d: usize, c: usize, row: usize) -> Term {
        let k = force.unwrap_or_else(|| self.best[d][&(c, row)].node);
        let n = &self.snap.classes[c][k];
        let children = n
            .children
            .iter()
            .enumerate()
            .map(|(i, &ch)| self.materialize(None, d - 1, ch, self.model.child_row(n.op as usize, i)))
            .collect();
        self.snap.node_term(c, n, children)
    }
}

/// How candidates are drawn from the e-graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Each term with probability proportional to its model probability.
    #[default]
    Exact,
    /// Per-class node choice by γ alone; see [`WeightTable::sample_local`].
    Local,
}

impl std::str::FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Sampler::Exact),
            "local" => Ok(Sampler::Local),
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub rounds: usize,
    pub alpha: f64,
    /// `None` uses [`default_max_depth`] of the phase input.
    pub max_depth: Option<usize>,
    pub retries_per_round: usize,
    pub rng_seed: u64,
    pub sampler: Sampler,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            rounds: 10,
            alpha: 1.5,
            max_depth: None,
            retries_per_round: 3,
            rng_seed: 0,
            sampler: Sampler::Exact,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<UpdateConfig, ExtractError> {
        if self.rounds == 0 {
            return Err(ExtractError::NoRounds);
        }
        Ok(UpdateConfig::new(self.alpha)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    pub phase: usize,
    pub round: usize,
    pub current: String,
    pub candidate: String,
    /// `None` when the round was skipped or the oracle failed.
    pub answer: Option<Choice>,
    pub attempts: usize,
    pub latency_ms: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct CheckpointOutcome {
    pub term: Term,
    pub model: BigramModel,
    pub log: Vec<QueryRecord>,
    pub queries: usize,
    /// Set when the oracle failed; `term` is the result before the failure.
    pub failure: Option<OracleError>,
}

/// Samples an initial result, then for each round samples a candidate,
/// asks the oracle, and updates the model and result.
pub fn extract_checkpoint(
    g: &EGraph,
    root: Id,
    m0: &BigramModel,
    oracle: &mut dyn Oracle,
    ctx: &GoalContext,
    cfg: &RefineConfig,
    phase: usize,
) -> Result<CheckpointOutcome, ExtractError> {
    let update_cfg = cfg.validate()?;
    let snap = g.snapshot(root);
    let max_depth = cfg.max_depth.unwrap_or_else(|| default_max_depth(&ctx.phase_input));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut model = m0.clone();
    let draw = |table: &WeightTable, rng: &mut ChaCha8Rng| match cfg.sampler {
        Sampler::Exact => table.sample(rng),
        Sampler::Local => table.sample_local(rng),
    };
    let mut result = draw(&WeightTable::build(&snap, &model, max_depth), &mut rng)?;
    let mut log = Vec::new();
    let mut queries = 0;
    for round in 1..=cfg.rounds {
        let table = WeightTable::build(&snap, &model, max_depth);
        let mut candidate = draw(&table, &mut rng)?;
        let mut tries = 0;
        while candidate == result && tries < cfg.retries_per_round {
            candidate = draw(&table, &mut rng)?;
            tries += 1;
        }
        if candidate == result {
            log.push(QueryRecord {
                phase,
                round,
                current: result.to_string(),
                candidate: candidate.to_string(),
                answer: None,
                attempts: 0,
                latency_ms: 0.0,
                error: None,
            });
            continue;
        }
        let started = Instant::now();
        let answer = oracle.compare(ctx, &result, &candidate);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        queries += 1;
        match answer {
            Ok(pref) => {
                log.push(QueryRecord {
                    phase,
                    round,
                    current: result.to_string(),
                    candidate: candidate.to_string(),
                    answer: Some(pref.choice),
                    attempts: pref.attempts,
                    latency_ms,
                    error: None,
                });
                match pref.choice {
                    Choice::Candidate => {
                        model = model.update(&candidate, &result, update_cfg)?;
                        result = candidate;
                    }
                    Choice::Current => {
                        model = model.update(&result, &candidate, update_cfg)?;
                    }
                }
            }
            Err(e) => {
                log.push(QueryRecord {
                    phase,
                    round,
                    current: result.to_string(),
                    candidate: candidate.to_string(),
                    answer: None,
                    attempts: 0,
                    latency_ms,
                    error: Some(e.to_string()),
                });
                return Ok(CheckpointOutcome {
                    term: result,
                    model,
                    log,
                    queries,
                    failure: Some(e),
                });
            }
        }
    }
    Ok(CheckpointOutcome {
        term: result,
        model,
        log,
        queries,
        failure: None,
    })
}
