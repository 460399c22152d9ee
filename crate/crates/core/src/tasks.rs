//! Polynomial factorization tasks: generation, the multiplication-form goal,
//! polynomial normalization and the dataset file format.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lang::{parse_sexpr, ParseError, Signature, Term, POLY_VARIABLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    /// Number of factors.
    pub n_d: usize,
    /// Number of distinct variables available.
    pub n_v: usize,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("n_d and n_v must be at least 1 (got n_d={n_d}, n_v={n_v})")]
    EmptySpec { n_d: usize, n_v: usize },
    #[error("at most 8 variables are supported, got {0}")]
    TooManyVariables(usize),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Term { line: usize, source: ParseError },
}

impl TaskSpec {
    pub fn new(n_d: usize, n_v: usize, seed: u64) -> Result<Self, TaskError> {
        if n_d == 0 || n_v == 0 {
            return Err(TaskError::EmptySpec { n_d, n_v });
        }
        if n_v > POLY_VARIABLES.len() {
            return Err(TaskError::TooManyVariables(n_v));
        }
        Ok(TaskSpec { n_d, n_v, seed })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub id: String,
    pub spec: TaskSpec,
    pub start: Term,
    /// The product the task was built from; one of many valid answers.
    pub reference_product: Term,
}

impl Task {
    pub fn signature(&self) -> Signature {
        Signature::polynomial(self.spec.n_v)
    }
}

/// True iff no `+` node has a `*` node below it.
pub fn is_goal(t: &Term) -> bool {
    fn has_product(t: &Term) -> bool {
        t.op().as_str() == "*" || t.children().iter().any(has_product)
    }
    if t.op().as_str() == "+" {
        !t.children().iter().any(has_product)
    } else {
        t.children().iter().all(is_goal)
    }
}

fn right_nested(op: &str, mut items: Vec<Term>) -> Term {
    let mut acc = items.pop().expect("non-empty");
    while let Some(t) = items.pop() {
        acc = Term::new(op, vec![t, acc]);
    }
    acc
}

/// Draws the variable subsets for a spec, in draw order. Each subset is
/// uniform over the non-empty subsets of the first `n_v` variables.
pub fn draw_subsets(spec: &TaskSpec) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_d)
        .map(|_| {
            let mask: u32 = rng.gen_range(1..(1u32 << spec.n_v));
            (0..spec.n_v).filter(|i| mask & (1 << i) != 0).collect()
        })
        .collect()
}

/// Right-nested product of right-nested sums.
pub fn product_of(subsets: &[Vec<usize>]) -> Term {
    let factors = subsets
        .iter()
        .map(|s| right_nested("+", s.iter().map(|&v| Term::leaf(POLY_VARIABLES[v])).collect()))
        .collect();
    right_nested("*", factors)
}

/// Right-nested sum of monomials, one per choice of a variable from each
/// subset; monomials are right-nested products in draw order and the first
/// subset varies slowest. Like terms are not collected.
pub fn unfold(subsets: &[Vec<usize>]) -> Term {
    let mut monomials: Vec<Vec<usize>> = vec![Vec::new()];
    for s in subsets {
        monomials = monomials
            .into_iter()
            .flat_map(|m| {
                s.iter().map(move |&v| {
                    let mut m = m.clone();
                    m.push(v);
                    m
                })
            })
            .collect();
    }
    right_nested(
        "+",
        monomials
            .into_iter()
            .map(|m| right_nested("*", m.into_iter().map(|v| Term::leaf(POLY_VARIABLES[v])).collect()))
            .collect(),
    )
}

/// A mutable binary tree for cheap in-place associativity and
/// commutativity rewrites.
struct Arena {
    ops: Vec<&'static str>,
    kids: Vec<[usize; 2]>,
    leaf: Vec<Option<String>>,
    root: usize,
}

impl Arena {
    fn from_term(t: &Term) -> Self {
        let mut a = Arena {
            ops: Vec::new(),
            kids: Vec::new(),
            leaf: Vec::new(),
            root: 0,
        };
        a.root = a.push(t);
        a
    }

    fn push(&mut self, t: &Term) -> usize {
        let id = self.ops.len();
        self.ops.push("");
        self.kids.push([usize::MAX; 2]);
        self.leaf.push(None);
        match t.children() {
            [] => self.leaf[id] = Some(t.op().to_string()),
            [l, r] => {
                self.ops[id] = if t.op().as_str() == "+" { "+" } else { "*" };
                let l = self.push(l);
                let r = self.push(r);
                self.kids[id] = [l, r];
            }
            _ => unreachable!("polynomial terms are binary"),
        }
        id
    }

    fn internal(&self) -> Vec<usize> {
        (0..self.ops.len()).filter(|&i| self.leaf[i].is_none()).collect()
    }

    fn is(&self, node: usize, op: &str) -> bool {
        self.leaf[node].is_none() && self.ops[node] == op
    }

    /// Applies one uniformly chosen applicable rewrite at `n`: commute,
    /// reassociate left (a∘(b∘c) → (a∘b)∘c) or right ((a∘b)∘c → a∘(b∘c)).
    fn rewrite_at<R: Rng>(&mut self, n: usize, rng: &mut R) {
        let op = self.ops[n];
        let [l, r] = self.kids[n];
        let mut options = vec![0];
        if self.is(r, op) {
            options.push(1);
        }
        if self.is(l, op) {
            options.push(2);
        }
        match options[rng.gen_range(0..options.len())] {
            0 => self.kids[n] = [r, l],
            1 => {
                let [b, c] = self.kids[r];
                self.kids[r] = [l, b];
                self.kids[n] = [r, c];
            }
            _ => {
                let [a, b] = self.kids[l];
                self.kids[l] = [b, r];
                self.kids[n] = [a, l];
            }
        }
    }

    fn to_term(&self, n: usize) -> Term {
        match &self.leaf[n] {
            Some(name) => Term::leaf(name.as_str()),
            None => Term::new(
                self.ops[n],
                vec![self.to_term(self.kids[n][0]), self.to_term(self.kids[n][1])],
            ),
        }
    }
}

/// Applies `count` random associativity/commutativity rewrites at
/// uniformly chosen internal nodes.
pub fn reorganize<R: Rng>(t: &Term, count: usize, rng: &mut R) -> Term {
    let mut arena = Arena::from_term(t);
    let internal = arena.internal();
    if internal.is_empty() {
        return t.clone();
    }
    for _ in 0..count {
        let n = internal[rng.gen_range(0..internal.len())];
        arena.rewrite_at(n, rng);
    }
    arena.to_term(arena.root)
}

/// Builds a task from already-drawn subsets.
pub fn task_from_subsets(id: impl Into<String>, spec: TaskSpec, subsets: &[Vec<usize>]) -> Task {
    let reference_product = product_of(subsets);
    let unfolded = unfold(subsets);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5bd1_e995_7f4a_7c15);
    let start = reorganize(&unfolded, 3 * unfolded.size(), &mut rng);
    Task {
        id: id.into(),
        spec,
        start,
        reference_product,
    }
}

pub fn generate(spec: &TaskSpec) -> Task {
    let subsets = draw_subsets(spec);
    task_from_subsets(format!("d{}v{}-s{}", spec.n_d, spec.n_v, spec.seed), *spec, &subsets)
}

/// A polynomial as a sorted list of monomials, each a sorted list of
/// variable names, with multiplicity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Polynomial(pub Vec<Vec<String>>);

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|m| m.join("·")).collect();
        f.write_str(&parts.join(" + "))
    }
}

/// Expands a `+`/`*` term over variables into its monomial multiset.
pub fn normalize(t: &Term) -> Polynomial {
    fn go(t: &Term) -> Vec<Vec<String>> {
        match (t.op().as_str(), t.children()) {
            (_, []) => vec![vec![t.op().to_string()]],
            ("+", [a, b]) => {
                let mut out = go(a);
                out.extend(go(b));
                out
            }
            ("*", [a, b]) => {
                let (pa, pb) = (go(a), go(b));
                let mut out = Vec::with_capacity(pa.len() * pb.len());
                for x in &pa {
                    for y in &pb {
                        let mut m = x.clone();
                        m.extend(y.iter().cloned());
                        m.sort();
                        out.push(m);
                    }
                }
                out
            }
            (op, kids) => panic!("not a polynomial node: {op}/{}", kids.len()),
        }
    }
    let mut monomials = go(t);
    monomials.sort();
    Polynomial(monomials)
}

pub fn equivalent_polynomials(a: &Term, b: &Term) -> bool {
    normalize(a) == normalize(b)
}

fn mix_seed(master: u64, n_d: usize, n_v: usize, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((n_d as u64) << 40) | ((n_v as u64) << 20) | i as u64);
    rng.gen()
}

/// `per_cell` tasks for every (n_d, n_v) in the inclusive ranges, ordered by
/// n_d, then n_v, then index.
pub fn build_dataset(
    nd_range: (usize, usize),
    nv_range: (usize, usize),
    per_cell: usize,
    master_seed: u64,
) -> Result<Vec<Task>, TaskError> {
    let mut out = Vec::new();
    for n_d in nd_range.0..=nd_range.1 {
        for n_v in nv_range.0..=nv_range.1 {
            for i in 0..per_cell {
                let spec = TaskSpec::new(n_d, n_v, mix_seed(master_seed, n_d, n_v, i))?;
                let subsets = draw_subsets(&spec);
                out.push(task_from_subsets(format!("d{n_d}v{n_v}-{i:02}"), spec, &subsets));
            }
        }
    }
    Ok(out)
}

/// One task per line: `id  n_d  n_v  start  reference`, tab-separated.
pub fn write_dataset(tasks: &[Task]) -> String {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.id, t.spec.n_d, t.spec.n_v, t.start, t.reference_product
        ));
    }
    out
}

/// Parses [`write_dataset`] output. Seeds are not stored and read back as 0.
pub fn read_dataset(text: &str) -> Result<Vec<Task>, TaskError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(TaskError::Syntax {
                line: line_no,
                msg: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let num = |s: &str, what: &str| {
            s.trim().parse::<usize>().map_err(|_| TaskError::Syntax {
                line: line_no,
                msg: format!("bad {what} `{s}`"),
            })
        };
        let n_d = num(cols[1], "n_d")?;
        let n_v = num(cols[2], "n_v")?;
        let spec = TaskSpec::new(n_d, n_v, 0)?;
        let sig = Arc::new(Signature::polynomial(n_v));
        let term = |s: &str| parse_sexpr(s, &sig).map_err(|source| TaskError::Term { line: line_no, source });
        out.push(Task {
            id: cols[0].to_string(),
            spec,
            start: term(cols[3])?,
            reference_product: term(cols[4])?,
        });
    }
    Ok(out)
}
