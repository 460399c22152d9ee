//! Contextual bigram model over operators: γ(op | context), where the
//! context of a node is either the root or (parent operator, child index).

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::lang::{Signature, Symbol, Term};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Context {
    Root,
    /// `index` is 1-based.
    Child {
        parent: Symbol,
        index: usize,
    },
}

impl Context {
    pub fn child(parent: &str, index: usize) -> Self {
        Context::Child {
            parent: Symbol::new(parent),
            index,
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::Root => f.write_str("root"),
            Context::Child { parent, index } => write!(f, "{parent}.{index}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BigramError {
    #[error("alpha must be a finite number greater than 1, got {0}")]
    InvalidAlpha(f64),
    #[error("symbol `{0}` is not in the model signature")]
    UnknownSymbol(String),
    #[error("context {0} does not exist in the model signature")]
    UnknownContext(String),
    #[error("expected {expected} rows of {width} entries")]
    Shape { expected: usize, width: usize },
    #[error("row {0} must hold finite non-negative values with a positive sum")]
    BadRow(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateConfig {
    alpha: f64,
}

impl UpdateConfig {
    pub fn new(alpha: f64) -> Result<Self, BigramError> {
        if alpha.is_finite() && alpha > 1.0 {
            Ok(UpdateConfig { alpha })
        } else {
            Err(BigramError::InvalidAlpha(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Row-stochastic table of strictly positive probabilities. Rows are
/// contexts (root first, then each operator's child slots in signature
/// order); columns are signature symbols in signature order.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramModel {
    sig: Arc<Signature>,
    /// Row offset of each symbol's first child context; only meaningful
    /// for symbols of positive arity.
    offsets: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl BigramModel {
    /// The uniform model: every entry is 1/K for K signature symbols.
    pub fn uniform(sig: Arc<Signature>) -> Self {
        let k = sig.len();
        let mut offsets = Vec::with_capacity(k);
        let mut n_rows = 1;
        for info in sig.symbols() {
            offsets.push(n_rows);
            n_rows += info.arity;
        }
        let rows = vec![vec![1.0 / k as f64; k]; n_rows];
        BigramModel { sig, offsets, rows }
    }

    /// A model from explicit rows in [`BigramModel::contexts`] order. Each
    /// row is normalized; zero entries are raised to the smallest positive
    /// value.
    pub fn from_rows(sig: Arc<Signature>, rows: Vec<Vec<f64>>) -> Result<Self, BigramError> {
        let mut m = Self::uniform(sig);
        let width = m.sig.len();
        if rows.len() != m.rows.len() || rows.iter().any(|r| r.len() != width) {
            return Err(BigramError::Shape {
                expected: m.rows.len(),
                width,
            });
        }
        for (i, mut r) in rows.into_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|w| !w.is_finite() || *w < 0.0) || !(sum > 0.0 && sum.is_finite()) {
                return Err(BigramError::BadRow(i));
            }
            for w in r.iter_mut() {
                *w = (*w / sum).max(f64::MIN_POSITIVE);
            }
            m.rows[i] = r;
        }
        Ok(m)
    }

    pub fn signature(&self) -> &Arc<Signature> {
        &self.sig
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Row index for the root context.
    pub const ROOT: usize = 0;

    /// Row index for child `index0` (0-based) of the symbol at `sym`.
    pub fn child_row(&self, sym: usize, index0: usize) -> usize {
        debug_assert!(index0 < self.sig.symbols()[sym].arity);
        self.offsets[sym] + index0
    }

    pub fn contexts(&self) -> Vec<Context> {
        let mut out = vec![Context::Root];
        for info in self.sig.symbols() {
            for i in 1..=info.arity {
                out.push(Context::Child {
                    parent: info.name.clone(),
                    index: i,
                });
            }
        }
        out
    }

    fn row_of(&self, ctx: &Context) -> Result<usize, BigramError> {
        match ctx {
            Context::Root => Ok(Self::ROOT),
            Context::Child { parent, index } => {
                let sym = self
                    .sig
                    .index_of(parent.as_str())
                    .ok_or_else(|| BigramError::UnknownContext(ctx.to_string()))?;
                if *index == 0 || *index > self.sig.symbols()[sym].arity {
                    return Err(BigramError::UnknownContext(ctx.to_string()));
                }
                Ok(self.child_row(sym, index - 1))
            }
        }
    }

    fn sym_of(&self, op: &str) -> Result<usize, BigramError> {
        self.sig
            .index_of(op)
            .ok_or_else(|| BigramError::UnknownSymbol(op.to_string()))
    }

    /// γ(op | ctx).
    pub fn prob(&self, ctx: &Context, op: &str) -> Result<f64, BigramError> {
        Ok(self.rows[self.row_of(ctx)?][self.sym_of(op)?])
    }

    /// γ by row and symbol index.
    pub fn prob_at(&self, row: usize, sym: usize) -> f64 {
        self.rows[row][sym]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.rows[row]
    }

    /// Product of γ over all nodes of `t`.
    pub fn prob_term(&self, t: &Term) -> Result<f64, BigramError> {
        Ok(self.log_prob_term(t)?.exp())
    }

    /// Natural log of [`BigramModel::prob_term`].
    pub fn log_prob_term(&self, t: &Term) -> Result<f64, BigramError> {
        let mut acc = 0.0;
        for (row, sym) in self.indexed_contributions(t)? {
            acc += self.rows[row][sym].ln();
        }
        Ok(acc)
    }

    fn indexed_contributions(&self, t: &Term) -> Result<Vec<(usize, usize)>, BigramError> {
        fn go(m: &BigramModel, t: &Term, row: usize, out: &mut Vec<(usize, usize)>) -> Result<(), BigramError> {
            let sym = m.sym_of(t.op().as_str())?;
            out.push((row, sym));
            for (i, c) in t.children().iter().enumerate() {
                if i >= m.sig.symbols()[sym].arity {
                    return Err(BigramError::UnknownContext(format!("{}.{}", t.op(), i + 1)));
                }
                go(m, c, m.child_row(sym, i), out)?;
            }
            Ok(())
        }
        let mut out = Vec::with_capacity(t.size());
        go(self, t, Self::ROOT, &mut out)?;
        Ok(out)
    }

    /// Multiplies each entry by α per occurrence in `better`, divides by α
    /// per occurrence in `worse`, then renormalizes the affected rows.
    pub fn update(&self, better: &Term, worse: &Term, cfg: UpdateConfig) -> Result<BigramModel, BigramError> {
        let mut net: HashMap<(usize, usize), i32> = HashMap::new();
        for key in self.indexed_contributions(better)? {
            *net.entry(key).or_insert(0) += 1;
        }
        for key in self.indexed_contributions(worse)? {
            *net.entry(key).or_insert(0) -= 1;
        }
        let mut next = self.clone();
        let mut touched: Vec<usize> = Vec::new();
        for (&(row, sym), &e) in &net {
            if e != 0 {
                next.rows[row][sym] *= cfg.alpha.powi(e);
                touched.push(row);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for row in touched {
            let r = &mut next.rows[row];
            let sum: f64 = r.iter().sum();
            for w in r.iter_mut() {
                *w = (*w / sum).max(f64::MIN_POSITIVE);
            }
        }
        Ok(next)
    }

    /// One row per context: the context name followed by tab-separated
    /// probabilities in signature order, after a header row of symbols.
    pub fn dump(&self) -> String {
        let mut out = String::from("context");
        for info in self.sig.symbols() {
            out.push('\t');
            out.push_str(info.name.as_str());
        }
        out.push('\n');
        for (ctx, row) in self.contexts().iter().zip(&self.rows) {
            out.push_str(&ctx.to_string());
            for p in row {
                out.push_str(&format!("\t{p:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One (context, operator) pair per node of `t`, in pre-order.
pub fn contributions(t: &Term) -> Vec<(Context, Symbol)> {
    fn go(t: &Term, ctx: Context, out: &mut Vec<(Context, Symbol)>) {
        out.push((ctx, t.op().clone()));
        for (i, c) in t.children().iter().enumerate() {
            go(
                c,
                Context::Child {
                    parent: t.op().clone(),
                    index: i + 1,
                },
                out,
            );
        }
    }
    let mut out = Vec::new();
    go(t, Context::Root, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_sexpr;

    fn sig5() -> Arc<Signature> {
        Arc::new(Signature::new(&[("sqr", 1), ("*", 2), ("+", 2)], &["x", "y"], &[]).unwrap())
    }

    fn t(s: &str) -> Term {
        parse_sexpr(s, &sig5()).unwrap()
    }

    #[test]
    fn uniform_entries() {
        let m = BigramModel::uniform(sig5());
        assert_eq!(m.row_count(), 1 + 1 + 2 + 2);
        for ctx in m.contexts() {
            for s in ["sqr", "*", "+", "x", "y"] {
                assert!((m.prob(&ctx, s).unwrap() - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_symbol_signature() {
        let sig = Arc::new(Signature::new(&[], &["x"], &[]).unwrap());
        let m = BigramModel::uniform(sig);
        assert_eq!(m.prob(&Context::Root, "x").unwrap(), 1.0);
    }

    #[test]
    fn prob_of_small_terms() {
        let m = BigramModel::uniform(sig5());
        assert!((m.prob_term(&t("(+ x y)")).unwrap() - 0.008).abs() < 1e-15);
        assert!((m.prob_term(&t("x")).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn contributions_listing() {
        let c = contributions(&t("(sqr (+ y x))"));
        assert_eq!(
            c,
            vec![
                (Context::Root, Symbol::new("sqr")),
                (Context::child("sqr", 1), Symbol::new("+")),
                (Context::child("+", 1), Symbol::new("y")),
                (Context::child("+", 2), Symbol::new("x")),
            ]
        );
        assert_eq!(contributions(&t("x")), vec![(Context::Root, Symbol::new("x"))]);
        let c = contributions(&t("(* (+ x y) (+ x y))"));
        let n = |ctx: Context, s: &str| c.iter().filter(|(a, b)| *a == ctx && b.as_str() == s).count();
        assert_eq!(n(Context::child("+", 1), "x"), 2);
        assert_eq!(n(Context::child("+", 2), "y"), 2);
    }

    #[test]
    fn alpha_must_exceed_one() {
        assert!(UpdateConfig::new(1.0).is_err());
        assert!(UpdateConfig::new(f64::NAN).is_err());
        assert!(UpdateConfig::new(1.5).is_ok());
    }

    #[test]
    fn same_term_update_is_identity() {
        let m = BigramModel::uniform(sig5());
        let x = t("(* (+ x y) x)");
        let u = m.update(&x, &x, UpdateConfig::new(2.0).unwrap()).unwrap();
        assert_eq!(u, m);
    }

    #[test]
    fn update_breaks_symmetry() {
        let m = BigramModel::uniform(sig5());
        let u = m
            .update(&t("(+ x y)"), &t("(+ y x)"), UpdateConfig::new(1.5).unwrap())
            .unwrap();
        assert!(u.prob_term(&t("(+ x y)")).unwrap() > u.prob_term(&t("(+ y x)")).unwrap());
        // rows not mentioned stay put
        assert_eq!(u.row(u.child_row(0, 0)), m.row(m.child_row(0, 0)));
    }

    #[test]
    fn from_rows_normalizes_and_checks_shape() {
        let m = BigramModel::from_rows(sig5(), vec![vec![1.0, 1.0, 2.0, 0.0, 0.0]; 6]).unwrap();
        assert_eq!(m.prob(&Context::Root, "+").unwrap(), 0.5);
        assert!(m.prob(&Context::Root, "x").unwrap() > 0.0);
        assert!(BigramModel::from_rows(sig5(), vec![vec![1.0; 5]; 5]).is_err());
        assert_eq!(
            BigramModel::from_rows(sig5(), vec![vec![0.0; 5]; 6]),
            Err(BigramError::BadRow(0))
        );
    }

    #[test]
    fn dump_has_one_row_per_context() {
        let m = BigramModel::uniform(sig5());
        let d = m.dump();
        assert_eq!(d.lines().count(), 7);
        assert!(d.starts_with("context\tsqr\t*\t+\tx\ty\nroot\t0.200000"));
    }
}
