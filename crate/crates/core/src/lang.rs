//! Term signatures, immutable term trees, and the s-expression text format.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// An interned-by-value symbol name. Cheap to clone and compare.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn new(name: &str) -> Self {
        Symbol(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for Symbol {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Symbol {
    fn from(s: &str) -> Self {
        Symbol::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Operator,
    Variable,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolInfo {
    pub name: Symbol,
    pub kind: SymbolKind,
    pub arity: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("duplicate symbol `{0}`")]
    Duplicate(String),
    #[error("invalid symbol name `{0}`")]
    InvalidName(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("`{name}` used with arities {first} and {second}")]
    ArityConflict { name: String, first: usize, second: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A finite alphabet of operators, variables and constants. Symbol order is
/// significant: it fixes the column order of model dumps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    symbols: Vec<SymbolInfo>,
    index: HashMap<Symbol, usize>,
}

/// Variable names used by the polynomial signatures, in draw order.
pub const POLY_VARIABLES: [&str; 8] = ["x", "y", "z", "w", "v", "u", "s", "t"];

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('?')
        && !name
            .chars()
            .any(|c| c.is_whitespace() || c == '(' || c == ')' || c == ';')
}

impl Signature {
    pub fn new(operators: &[(&str, usize)], variables: &[&str], constants: &[&str]) -> Result<Self, SignatureError> {
        let mut sig = Signature {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        for &(name, arity) in operators {
            sig.push(name, SymbolKind::Operator, arity)?;
        }
        for &name in variables {
            sig.push(name, SymbolKind::Variable, 0)?;
        }
        for &name in constants {
            sig.push(name, SymbolKind::Constant, 0)?;
        }
        Ok(sig)
    }

    fn push(&mut self, name: &str, kind: SymbolKind, arity: usize) -> Result<(), SignatureError> {
        if !valid_name(name) {
            return Err(SignatureError::InvalidName(name.to_string()));
        }
        let sym = Symbol::new(name);
        if self.index.contains_key(&sym) {
            return Err(SignatureError::Duplicate(name.to_string()));
        }
        self.index.insert(sym.clone(), self.symbols.len());
        self.symbols.push(SymbolInfo { name: sym, kind, arity });
        Ok(())
    }

    /// Builds a signature from `known` symbols (operators, or constants if
    /// nullary) followed by every symbol of the s-expressions in `texts`;
    /// nullary symbols seen only in `texts` become variables.
    pub fn infer(known: &[(Symbol, usize)], texts: &[&str]) -> Result<Self, SignatureError> {
        let mut seen: Vec<(String, usize, SymbolKind)> = Vec::new();
        let mut note = |name: &str, arity: usize, kind: SymbolKind| match seen.iter().find(|(n, ..)| n == name) {
            Some((_, a, _)) if *a != arity => Err(SignatureError::ArityConflict {
                name: name.to_string(),
                first: *a,
                second: arity,
            }),
            Some(_) => Ok(()),
            None => {
                seen.push((name.to_string(), arity, kind));
                Ok(())
            }
        };
        for (sym, arity) in known {
            let kind = if *arity == 0 {
                SymbolKind::Constant
            } else {
                SymbolKind::Operator
            };
            note(sym.as_str(), *arity, kind)?;
        }
        for text in texts {
            for (name, arity) in sexpr_atoms(text)? {
                let kind = if arity == 0 {
                    SymbolKind::Variable
                } else {
                    SymbolKind::Operator
                };
                note(&name, arity, kind)?;
            }
        }
        let pick = |k: SymbolKind| seen.iter().filter(move |e| e.2 == k);
        let ops: Vec<(&str, usize)> = pick(SymbolKind::Operator).map(|e| (e.0.as_str(), e.1)).collect();
        let vars: Vec<&str> = pick(SymbolKind::Variable).map(|e| e.0.as_str()).collect();
        let consts: Vec<&str> = pick(SymbolKind::Constant).map(|e| e.0.as_str()).collect();
        Signature::new(&ops, &vars, &consts)
    }

    /// `sqr`, `*`, `+` over `x`, `y` with the constant `0`.
    pub fn ring_char2() -> Self {
        Signature::new(&[("sqr", 1), ("*", 2), ("+", 2)], &["x", "y"], &["0"]).expect("builtin signature")
    }

    /// Binary `+` and `*` over the first `n_vars` names of [`POLY_VARIABLES`].
    pub fn polynomial(n_vars: usize) -> Self {
        assert!(
            n_vars <= POLY_VARIABLES.len(),
            "at most {} polynomial variables",
            POLY_VARIABLES.len()
        );
        Signature::new(&[("+", 2), ("*", 2)], &POLY_VARIABLES[..n_vars], &[]).expect("builtin signature")
    }

    /// Parses the `[ops] [vars] [consts]` file format. Each entry is one line:
    /// `name arity` under `[ops]`, `name` (optionally `name 0`) elsewhere.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, SignatureError> {
        let mut ops: Vec<(String, usize)> = Vec::new();
        let mut vars: Vec<String> = Vec::new();
        let mut consts: Vec<String> = Vec::new();
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[ops]" | "[vars]" | "[consts]" => {
                    section = Some(line);
                    continue;
                }
                _ => {}
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let syntax = |msg: &str| SignatureError::Syntax {
                line: line_no,
                msg: msg.to_string(),
            };
            match section {
                None => return Err(syntax("entry before any section header")),
                Some("[ops]") => {
                    if fields.len() != 2 {
                        return Err(syntax("expected `name arity`"));
                    }
                    let arity = fields[1]
                        .parse::<usize>()
                        .map_err(|_| syntax("arity must be a non-negative integer"))?;
                    ops.push((fields[0].to_string(), arity));
                }
                Some(_) => {
                    let ok = fields.len() == 1 || (fields.len() == 2 && fields[1] == "0");
                    if !ok {
                        return Err(syntax("variables and constants take `name` or `name 0`"));
                    }
                    if section == Some("[vars]") {
                        vars.push(fields[0].to_string());
                    } else {
                        consts.push(fields[0].to_string());
                    }
                }
            }
        }
        let ops: Vec<(&str, usize)> = ops.iter().map(|(n, a)| (n.as_str(), *a)).collect();
        let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
        let consts: Vec<&str> = consts.iter().map(String::as_str).collect();
        Signature::new(&ops, &vars, &consts)
    }

    pub fn to_file_format(&self) -> String {
        let mut out = String::new();
        for (header, kind) in [
            ("[ops]", SymbolKind::Operator),
            ("[vars]", SymbolKind::Variable),
            ("[consts]", SymbolKind::Constant),
        ] {
            out.push_str(header);
            out.push('\n');
            for info in self.symbols.iter().filter(|s| s.kind == kind) {
                if kind == SymbolKind::Operator {
                    out.push_str(&format!("{} {}\n", info.name, info.arity));
                } else {
                    out.push_str(&format!("{}\n", info.name));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[SymbolInfo] {
        &self.symbols
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&SymbolInfo> {
        self.index_of(name).map(|i| &self.symbols[i])
    }

    pub fn symbol(&self, index: usize) -> &Symbol {
        &self.symbols[index].name
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.get(name).map(|s| s.arity)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        self.symbols
            .iter()
            .filter(|s| s.kind == SymbolKind::Variable)
            .map(|s| &s.name)
    }

    /// Checks that every node of `t` is a known symbol applied to the right
    /// number of children.
    pub fn check(&self, t: &Term) -> Result<(), ParseError> {
        match self.arity(t.op.as_str()) {
            None => Err(ParseError::new(0, ParseErrorKind::UnknownSymbol(t.op.to_string()))),
            Some(a) if a != t.children.len() => Err(ParseError::new(
                0,
                ParseErrorKind::ArityMismatch {
                    symbol: t.op.to_string(),
                    expected: a,
                    found: t.children.len(),
                },
            )),
            Some(_) => t.children.iter().try_for_each(|c| self.check(c)),
        }
    }
}

/// An immutable operator tree.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Term {
    op: Symbol,
    children: Vec<Term>,
}

impl Term {
    pub fn new(op: impl Into<Symbol>, children: Vec<Term>) -> Self {
        Term {
            op: op.into(),
            children,
        }
    }

    pub fn leaf(op: impl Into<Symbol>) -> Self {
        Term::new(op, Vec::new())
    }

    pub fn op(&self) -> &Symbol {
        &self.op
    }

    pub fn children(&self) -> &[Term] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Term::size).sum::<usize>()
    }

    /// Height of the tree; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(Term::depth).max().unwrap_or(0)
    }

    pub fn contains_op(&self, op: &str) -> bool {
        self.op.as_str() == op || self.children.iter().any(|c| c.contains_op(op))
    }

    /// The subterm addressed by a path of 0-based child indices.
    pub fn subterm(&self, path: &[usize]) -> Option<&Term> {
        let mut t = self;
        for &i in path {
            t = t.children.get(i)?;
        }
        Some(t)
    }

    /// A copy of `self` with the subterm at `path` replaced.
    pub fn replace_at(&self, path: &[usize], replacement: Term) -> Option<Term> {
        match path.split_first() {
            None => Some(replacement),
            Some((&i, rest)) => {
                let child = self.children.get(i)?.replace_at(rest, replacement)?;
                let mut children = self.children.clone();
                children[i] = child;
                Some(Term {
                    op: self.op.clone(),
                    children,
                })
            }
        }
    }

    /// All node paths in pre-order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        fn go(t: &Term, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            out.push(prefix.clone());
            for (i, c) in t.children.iter().enumerate() {
                prefix.push(i);
                go(c, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// Size first, then the canonical s-expression text.
    pub fn cmp_size_lex(&self, other: &Term) -> Ordering {
        self.size()
            .cmp(&other.size())
            .then_with(|| self.to_string().cmp(&other.to_string()))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.children.is_empty() {
            return f.write_str(self.op.as_str());
        }
        write!(f, "({}", self.op)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Canonical single-space rendering.
pub fn print_sexpr(t: &Term) -> String {
    t.to_string()
}

pub fn term_size(t: &Term) -> usize {
    t.size()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{symbol}` expects {expected} argument(s), found {found}")]
    ArityMismatch {
        symbol: String,
        expected: usize,
        found: usize,
    },
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("empty list")]
    EmptyList,
    #[error("list head must be a symbol")]
    HeadNotSymbol,
    #[error("unexpected trailing input")]
    TrailingInput,
    #[error("empty input")]
    Empty,
    #[error("pattern variable `{0}` not allowed here")]
    PatternVariable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn new(offset: usize, kind: ParseErrorKind) -> Self {
        ParseError { offset, kind }
    }
}

/// Untyped s-expression with byte offsets, shared by term and pattern parsers.
#[derive(Debug, Clone)]
pub(crate) enum SExpr {
    Atom(String, usize),
    List(Vec<SExpr>, usize),
}

pub(crate) fn read_sexpr(text: &str) -> Result<SExpr, ParseError> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    fn read(text: &str, pos: &mut usize) -> Result<SExpr, ParseError> {
        let bytes = text.as_bytes();
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos >= bytes.len() {
            return Err(ParseError::new(*pos, ParseErrorKind::Unbalanced));
        }
        let start = *pos;
        match bytes[start] {
            b'(' => {
                *pos += 1;
                let mut items = Vec::new();
                loop {
                    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                        *pos += 1;
                    }
                    if *pos >= bytes.len() {
                        return Err(ParseError::new(start, ParseErrorKind::Unbalanced));
                    }
                    if bytes[*pos] == b')' {
                        *pos += 1;
                        return Ok(SExpr::List(items, start));
                    }
                    items.push(read(text, pos)?);
                }
            }
            b')' => Err(ParseError::new(start, ParseErrorKind::Unbalanced)),
            _ => {
                while *pos < bytes.len()
                    && !bytes[*pos].is_ascii_whitespace()
                    && bytes[*pos] != b'('
                    && bytes[*pos] != b')'
                {
                    *pos += 1;
                }
                Ok(SExpr::Atom(text[start..*pos].to_string(), start))
            }
        }
    }
    skip_ws(&mut pos);
    if pos >= bytes.len() {
        return Err(ParseError::new(pos, ParseErrorKind::Empty));
    }
    let e = read(text, &mut pos)?;
    skip_ws(&mut pos);
    if pos < bytes.len() {
        let kind = if bytes[pos] == b')' {
            ParseErrorKind::Unbalanced
        } else {
            ParseErrorKind::TrailingInput
        };
        return Err(ParseError::new(pos, kind));
    }
    Ok(e)
}

pub(crate) fn split_head(items: &[SExpr], offset: usize) -> Result<(&str, usize, &[SExpr]), ParseError> {
    match items.split_first() {
        None => Err(ParseError::new(offset, ParseErrorKind::EmptyList)),
        Some((SExpr::Atom(name, at), rest)) => Ok((name.as_str(), *at, rest)),
        Some((SExpr::List(_, at), _)) => Err(ParseError::new(*at, ParseErrorKind::HeadNotSymbol)),
    }
}

fn term_from_sexpr(e: &SExpr, sig: &Signature) -> Result<Term, ParseError> {
    let (name, at, args) = match e {
        SExpr::Atom(name, at) => (name.as_str(), *at, &[][..]),
        SExpr::List(items, at) => split_head(items, *at)?,
    };
    if name.starts_with('?') {
        return Err(ParseError::new(at, ParseErrorKind::PatternVariable(name.to_string())));
    }
    let info = sig
        .get(name)
        .ok_or_else(|| ParseError::new(at, ParseErrorKind::UnknownSymbol(name.to_string())))?;
    if info.arity != args.len() {
        return Err(ParseError::new(
            at,
            ParseErrorKind::ArityMismatch {
                symbol: name.to_string(),
                expected: info.arity,
                found: args.len(),
            },
        ));
    }
    let children = args
        .iter()
        .map(|a| term_from_sexpr(a, sig))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Term {
        op: info.name.clone(),
        children,
    })
}

/// Parses `text` as a term over `sig`. Whitespace-insensitive.
pub fn parse_sexpr(text: &str, sig: &Signature) -> Result<Term, ParseError> {
    term_from_sexpr(&read_sexpr(text)?, sig)
}

/// Collects every atom of an s-expression, in first-occurrence order, without
/// a signature. Used to infer variables for user-supplied terms.
pub fn sexpr_atoms(text: &str) -> Result<Vec<(String, usize)>, ParseError> {
    fn go(e: &SExpr, out: &mut Vec<(String, usize)>) -> Result<(), ParseError> {
        match e {
            SExpr::Atom(a, _) => {
                if !out.iter().any(|(n, _)| n == a) {
                    out.push((a.clone(), 0));
                }
            }
            SExpr::List(items, at) => {
                let (head, _, args) = split_head(items, *at)?;
                match out.iter_mut().find(|(n, _)| n == head) {
                    Some(entry) => entry.1 = entry.1.max(args.len()),
                    None => out.push((head.to_string(), args.len())),
                }
                for a in args {
                    go(a, out)?;
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    go(&read_sexpr(text)?, &mut out)?;
    Ok(out)
}
