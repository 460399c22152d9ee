//! Directed rewrite rules, syntactic matching, positional rule application
//! and replay-based verification of rewrite certificates.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lang::{parse_sexpr, read_sexpr, split_head, ParseError, ParseErrorKind, SExpr, Signature, Symbol, Term};

/// A term whose leaves may be pattern variables (written `?a`).
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    Var(Symbol),
    Node(Symbol, Vec<Pattern>),
}

impl Pattern {
    pub fn var(name: &str) -> Self {
        Pattern::Var(Symbol::new(name.trim_start_matches('?')))
    }

    pub fn node(op: &str, children: Vec<Pattern>) -> Self {
        Pattern::Node(Symbol::new(op), children)
    }

    pub fn leaf(op: &str) -> Self {
        Pattern::node(op, Vec::new())
    }

    /// Pattern variables in first-occurrence order.
    pub fn vars(&self) -> Vec<Symbol> {
        fn go(p: &Pattern, out: &mut Vec<Symbol>) {
            match p {
                Pattern::Var(v) => {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
                Pattern::Node(_, cs) => cs.iter().for_each(|c| go(c, out)),
            }
        }
        let mut out = Vec::new();
        go(self, &mut out);
        out
    }

    pub fn parse(text: &str) -> Result<Pattern, ParseError> {
        fn go(e: &SExpr) -> Result<Pattern, ParseError> {
            match e {
                SExpr::Atom(a, _) if a.starts_with('?') && a.len() > 1 => Ok(Pattern::var(a)),
                SExpr::Atom(a, _) => Ok(Pattern::leaf(a)),
                SExpr::List(items, at) => {
                    let (head, head_at, args) = split_head(items, *at)?;
                    if head.starts_with('?') {
                        return Err(ParseError::new(head_at, ParseErrorKind::HeadNotSymbol));
                    }
                    Ok(Pattern::node(head, args.iter().map(go).collect::<Result<_, _>>()?))
                }
            }
        }
        go(&read_sexpr(text)?)
    }

    /// Instantiates the pattern. Panics if a variable is unbound; callers
    /// only instantiate right-hand sides whose variables the left side binds.
    pub fn instantiate(&self, subst: &Subst) -> Term {
        match self {
            Pattern::Var(v) => subst
                .get(v)
                .cloned()
                .unwrap_or_else(|| panic!("unbound pattern variable ?{v}")),
            Pattern::Node(op, cs) => Term::new(op.clone(), cs.iter().map(|c| c.instantiate(subst)).collect()),
        }
    }

    fn check_signature(&self, sig: &Signature) -> Result<(), String> {
        match self {
            Pattern::Var(_) => Ok(()),
            Pattern::Node(op, cs) => match sig.arity(op.as_str()) {
                None => Err(format!("unknown symbol `{op}`")),
                Some(a) if a != cs.len() => Err(format!("`{op}` expects {a} argument(s), found {}", cs.len())),
                Some(_) => cs.iter().try_for_each(|c| c.check_signature(sig)),
            },
        }
    }

    fn collect_ops(&self, out: &mut Vec<(Symbol, usize)>) {
        if let Pattern::Node(op, cs) = self {
            if !out.iter().any(|(o, _)| o == op) {
                out.push((op.clone(), cs.len()));
            }
            cs.iter().for_each(|c| c.collect_ops(out));
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var(v) => write!(f, "?{v}"),
            Pattern::Node(op, cs) if cs.is_empty() => write!(f, "{op}"),
            Pattern::Node(op, cs) => {
                write!(f, "({op}")?;
                for c in cs {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

pub type Subst = HashMap<Symbol, Term>;

/// Syntactic matching; repeated variables must bind equal subterms.
pub fn match_pattern(p: &Pattern, t: &Term) -> Option<Subst> {
    fn go(p: &Pattern, t: &Term, s: &mut Subst) -> bool {
        match p {
            Pattern::Var(v) => match s.get(v) {
                Some(bound) => bound == t,
                None => {
                    s.insert(v.clone(), t.clone());
                    true
                }
            },
            Pattern::Node(op, cs) => {
                op == t.op()
                    && cs.len() == t.children().len()
                    && cs.iter().zip(t.children()).all(|(pc, tc)| go(pc, tc, s))
            }
        }
    }
    let mut s = Subst::new();
    go(p, t, &mut s).then_some(s)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule `{name}`: right-hand side variable ?{var} is not bound by the left-hand side")]
    UnboundVariable { name: String, var: String },
    #[error("rule `{0}`: left-hand side must not be a bare variable")]
    VariableLhs(String),
    #[error("duplicate rule name `{0}`")]
    DuplicateName(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown rule set `{0}`")]
    UnknownRuleSet(String),
    #[error("rule `{name}` does not fit the signature: {msg}")]
    Signature { name: String, msg: String },
}

/// A named directed rewrite `lhs => rhs`.
#[derive(Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub lhs: Pattern,
    pub rhs: Pattern,
    /// Base name of the bidirectional law this rule was split from.
    pub base: Option<String>,
}

impl Rule {
    pub fn new(name: &str, lhs: Pattern, rhs: Pattern) -> Result<Rule, RuleError> {
        if matches!(lhs, Pattern::Var(_)) {
            return Err(RuleError::VariableLhs(name.to_string()));
        }
        let lhs_vars = lhs.vars();
        if let Some(v) = rhs.vars().into_iter().find(|v| !lhs_vars.contains(v)) {
            return Err(RuleError::UnboundVariable {
                name: name.to_string(),
                var: v.to_string(),
            });
        }
        Ok(Rule {
            name: name.to_string(),
            lhs,
            rhs,
            base: None,
        })
    }

    /// Splits `lhs <=> rhs` into `<base>-fwd` and `<base>-rev`.
    pub fn bidirectional(base: &str, lhs: Pattern, rhs: Pattern) -> Result<[Rule; 2], RuleError> {
        let mut fwd = Rule::new(&format!("{base}-fwd"), lhs.clone(), rhs.clone())?;
        let mut rev = Rule::new(&format!("{base}-rev"), rhs, lhs)?;
        fwd.base = Some(base.to_string());
        rev.base = Some(base.to_string());
        Ok([fwd, rev])
    }

    fn parse_one(name: &str, lhs: &str, rhs: &str) -> Result<Rule, String> {
        let lhs = Pattern::parse(lhs).map_err(|e| format!("left-hand side: {e}"))?;
        let rhs = Pattern::parse(rhs).map_err(|e| format!("right-hand side: {e}"))?;
        Rule::new(name, lhs, rhs).map_err(|e| e.to_string())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} => {}", self.name, self.lhs, self.rhs)
    }
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// An ordered collection of uniquely named rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSet {
    pub name: String,
    rules: Vec<Rule>,
}

fn p(text: &str) -> Pattern {
    Pattern::parse(text).expect("builtin pattern")
}

impl RuleSet {
    pub fn new(name: &str, rules: Vec<Rule>) -> Result<RuleSet, RuleError> {
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert(r.name.clone()) {
                return Err(RuleError::DuplicateName(r.name.clone()));
            }
        }
        Ok(RuleSet {
            name: name.to_string(),
            rules,
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.name == name)
    }

    /// Squaring, characteristic 2, additive identity, commutativity and
    /// associativity of `+`, commutativity of `*`, right distributivity.
    pub fn ring_char2() -> RuleSet {
        let mut rules = Vec::new();
        rules.extend(Rule::bidirectional("Sqr", p("(sqr ?a)"), p("(* ?a ?a)")).unwrap());
        rules.push(Rule::new("Char-2", p("(+ ?a ?a)"), p("0")).unwrap());
        rules.push(Rule::new("Add-0", p("(+ ?a 0)"), p("?a")).unwrap());
        rules.extend(Rule::bidirectional("Add-C", p("(+ ?a ?b)"), p("(+ ?b ?a)")).unwrap());
        rules.extend(Rule::bidirectional("Times-C", p("(* ?a ?b)"), p("(* ?b ?a)")).unwrap());
        rules.extend(Rule::bidirectional("Add-A", p("(+ ?a (+ ?b ?c))"), p("(+ (+ ?a ?b) ?c)")).unwrap());
        rules.push(Rule::new("Distr", p("(* (+ ?a ?b) ?c)"), p("(+ (* ?a ?c) (* ?b ?c))")).unwrap());
        RuleSet::new("ring-char2", rules).unwrap()
    }

    /// Associativity and commutativity of `+` and `*`, plus distribution and
    /// its reverse (factoring) for polynomial factorization.
    pub fn poly_ac() -> RuleSet {
        let mut rules = Vec::new();
        rules.extend(Rule::bidirectional("Add-C", p("(+ ?a ?b)"), p("(+ ?b ?a)")).unwrap());
        rules.extend(Rule::bidirectional("Add-A", p("(+ ?a (+ ?b ?c))"), p("(+ (+ ?a ?b) ?c)")).unwrap());
        rules.extend(Rule::bidirectional("Times-C", p("(* ?a ?b)"), p("(* ?b ?a)")).unwrap());
        rules.extend(Rule::bidirectional("Times-A", p("(* ?a (* ?b ?c))"), p("(* (* ?a ?b) ?c)")).unwrap());
        rules.push(Rule::new("Distr", p("(* (+ ?a ?b) ?c)"), p("(+ (* ?a ?c) (* ?b ?c))")).unwrap());
        rules.push(Rule::new("Factor", p("(+ (* ?a ?c) (* ?b ?c))"), p("(* (+ ?a ?b) ?c)")).unwrap());
        RuleSet::new("poly-ac", rules).unwrap()
    }

    pub fn builtin(name: &str) -> Result<RuleSet, RuleError> {
        match name {
            "ring-char2" => Ok(RuleSet::ring_char2()),
            "poly-ac" => Ok(RuleSet::poly_ac()),
            other => Err(RuleError::UnknownRuleSet(other.to_string())),
        }
    }

    /// Parses a rule-set file: one law per line, `Name: lhs => rhs` for a
    /// directed rule or `Name: lhs <=> rhs` for a law split into
    /// `Name-fwd`/`Name-rev`. Pattern variables start with `?`; `#` starts a
    /// comment; an optional `name: <set-name>` line names the set.
    pub fn parse(text: &str) -> Result<RuleSet, RuleError> {
        let mut set_name = String::from("custom");
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| RuleError::Syntax { line: line_no, msg };
            let (name, body) = line
                .split_once(':')
                .ok_or_else(|| syntax("expected `Name: lhs => rhs`".into()))?;
            let name = name.trim();
            let body = body.trim();
            if name == "name" && !body.contains("=>") {
                set_name = body.to_string();
                continue;
            }
            if let Some((lhs, rhs)) = body.split_once("<=>") {
                let [fwd, rev] = Rule::parse_one(&format!("{name}-fwd"), lhs, rhs)
                    .and_then(|f| Rule::parse_one(&format!("{name}-rev"), rhs, lhs).map(|r| [f, r]))
                    .map_err(syntax)?;
                for mut r in [fwd, rev] {
                    r.base = Some(name.to_string());
                    rules.push(r);
                }
            } else if let Some((lhs, rhs)) = body.split_once("=>") {
                rules.push(Rule::parse_one(name, lhs, rhs).map_err(syntax)?);
            } else {
                return Err(syntax("missing `=>` or `<=>`".into()));
            }
        }
        RuleSet::new(&set_name, rules)
    }

    /// Renders the rule set in the file format accepted by [`RuleSet::parse`],
    /// with every rule directed.
    pub fn to_file_format(&self) -> String {
        let mut out = format!("name: {}\n", self.name);
        for r in &self.rules {
            out.push_str(&format!("{}: {} => {}\n", r.name, r.lhs, r.rhs));
        }
        out
    }

    /// Every operator or constant the rules mention, with its arity.
    pub fn symbols(&self) -> Vec<(Symbol, usize)> {
        let mut out = Vec::new();
        for r in &self.rules {
            r.lhs.collect_ops(&mut out);
            r.rhs.collect_ops(&mut out);
        }
        out
    }

    pub fn check_signature(&self, sig: &Signature) -> Result<(), RuleError> {
        for r in &self.rules {
            r.lhs
                .check_signature(sig)
                .and_then(|_| r.rhs.check_signature(sig))
                .map_err(|msg| RuleError::Signature {
                    name: r.name.clone(),
                    msg,
                })?;
        }
        Ok(())
    }

    /// Index of a rule that undoes `rule`: its sides are the swapped sides of
    /// `rule` up to renaming of variables. Rules that drop variables have none.
    pub fn inverse_of(&self, rule: usize) -> Option<usize> {
        let r = &self.rules[rule];
        let mut lv = r.lhs.vars();
        let mut rv = r.rhs.vars();
        lv.sort();
        rv.sort();
        if lv != rv {
            return None;
        }
        self.rules.iter().position(|cand| {
            let mut renaming = HashMap::new();
            alpha_match(&cand.lhs, &r.rhs, &mut renaming) && alpha_match(&cand.rhs, &r.lhs, &mut renaming)
        })
    }
}

/// Whether `a` equals `b` under a consistent, injective renaming of variables.
fn alpha_match(a: &Pattern, b: &Pattern, renaming: &mut HashMap<Symbol, Symbol>) -> bool {
    match (a, b) {
        (Pattern::Var(x), Pattern::Var(y)) => match renaming.get(x) {
            Some(bound) => bound == y,
            None => {
                if renaming.values().any(|v| v == y) {
                    return false;
                }
                renaming.insert(x.clone(), y.clone());
                true
            }
        },
        (Pattern::Node(o1, c1), Pattern::Node(o2, c2)) => {
            o1 == o2 && c1.len() == c2.len() && c1.iter().zip(c2).all(|(x, y)| alpha_match(x, y, renaming))
        }
        _ => false,
    }
}

/// Named rule sets shipped with the library.
pub fn builtin_rulesets() -> Vec<RuleSet> {
    vec![RuleSet::ring_char2(), RuleSet::poly_ac()]
}

/// A path of 0-based child indices from the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position(pub Vec<usize>);

impl Position {
    pub fn root() -> Self {
        Position(Vec::new())
    }

    pub fn child(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        Position(v)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join("."))
    }
}

impl FromStr for Position {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "root" {
            return Ok(Position::root());
        }
        s.split('.')
            .map(|part| {
                part.parse::<usize>()
                    .map_err(|_| format!("bad path component `{part}`"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Position)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("position {0} does not address a subterm")]
    InvalidPosition(Position),
    #[error("rule `{rule}` does not match at position {position}")]
    PatternMismatch { rule: String, position: Position },
}

/// Applies `rule` to the subterm of `t` at `pos`.
pub fn apply_rule_at(t: &Term, rule: &Rule, pos: &Position) -> Result<Term, RewriteError> {
    let sub = t
        .subterm(&pos.0)
        .ok_or_else(|| RewriteError::InvalidPosition(pos.clone()))?;
    let subst = match_pattern(&rule.lhs, sub).ok_or_else(|| RewriteError::PatternMismatch {
        rule: rule.name.clone(),
        position: pos.clone(),
    })?;
    let replaced = rule.rhs.instantiate(&subst);
    Ok(t.replace_at(&pos.0, replaced).expect("position checked above"))
}

/// Every position of `t` where `rule` matches, in pre-order.
pub fn matching_positions(t: &Term, rule: &Rule) -> Vec<Position> {
    t.paths()
        .into_iter()
        .filter(|path| match_pattern(&rule.lhs, t.subterm(path).unwrap()).is_some())
        .map(Position)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub rule: String,
    pub position: Position,
    pub result: Term,
}

/// A rewrite chain: each step names the rule, where it applies, and the
/// whole term it produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub initial: Term,
    pub steps: Vec<Step>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CertificateParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Term { line: usize, source: ParseError },
    #[error("missing `initial:` header")]
    MissingInitial,
}

impl Certificate {
    pub fn new(initial: Term) -> Self {
        Certificate {
            initial,
            steps: Vec::new(),
        }
    }

    pub fn final_term(&self) -> &Term {
        self.steps.last().map(|s| &s.result).unwrap_or(&self.initial)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends a chain that starts where this one ends.
    pub fn extend(&mut self, next: Certificate) {
        debug_assert_eq!(self.final_term(), &next.initial);
        self.steps.extend(next.steps);
    }

    /// Rule name → number of uses.
    pub fn rule_counts(&self) -> HashMap<String, usize> {
        let mut counts = HashMap::new();
        for s in &self.steps {
            *counts.entry(s.rule.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("initial: {}\n", self.initial);
        for s in &self.steps {
            out.push_str(&format!("{} @ {} -> {}\n", s.rule, s.position, s.result));
        }
        out
    }

    /// Parses the text format written by [`Certificate::to_text`]. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str, sig: &Signature) -> Result<Certificate, CertificateParseError> {
        let mut cert: Option<Certificate> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let term =
                |s: &str| parse_sexpr(s, sig).map_err(|source| CertificateParseError::Term { line: line_no, source });
            match cert.as_mut() {
                None => {
                    let rest = line
                        .strip_prefix("initial:")
                        .ok_or(CertificateParseError::MissingInitial)?;
                    cert = Some(Certificate::new(term(rest)?));
                }
                Some(c) => {
                    let syntax = |msg: &str| CertificateParseError::Syntax {
                        line: line_no,
                        msg: msg.to_string(),
                    };
                    let (rule, rest) = line
                        .split_once(" @ ")
                        .ok_or_else(|| syntax("expected `<rule> @ <path> -> <term>`"))?;
                    let (path, result) = rest.split_once("->").ok_or_else(|| syntax("expected `-> <term>`"))?;
                    let position = path.parse::<Position>().map_err(|m| syntax(&m))?;
                    c.steps.push(Step {
                        rule: rule.trim().to_string(),
                        position,
                        result: term(result)?,
                    });
                }
            }
        }
        cert.ok_or(CertificateParseError::MissingInitial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepFailure {
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error("replay produced {actual}, certificate claims {claimed}")]
    ResultMismatch { claimed: Term, actual: Term },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok {
        final_term: Term,
    },
    /// `step` is the 0-based index of the first step that fails to replay.
    Failed {
        step: usize,
        reason: StepFailure,
    },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok { .. })
    }
}

/// Replays every step from the initial term and checks each claimed result.
pub fn verify_chain(c: &Certificate, rules: &RuleSet) -> Verdict {
    let mut current = c.initial.clone();
    for (i, step) in c.steps.iter().enumerate() {
        let fail = |reason| Verdict::Failed { step: i, reason };
        let Some(rule) = rules.get(&step.rule) else {
            return fail(StepFailure::UnknownRule(step.rule.clone()));
        };
        let next = match apply_rule_at(&current, rule, &step.position) {
            Ok(t) => t,
            Err(e) => return fail(e.into()),
        };
        if next != step.result {
            return fail(StepFailure::ResultMismatch {
                claimed: step.result.clone(),
                actual: next,
            });
        }
        current = next;
    }
    Verdict::Ok { final_term: current }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig() -> Signature {
        Signature::ring_char2()
    }

    fn t(s: &str) -> Term {
        parse_sexpr(s, &sig()).unwrap()
    }

    #[test]
    fn nonlinear_match() {
        let pat = Pattern::parse("(+ ?a ?a)").unwrap();
        let s = match_pattern(&pat, &t("(+ (* x y) (* x y))")).unwrap();
        assert_eq!(s[&Symbol::new("a")], t("(* x y)"));
        assert!(match_pattern(&pat, &t("(+ x y)")).is_none());
    }

    #[test]
    fn constant_in_pattern() {
        let pat = Pattern::parse("(+ ?a 0)").unwrap();
        let s = match_pattern(&pat, &t("(+ (* x x) 0)")).unwrap();
        assert_eq!(s[&Symbol::new("a")], t("(* x x)"));
        assert!(match_pattern(&pat, &t("(+ (* x x) y)")).is_none());
    }

    #[test]
    fn apply_examples() {
        let rs = RuleSet::ring_char2();
        let r = apply_rule_at(&t("(sqr (+ x y))"), rs.get("Sqr-fwd").unwrap(), &Position::root()).unwrap();
        assert_eq!(r, t("(* (+ x y) (+ x y))"));
        let r = apply_rule_at(&t("(+ (* x y) (* x y))"), rs.get("Char-2").unwrap(), &Position::root()).unwrap();
        assert_eq!(r, t("0"));
        let r = apply_rule_at(
            &t("(+ (+ (* x x) 0) (* y y))"),
            rs.get("Add-0").unwrap(),
            &Position(vec![0]),
        )
        .unwrap();
        assert_eq!(r, t("(+ (* x x) (* y y))"));
    }

    #[test]
    fn apply_errors_are_distinct() {
        let rs = RuleSet::ring_char2();
        let distr = rs.get("Distr").unwrap();
        assert_eq!(
            apply_rule_at(&t("(+ x y)"), distr, &Position(vec![3])),
            Err(RewriteError::InvalidPosition(Position(vec![3])))
        );
        assert!(matches!(
            apply_rule_at(&t("(+ x y)"), distr, &Position::root()),
            Err(RewriteError::PatternMismatch { .. })
        ));
    }

    #[test]
    fn ring_char2_contents() {
        let rs = RuleSet::ring_char2();
        assert_eq!(rs.len(), 11);
        let tc = rs.get("Times-C-fwd").unwrap();
        assert_eq!(tc.lhs.to_string(), "(* ?a ?b)");
        assert_eq!(tc.rhs.to_string(), "(* ?b ?a)");
        let names: Vec<&str> = rs.rules().iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "Sqr-fwd",
                "Sqr-rev",
                "Char-2",
                "Add-0",
                "Add-C-fwd",
                "Add-C-rev",
                "Times-C-fwd",
                "Times-C-rev",
                "Add-A-fwd",
                "Add-A-rev",
                "Distr"
            ]
        );
    }

    #[test]
    fn poly_ac_contents() {
        let rs = RuleSet::poly_ac();
        assert_eq!(rs.len(), 10);
        let f = rs.get("Factor").unwrap();
        assert_eq!(f.lhs.to_string(), "(+ (* ?a ?c) (* ?b ?c))");
        assert_eq!(f.rhs.to_string(), "(* (+ ?a ?b) ?c)");
        assert!(rs.get("Times-A-fwd").is_some() && rs.get("Times-A-rev").is_some());
    }

    #[test]
    fn inverses() {
        let rs = RuleSet::ring_char2();
        let inv = |n: &str| {
            rs.inverse_of(rs.index_of(n).unwrap())
                .map(|i| rs.rules()[i].name.clone())
        };
        assert_eq!(inv("Sqr-fwd").as_deref(), Some("Sqr-rev"));
        assert_eq!(inv("Add-A-rev").as_deref(), Some("Add-A-fwd"));
        assert!(inv("Add-C-fwd").unwrap().starts_with("Add-C"));
        assert_eq!(inv("Distr"), None);
        assert_eq!(inv("Char-2"), None);
        assert_eq!(inv("Add-0"), None);
        let poly = RuleSet::poly_ac();
        let d = poly.index_of("Distr").unwrap();
        assert_eq!(poly.rules()[poly.inverse_of(d).unwrap()].name, "Factor");
    }

    #[test]
    fn rule_invariants() {
        assert!(matches!(
            Rule::new(
                "bad",
                Pattern::parse("(+ ?a 0)").unwrap(),
                Pattern::parse("?b").unwrap()
            ),
            Err(RuleError::UnboundVariable { .. })
        ));
        let r = Rule::new("x", Pattern::leaf("0"), Pattern::leaf("0")).unwrap();
        assert_eq!(
            RuleSet::new("dup", vec![r.clone(), r]).unwrap_err(),
            RuleError::DuplicateName("x".into())
        );
    }

    #[test]
    fn ruleset_file_roundtrip() {
        let rs = RuleSet::ring_char2();
        let parsed = RuleSet::parse(&rs.to_file_format()).unwrap();
        assert_eq!(parsed.name, "ring-char2");
        assert_eq!(parsed.rules().len(), rs.rules().len());
        for (a, b) in parsed.rules().iter().zip(rs.rules()) {
            assert_eq!((&a.name, &a.lhs, &a.rhs), (&b.name, &b.lhs, &b.rhs));
        }
        let custom = RuleSet::parse("# comment\nComm: (+ ?a ?b) <=> (+ ?b ?a)\nZero: (+ ?a 0) => ?a\n").unwrap();
        let names: Vec<_> = custom.rules().iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["Comm-fwd", "Comm-rev", "Zero"]);
        assert!(RuleSet::parse("Broken (+ ?a ?b)\n").is_err());
        assert!(RuleSet::parse("Bad: (+ ?a 0) => ?b\n").is_err());
        assert!(custom.check_signature(&sig()).is_ok());
        assert!(RuleSet::parse("Q: (q ?a) => ?a")
            .unwrap()
            .check_signature(&sig())
            .is_err());
    }

    #[test]
    fn fwd_then_rev_is_identity() {
        let rs = RuleSet::ring_char2();
        for (fwd, rev, term) in [
            ("Sqr-fwd", "Sqr-rev", "(sqr (+ x y))"),
            ("Add-A-fwd", "Add-A-rev", "(+ x (+ y 0))"),
            ("Add-C-fwd", "Add-C-rev", "(+ x (* y y))"),
        ] {
            let a = t(term);
            let b = apply_rule_at(&a, rs.get(fwd).unwrap(), &Position::root()).unwrap();
            let c = apply_rule_at(&b, rs.get(rev).unwrap(), &Position::root()).unwrap();
            assert_eq!(a, c, "{fwd}/{rev}");
        }
    }

    #[test]
    fn empty_chain_verifies() {
        let c = Certificate::new(t("(+ x y)"));
        assert_eq!(
            verify_chain(&c, &RuleSet::ring_char2()),
            Verdict::Ok {
                final_term: t("(+ x y)")
            }
        );
    }

    #[test]
    fn certificate_text_roundtrip() {
        let rs = RuleSet::ring_char2();
        let start = t("(sqr (+ x y))");
        let next = apply_rule_at(&start, rs.get("Sqr-fwd").unwrap(), &Position::root()).unwrap();
        let last = apply_rule_at(&next, rs.get("Add-C-fwd").unwrap(), &Position(vec![1])).unwrap();
        let mut c = Certificate::new(start);
        c.steps.push(Step {
            rule: "Sqr-fwd".into(),
            position: Position::root(),
            result: next,
        });
        c.steps.push(Step {
            rule: "Add-C-fwd".into(),
            position: Position(vec![1]),
            result: last,
        });
        let text = c.to_text();
        assert_eq!(
            text,
            "initial: (sqr (+ x y))\nSqr-fwd @ root -> (* (+ x y) (+ x y))\nAdd-C-fwd @ 1 -> (* (+ x y) (+ y x))\n"
        );
        assert_eq!(Certificate::parse(&text, &sig()).unwrap(), c);
        assert!(verify_chain(&c, &rs).is_ok());
        assert_eq!(
            Certificate::parse("Sqr-fwd @ root -> x", &sig()).unwrap_err(),
            CertificateParseError::MissingInitial
        );
    }

    #[test]
    fn verify_reports_unknown_rule_and_mismatch() {
        let rs = RuleSet::ring_char2();
        let mut c = Certificate::new(t("(sqr x)"));
        c.steps.push(Step {
            rule: "Nope".into(),
            position: Position::root(),
            result: t("x"),
        });
        assert!(matches!(
            verify_chain(&c, &rs),
            Verdict::Failed {
                step: 0,
                reason: StepFailure::UnknownRule(_)
            }
        ));
        c.steps[0] = Step {
            rule: "Sqr-fwd".into(),
            position: Position::root(),
            result: t("(* y y)"),
        };
        assert!(matches!(
            verify_chain(&c, &rs),
            Verdict::Failed {
                step: 0,
                reason: StepFailure::ResultMismatch { .. }
            }
        ));
    }
}
