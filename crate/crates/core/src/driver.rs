//! Solvers: the phased preference-guided loop, plain equality saturation,
//! and asking a chat model for a whole rewrite chain; plus the benchmark
//! harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::bigram::BigramModel;
use crate::egraph::{EGraph, Id, SaturationLimits, Snapshot};
use crate::extract::{default_max_depth, extract_checkpoint, QueryRecord, RefineConfig};
use crate::lang::{Signature, Term};
use crate::oracle::{factorization_description, ChatClient, GoalContext, Message, Oracle, OracleError};
use crate::rewrite::{verify_chain, Certificate, RuleSet, Verdict};
use crate::tasks::{is_goal, Task};

/// What counts as solved.
#[derive(Clone)]
pub enum Goal {
    /// Reach exactly this term.
    Term(Term),
    /// No `+` node has a `*` node below it.
    MultiplicationForm,
    /// Any term satisfying the predicate; found in e-graphs by bounded
    /// enumeration.
    Predicate {
        name: String,
        test: Arc<dyn Fn(&Term) -> bool + Send + Sync>,
    },
}

impl fmt::Debug for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::Term(t) => write!(f, "Goal::Term({t})"),
            Goal::MultiplicationForm => f.write_str("Goal::MultiplicationForm"),
            Goal::Predicate { name, .. } => write!(f, "Goal::Predicate({name})"),
        }
    }
}

/// Enumeration cap for predicate goals.
const PREDICATE_SCAN: usize = 5_000;

impl Goal {
    pub fn satisfied(&self, t: &Term) -> bool {
        match self {
            Goal::Term(g) => g == t,
            Goal::MultiplicationForm => is_goal(t),
            Goal::Predicate { test, .. } => test(t),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Goal::Term(t) => format!("reach exactly {t}"),
            Goal::MultiplicationForm => "reach a product of sums of variables, with no + above a *".into(),
            Goal::Predicate { name, .. } => name.clone(),
        }
    }

    /// A represented goal term in the class of `root`: the smallest, then
    /// lexicographically first, for the structural goals.
    pub fn find_in(&self, g: &EGraph, root: Id, depth_hint: usize) -> Option<Term> {
        match self {
            Goal::Term(t) => g.represents(root, t).then(|| t.clone()),
            Goal::MultiplicationForm => smallest_multiplication_form(&g.snapshot(root)),
            Goal::Predicate { test, .. } => g
                .enumerate_terms(root, depth_hint, PREDICATE_SCAN)
                .into_iter()
                .find(|t| test(t)),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Form {
    /// Contains no `*`.
    ProductFree,
    Goal,
}

/// Smallest multiplication-form term extractable from the snapshot root.
fn smallest_multiplication_form(snap: &Snapshot) -> Option<Term> {
    let sig = &snap.sig;
    let star = sig.index_of("*").map(|i| i as u32);
    let plus = sig.index_of("+").map(|i| i as u32);
    let n = snap.classes.len();
    let mut best: HashMap<Form, Vec<Option<usize>>> =
        HashMap::from([(Form::ProductFree, vec![None; n]), (Form::Goal, vec![None; n])]);
    // What each node needs from its children, per form; None = impossible.
    let needs = |op: u32, form: Form| -> Option<Form> {
        if Some(op) == star {
            (form == Form::Goal).then_some(Form::Goal)
        } else if Some(op) == plus {
            Some(Form::ProductFree)
        } else {
            Some(form)
        }
    };
    loop {
        let mut changed = false;
        for form in [Form::ProductFree, Form::Goal] {
            for c in 0..n {
                for node in &snap.classes[c] {
                    let Some(child_form) = needs(node.op, form) else {
                        continue;
                    };
                    let mut size = 1;
                    let mut ok = true;
                    for &ch in &node.children {
                        match best[&child_form][ch] {
                            Some(s) => size += s,
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok && best[&form][c].is_none_or(|s| size < s) {
                        best.get_mut(&form).unwrap()[c] = Some(size);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut memo = HashMap::new();
    build_form(snap, snap.root, Form::Goal, &best, &needs, &mut memo)
}

fn build_form(
    snap: &Snapshot,
    class: usize,
    form: Form,
    best: &HashMap<Form, Vec<Option<usize>>>,
    needs: &dyn Fn(u32, Form) -> Option<Form>,
    memo: &mut HashMap<(usize, Form), Term>,
) -> Option<Term> {
    if let Some(t) = memo.get(&(class, form)) {
        return Some(t.clone());
    }
    let target = best[&form][class]?;
    let mut chosen: Option<Term> = None;
    for node in &snap.classes[class] {
        let Some(child_form) = needs(node.op, form) else {
            continue;
        };
        let sizes: Option<usize> = node.children.iter().map(|&ch| best[&child_form][ch]).sum();
        if sizes.map(|s| s + 1) != Some(target) {
            continue;
        }
        let kids = node
            .children
            .iter()
            .map(|&ch| build_form(snap, ch, child_form, best, needs, memo))
            .collect::<Option<Vec<Term>>>()?;
        let t = snap.node_term(class, node, kids);
        if chosen.as_ref().is_none_or(|c| t.cmp_size_lex(c).is_lt()) {
            chosen = Some(t);
        }
    }
    if let Some(t) = &chosen {
        memo.insert((class, form), t.clone());
    }
    chosen
}

/// One rewriting problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub sig: Arc<Signature>,
    pub rules: RuleSet,
    pub start: Term,
    pub goal: Option<Goal>,
    /// Sentence fragment describing the task to an oracle.
    pub description: String,
}

impl Problem {
    pub fn from_task(task: &Task) -> Problem {
        Problem {
            sig: Arc::new(task.signature()),
            rules: RuleSet::poly_ac(),
            start: task.start.clone(),
            goal: Some(Goal::MultiplicationForm),
            description: factorization_description(&task.start),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseConfig {
    pub saturation: SaturationLimits,
    pub refine: RefineConfig,
    pub max_phases: usize,
    pub total_timeout: Option<Duration>,
    /// Advisory only; enforce memory through `saturation.max_nodes`.
    pub memory_limit: Option<u64>,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            saturation: SaturationLimits::time(Duration::from_secs(5)),
            refine: RefineConfig::default(),
            max_phases: 30,
            total_timeout: Some(Duration::from_secs(150)),
            memory_limit: Some(24 << 30),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    Goal,
    Timeout,
    PhaseLimit,
    OracleFailure,
    /// A certificate segment could not be produced.
    ExplainFailure,
    /// Saturation ended without reaching the goal.
    Exhausted,
    /// A proposed chain did not parse.
    ParseFailure,
    /// A proposed chain failed verification or missed the goal.
    InvalidChain,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub solved: bool,
    pub final_term: Term,
    /// Phase outputs, starting with the initial term.
    pub checkpoints: Vec<Term>,
    pub certificate: Certificate,
    pub phase_count: usize,
    pub saturation_iterations: usize,
    pub wall_time: Duration,
    pub oracle_queries: usize,
    pub stop_reason: StopReason,
    pub query_log: Vec<QueryRecord>,
    /// Human-readable reason for failures.
    pub detail: Option<String>,
}

impl RunResult {
    fn new(start: &Term) -> Self {
        RunResult {
            solved: false,
            final_term: start.clone(),
            checkpoints: vec![start.clone()],
            certificate: Certificate::new(start.clone()),
            phase_count: 0,
            saturation_iterations: 0,
            wall_time: Duration::ZERO,
            oracle_queries: 0,
            stop_reason: StopReason::Exhausted,
            query_log: Vec::new(),
            detail: None,
        }
    }
}

fn phase_seed(seed: u64, phase: usize) -> u64 {
    seed.wrapping_add((phase as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Phased search: saturate from the current term, stop if the goal is
/// represented, otherwise pick a checkpoint with the oracle and repeat
/// until the checkpoint stops changing.
pub fn run_lguess(problem: &Problem, oracle: &mut dyn Oracle, cfg: &PhaseConfig) -> RunResult {
    let started = Instant::now();
    let deadline = cfg.total_timeout.map(|d| started + d);
    let mut res = RunResult::new(&problem.start);
    let finish = |mut res: RunResult, reason: StopReason| {
        res.stop_reason = reason;
        res.solved = match &problem.goal {
            Some(goal) => goal.satisfied(&res.final_term),
            None => reason == StopReason::Converged,
        } && !matches!(reason, StopReason::ExplainFailure);
        res.wall_time = started.elapsed();
        res
    };
    let ctx0 = match GoalContext::new(problem.description.clone(), problem.start.clone()) {
        Ok(c) => c,
        Err(e) => {
            res.detail = Some(e.to_string());
            return finish(res, StopReason::OracleFailure);
        }
    };
    if problem.goal.as_ref().is_some_and(|g| g.satisfied(&problem.start)) {
        res.phase_count = 1;
        return finish(res, StopReason::Goal);
    }
    let mut current = problem.start.clone();
    for phase in 1..=cfg.max_phases {
        let mut limits = cfg.saturation.clone();
        if let Some(d) = deadline {
            let left = d.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return finish(res, StopReason::Timeout);
            }
            limits.time_budget = Some(limits.time_budget.map_or(left, |b| b.min(left)));
        }
        res.phase_count = phase;
        let mut g = EGraph::new(problem.sig.clone());
        let root = match g.add_term(&current) {
            Ok(r) => r,
            Err(e) => {
                res.detail = Some(e.to_string());
                return finish(res, StopReason::ExplainFailure);
            }
        };
        let report = g.saturate(&problem.rules, &limits);
        res.saturation_iterations += report.iterations_run;
        log::debug!("phase {phase}: {report:?}");

        if let Some(goal) = &problem.goal {
            if let Some(target) = goal.find_in(&g, root, default_max_depth(&current)) {
                if !append_segment(&mut res, &mut g, &current, &target) {
                    return finish(res, StopReason::ExplainFailure);
                }
                res.checkpoints.push(target.clone());
                res.final_term = target;
                return finish(res, StopReason::Goal);
            }
        }

        let ctx = ctx0.for_phase(&current);
        let refine = RefineConfig {
            rng_seed: phase_seed(cfg.refine.rng_seed, phase),
            ..cfg.refine.clone()
        };
        let m0 = BigramModel::uniform(problem.sig.clone());
        let outcome = match extract_checkpoint(&g, root, &m0, oracle, &ctx, &refine, phase) {
            Ok(o) => o,
            Err(e) => {
                res.detail = Some(e.to_string());
                return finish(res, StopReason::ExplainFailure);
            }
        };
        res.oracle_queries += outcome.queries;
        res.query_log.extend(outcome.log);
        let checkpoint = outcome.term;
        if !append_segment(&mut res, &mut g, &current, &checkpoint) {
            return finish(res, StopReason::ExplainFailure);
        }
        res.checkpoints.push(checkpoint.clone());
        res.final_term = checkpoint.clone();
        if let Some(e) = outcome.failure {
            res.detail = Some(e.to_string());
            return finish(res, StopReason::OracleFailure);
        }
        if checkpoint == current {
            return finish(res, StopReason::Converged);
        }
        if problem.goal.as_ref().is_some_and(|g| g.satisfied(&checkpoint)) {
            return finish(res, StopReason::Goal);
        }
        current = checkpoint;
    }
    finish(res, StopReason::PhaseLimit)
}

fn append_segment(res: &mut RunResult, g: &mut EGraph, from: &Term, to: &Term) -> bool {
    match g.explain(from, to) {
        Ok(seg) => {
            res.certificate.extend(seg);
            true
        }
        Err(e) => {
            res.detail = Some(format!("explaining {from} -> {to}: {e}"));
            false
        }
    }
}

/// One saturation run from the start term, checking the goal after every
/// iteration.
pub fn run_direct_es(problem: &Problem, limits: &SaturationLimits) -> RunResult {
    let started = Instant::now();
    let mut res = RunResult::new(&problem.start);
    res.phase_count = 1;
    let goal = problem.goal.clone().unwrap_or(Goal::Predicate {
        name: "never".into(),
        test: Arc::new(|_| false),
    });
    if goal.satisfied(&problem.start) {
        res.solved = true;
        res.stop_reason = StopReason::Goal;
        res.wall_time = started.elapsed();
        return res;
    }
    let mut g = EGraph::new(problem.sig.clone());
    let root = match g.add_term(&problem.start) {
        Ok(r) => r,
        Err(e) => {
            res.detail = Some(e.to_string());
            res.wall_time = started.elapsed();
            return res;
        }
    };
    let depth = default_max_depth(&problem.start);
    let mut found = None;
    let report = g.saturate_with(&problem.rules, limits, |g, _| {
        found = goal.find_in(g, root, depth);
        found.is_some()
    });
    res.saturation_iterations = report.iterations_run;
    res.stop_reason = match (&found, report.stop_reason) {
        (Some(_), _) => StopReason::Goal,
        (None, crate::egraph::StopReason::TimeLimit) => StopReason::Timeout,
        (None, _) => StopReason::Exhausted,
    };
    if let Some(target) = found {
        if append_segment(&mut res, &mut g, &problem.start, &target) {
            res.checkpoints.push(target.clone());
            res.final_term = target;
            res.solved = true;
        } else {
            res.stop_reason = StopReason::ExplainFailure;
        }
    }
    res.wall_time = started.elapsed();
    res
}

/// The single request sent by [`run_direct_llm`].
pub fn direct_llm_prompt(problem: &Problem) -> String {
    let goal = problem
        .goal
        .as_ref()
        .map_or_else(|| "simplify it as far as possible".to_string(), Goal::describe);
    let mut rules = String::new();
    for r in problem.rules.rules() {
        rules.push_str(&format!("{}: {} => {}\n", r.name, r.lhs, r.rhs));
    }
    format!(
        "I am {desc}.\n\
         Rewrite the s-expression {start} step by step. Goal: {goal}.\n\
         Use only these rewrite rules; names starting with ? are pattern variables:\n\
         {rules}\
         Apply exactly one rule per step. Write the chain as plain lines: first\n\
         initial: {start}\n\
         then one line per step in the form\n\
         <rule name> @ <position> -> <whole term after the step>\n\
         where <position> is root or the dot-separated 0-based child indices of the rewritten subterm.",
        desc = problem.description,
        start = problem.start,
    )
}

/// Keeps only chain lines from a chat reply, tolerating list markers,
/// numbering and code fences.
pub fn extract_chain_text(reply: &str) -> String {
    let mut out = String::new();
    for line in reply.lines() {
        let mut l = line.trim().trim_matches('`').trim();
        l = l.trim_start_matches(['-', '*']).trim_start();
        if let Some(pos) = l.find(". ") {
            if l[..pos].chars().all(|c| c.is_ascii_digit()) && pos > 0 {
                l = &l[pos + 2..];
            }
        }
        if l.starts_with("initial:") || (l.contains(" @ ") && l.contains(" -> ")) {
            out.push_str(l);
            out.push('\n');
        }
    }
    out
}

/// Asks the chat model for a complete chain and verifies it.
pub fn run_direct_llm(problem: &Problem, client: &mut dyn ChatClient) -> RunResult {
    let started = Instant::now();
    let mut res = RunResult::new(&problem.start);
    res.phase_count = 1;
    let done = |mut res: RunResult, reason: StopReason, detail: Option<String>| {
        res.stop_reason = reason;
        res.detail = detail;
        res.wall_time = started.elapsed();
        res
    };
    let reply = match client.chat(&[Message::user(direct_llm_prompt(problem))]) {
        Ok(r) => r,
        Err(e) => return done(res, StopReason::OracleFailure, Some(e.to_string())),
    };
    res.oracle_queries = 1;
    let mut text = extract_chain_text(&reply);
    if text.trim().is_empty() {
        return done(
            res,
            StopReason::ParseFailure,
            Some("reply contains no chain lines".into()),
        );
    }
    if !text.starts_with("initial:") {
        text = format!("initial: {}\n{}", problem.start, text);
    }
    let cert = match Certificate::parse(&text, &problem.sig) {
        Ok(c) => c,
        Err(e) => return done(res, StopReason::ParseFailure, Some(e.to_string())),
    };
    if cert.initial != problem.start {
        return done(
            res,
            StopReason::InvalidChain,
            Some(format!("chain starts at {} instead of {}", cert.initial, problem.start)),
        );
    }
    match verify_chain(&cert, &problem.rules) {
        Verdict::Ok { final_term } => {
            let reached = problem.goal.as_ref().is_none_or(|g| g.satisfied(&final_term));
            res.final_term = final_term.clone();
            res.checkpoints.push(final_term);
            res.certificate = cert;
            if reached {
                res.solved = true;
                done(res, StopReason::Goal, None)
            } else {
                done(
                    res,
                    StopReason::InvalidChain,
                    Some("chain verifies but misses the goal".into()),
                )
            }
        }
        Verdict::Failed { step, reason } => done(
            res,
            StopReason::InvalidChain,
            Some(format!("step {step} fails: {reason}")),
        ),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Lguess,
    DirectEs,
    DirectLlm,
}

impl std::str::FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lguess" => Ok(Solver::Lguess),
            "direct-es" => Ok(Solver::DirectEs),
            "direct-llm" => Ok(Solver::DirectLlm),
            other => Err(format!("unknown solver `{other}`")),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Lguess => "lguess",
            Solver::DirectEs => "direct-es",
            Solver::DirectLlm => "direct-llm",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub solver: Solver,
    pub phase: PhaseConfig,
    /// Limits for the direct-es solver.
    pub direct_es: SaturationLimits,
    pub parallelism: usize,
    /// Include wall-clock times in the records (makes output vary).
    pub with_timings: bool,
}

pub type OracleFactory<'a> = dyn Fn(&Task) -> Result<Box<dyn Oracle>, OracleError> + Sync + 'a;
pub type ClientFactory<'a> = dyn Fn(&Task) -> Result<Box<dyn ChatClient>, OracleError> + Sync + 'a;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub id: String,
    pub n_d: usize,
    pub n_v: usize,
    pub solver: Solver,
    pub solved: bool,
    pub stop_reason: StopReason,
    pub phases: usize,
    pub iterations: usize,
    pub oracle_queries: usize,
    pub certificate_steps: usize,
    pub certificate_valid: bool,
    pub final_term: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Runs one task with the configured solver.
pub fn run_task(
    task: &Task,
    cfg: &BenchConfig,
    oracles: Option<&OracleFactory>,
    clients: Option<&ClientFactory>,
) -> (TaskRecord, RunResult) {
    let problem = Problem::from_task(task);
    let result = match cfg.solver {
        Solver::DirectEs => run_direct_es(&problem, &cfg.direct_es),
        Solver::Lguess => match oracles.map(|f| f(task)) {
            Some(Ok(mut oracle)) => {
                let mut phase = cfg.phase.clone();
                phase.refine.rng_seed ^= task.spec.seed ^ id_hash(&task.id);
                run_lguess(&problem, oracle.as_mut(), &phase)
            }
            Some(Err(e)) => failed(&problem, e.to_string()),
            None => failed(&problem, "no oracle configured".into()),
        },
        Solver::DirectLlm => match clients.map(|f| f(task)) {
            Some(Ok(mut client)) => run_direct_llm(&problem, client.as_mut()),
            Some(Err(e)) => failed(&problem, e.to_string()),
            None => failed(&problem, "no chat client configured".into()),
        },
    };
    let valid = verify_chain(&result.certificate, &problem.rules).is_ok()
        && result.certificate.final_term() == &result.final_term;
    let record = TaskRecord {
        id: task.id.clone(),
        n_d: task.spec.n_d,
        n_v: task.spec.n_v,
        solver: cfg.solver,
        solved: result.solved,
        stop_reason: result.stop_reason,
        phases: result.phase_count,
        iterations: result.saturation_iterations,
        oracle_queries: result.oracle_queries,
        certificate_steps: result.certificate.len(),
        certificate_valid: valid,
        final_term: result.final_term.to_string(),
        detail: result.detail.clone(),
        wall_ms: cfg.with_timings.then_some(result.wall_time.as_secs_f64() * 1e3),
    };
    (record, result)
}

fn failed(problem: &Problem, detail: String) -> RunResult {
    let mut r = RunResult::new(&problem.start);
    r.stop_reason = StopReason::OracleFailure;
    r.detail = Some(detail);
    r
}

fn id_hash(id: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Runs every task on a pool of `cfg.parallelism` threads. Records come
/// back in dataset order.
pub fn bench(
    tasks: &[Task],
    cfg: &BenchConfig,
    oracles: Option<&OracleFactory>,
    clients: Option<&ClientFactory>,
) -> Result<Vec<TaskRecord>, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()?;
    Ok(pool.install(|| tasks.par_iter().map(|t| run_task(t, cfg, oracles, clients).0).collect()))
}

pub fn records_jsonl(records: &[TaskRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Solved counts with one row per n_d and one column per n_v.
pub fn grid_csv(records: &[TaskRecord], nd_range: (usize, usize), nv_range: (usize, usize)) -> String {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.solved) {
        *counts.entry((r.n_d, r.n_v)).or_insert(0) += 1;
    }
    let mut out = String::from("n_d");
    for v in nv_range.0..=nv_range.1 {
        out.push_str(&format!(",n_v={v}"));
    }
    out.push('\n');
    for d in nd_range.0..=nd_range.1 {
        out.push_str(&d.to_string());
        for v in nv_range.0..=nv_range.1 {
            out.push_str(&format!(",{}", counts.get(&(d, v)).copied().unwrap_or(0)));
        }
        out.push('\n');
    }
    out
}
