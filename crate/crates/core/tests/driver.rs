mod common;

use std::sync::Arc;

use guidesat::driver::{
    bench, direct_llm_prompt, grid_csv, records_jsonl, run_direct_es, run_direct_llm, run_lguess, BenchConfig, Goal,
    OracleFactory, PhaseConfig, Problem, Solver, StopReason,
};
use guidesat::egraph::SaturationLimits;
use guidesat::extract::RefineConfig;
use guidesat::lang::Signature;
use guidesat::oracle::{
    factorization_description, ring_simplification_description, Choice, Heuristic, HeuristicOracle, Message, Oracle,
    OracleError, ScriptedOracle,
};
use guidesat::rewrite::{verify_chain, RuleSet};
use guidesat::tasks::{build_dataset, equivalent_polynomials, is_goal, Task};

use common::{ring, term};

/// The three-stage outline for (x+y)² = x²+y², one rule per line.
const FRESHMAN_CHAIN: &str = "\
initial: (sqr (+ x y))
Sqr-fwd @ root -> (* (+ x y) (+ x y))
Distr @ root -> (+ (* x (+ x y)) (* y (+ x y)))
Times-C-fwd @ 0 -> (+ (* (+ x y) x) (* y (+ x y)))
Times-C-fwd @ 1 -> (+ (* (+ x y) x) (* (+ x y) y))
Distr @ 0 -> (+ (+ (* x x) (* y x)) (* (+ x y) y))
Distr @ 1 -> (+ (+ (* x x) (* y x)) (+ (* x y) (* y y)))
Times-C-fwd @ 0.1 -> (+ (+ (* x x) (* x y)) (+ (* x y) (* y y)))
Add-A-fwd @ root -> (+ (+ (+ (* x x) (* x y)) (* x y)) (* y y))
Add-A-rev @ 0 -> (+ (+ (* x x) (+ (* x y) (* x y))) (* y y))
Char-2 @ 0.1 -> (+ (+ (* x x) 0) (* y y))
Add-0 @ 0 -> (+ (* x x) (* y y))
Sqr-rev @ 0 -> (+ (sqr x) (* y y))
Sqr-rev @ 1 -> (+ (sqr x) (sqr y))
";

fn freshman(goal: Option<Goal>) -> Problem {
    let sig = ring();
    let start = term("(sqr (+ x y))", &sig);
    Problem {
        description: ring_simplification_description(&start),
        sig,
        rules: RuleSet::ring_char2(),
        start,
        goal,
    }
}

fn freshman_goal() -> Option<Goal> {
    Some(Goal::Term(term("(+ (sqr x) (sqr y))", &ring())))
}

fn poly(start: &str, n_vars: usize) -> Problem {
    let sig = Arc::new(Signature::polynomial(n_vars));
    let start = term(start, &sig);
    Problem {
        description: factorization_description(&start),
        sig,
        rules: RuleSet::poly_ac(),
        start,
        goal: Some(Goal::MultiplicationForm),
    }
}

#[test]
fn direct_llm_accepts_the_thirteen_step_chain() {
    let problem = freshman(freshman_goal());
    let mut seen = Vec::new();
    let mut client = |msgs: &[Message]| -> Result<String, OracleError> {
        seen.push(msgs[0].content.clone());
        Ok(format!("Here is the chain:\n```\n{FRESHMAN_CHAIN}```\n"))
    };
    let r = run_direct_llm(&problem, &mut client);
    assert!(r.solved, "{:?}", r.detail);
    assert_eq!(r.stop_reason, StopReason::Goal);
    assert_eq!(r.certificate.len(), 13);
    assert_eq!(r.oracle_queries, 1);
    let prompt = &seen[0];
    assert_eq!(prompt, &direct_llm_prompt(&problem));
    for rule in problem.rules.rules() {
        assert!(prompt.contains(&rule.name), "prompt lacks {}", rule.name);
    }
}

#[test]
fn direct_llm_rejects_skipped_steps() {
    let problem = freshman(freshman_goal());
    let skipped: String = FRESHMAN_CHAIN
        .lines()
        .filter(|l| !l.starts_with("Times-C-fwd @ 0.1"))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut client = move |_: &[Message]| -> Result<String, OracleError> { Ok(skipped.clone()) };
    let r = run_direct_llm(&problem, &mut client);
    assert!(!r.solved);
    assert_eq!(r.stop_reason, StopReason::InvalidChain);
    let detail = r.detail.unwrap();
    assert!(detail.starts_with("step 6 fails"), "{detail}");
}

#[test]
fn direct_llm_empty_reply_is_a_parse_failure() {
    let problem = freshman(freshman_goal());
    let mut client = |_: &[Message]| -> Result<String, OracleError> { Ok(String::new()) };
    let r = run_direct_llm(&problem, &mut client);
    assert!(!r.solved);
    assert_eq!(r.stop_reason, StopReason::ParseFailure);
}

#[test]
fn direct_es_finds_freshmans_dream() {
    let r = run_direct_es(&freshman(freshman_goal()), &SaturationLimits::iterations(20));
    assert!(r.solved);
    assert_eq!(r.saturation_iterations, 8);
    assert!(verify_chain(&r.certificate, &RuleSet::ring_char2()).is_ok());
    assert_eq!(r.certificate.final_term().to_string(), "(+ (sqr x) (sqr y))");
}

#[test]
fn direct_es_factors_the_sample_task() {
    let problem = poly("(+ (* z y) (+ (* x y) (* y y)))", 3);
    let r = run_direct_es(&problem, &SaturationLimits::iterations(10).with_max_nodes(50_000));
    assert!(r.solved, "{:?}", r.stop_reason);
    assert!(is_goal(&r.final_term));
    assert!(equivalent_polynomials(&problem.start, &r.final_term));
    assert!(verify_chain(&r.certificate, &problem.rules).is_ok());
}

#[test]
fn goal_at_start_is_immediate() {
    let problem = poly("(* (+ x y) x)", 2);
    let r = run_direct_es(&problem, &SaturationLimits::iterations(5));
    assert!(r.solved);
    assert_eq!(r.saturation_iterations, 0);
    let mut oracle = HeuristicOracle::new(Heuristic::FactorProgress);
    let r = run_lguess(&problem, &mut oracle, &PhaseConfig::default());
    assert!(r.solved);
    assert_eq!(r.oracle_queries, 0);
    assert!(r.certificate.is_empty());
}

fn quick_phases() -> PhaseConfig {
    PhaseConfig {
        saturation: SaturationLimits::iterations(3).with_max_nodes(5_000),
        max_phases: 6,
        ..PhaseConfig::default()
    }
}

#[test]
fn lguess_factors_with_heuristic_oracle() {
    let problem = poly("(+ (+ (* x x) (* y x)) (+ (* x y) (* y y)))", 2);
    let mut oracle = HeuristicOracle::new(Heuristic::FactorProgress);
    let r = run_lguess(&problem, &mut oracle, &quick_phases());
    assert!(r.solved, "{:?} {:?}", r.stop_reason, r.detail);
    assert!(is_goal(&r.final_term));
    assert_eq!(r.certificate.initial, problem.start);
    assert!(verify_chain(&r.certificate, &problem.rules).is_ok());
    assert_eq!(r.certificate.final_term(), &r.final_term);
    assert_eq!(r.checkpoints.first(), Some(&problem.start));
    assert_eq!(r.checkpoints.last(), Some(&r.final_term));
}

#[test]
fn lguess_is_deterministic_for_a_seed() {
    let problem = freshman(None);
    let cfg = PhaseConfig {
        saturation: SaturationLimits::iterations(3),
        refine: RefineConfig {
            rng_seed: 11,
            ..RefineConfig::default()
        },
        ..quick_phases()
    };
    let run = || {
        let mut oracle = HeuristicOracle::new(Heuristic::SmallerSize);
        let r = run_lguess(&problem, &mut oracle, &cfg);
        (r.checkpoints, r.query_log.len(), r.certificate)
    };
    assert_eq!(run(), run());
}

#[test]
fn exhausted_script_stops_with_oracle_failure() {
    let problem = freshman(None);
    let mut oracle = ScriptedOracle::new([Choice::Candidate, Choice::Current]);
    let r = run_lguess(&problem, &mut oracle, &quick_phases());
    assert_eq!(r.stop_reason, StopReason::OracleFailure);
    assert!(!r.solved);
    assert!(r.detail.unwrap().contains("script"));
    assert!(verify_chain(&r.certificate, &problem.rules).is_ok());
}

#[test]
fn bench_records_and_grid_agree() {
    let tasks = build_dataset((1, 2), (1, 2), 3, 4).unwrap();
    let cfg = BenchConfig {
        solver: Solver::Lguess,
        phase: quick_phases(),
        direct_es: SaturationLimits::iterations(1),
        parallelism: 2,
        with_timings: false,
    };
    let oracles = |_: &Task| -> Result<Box<dyn Oracle>, OracleError> {
        Ok(Box::new(HeuristicOracle::new(Heuristic::FactorProgress)))
    };
    let records = bench(&tasks, &cfg, Some(&oracles as &OracleFactory), None).unwrap();
    assert_eq!(records.len(), tasks.len());
    for (r, t) in records.iter().zip(&tasks) {
        assert_eq!(r.id, t.id);
        assert!(r.certificate_valid);
    }
    let again = bench(&tasks, &cfg, Some(&oracles as &OracleFactory), None).unwrap();
    assert_eq!(records_jsonl(&records), records_jsonl(&again));
    let csv = grid_csv(&records, (1, 2), (1, 2));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n_d,n_v=1,n_v=2");
    let total: usize = lines[1..]
        .iter()
        .flat_map(|l| l.split(',').skip(1))
        .map(|c| c.parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, records.iter().filter(|r| r.solved).count());
    assert_eq!(records_jsonl(&records).lines().count(), tasks.len());
}

#[test]
fn empty_bench_gives_zero_grid() {
    let cfg = BenchConfig {
        solver: Solver::DirectEs,
        phase: quick_phases(),
        direct_es: SaturationLimits::iterations(1),
        parallelism: 1,
        with_timings: false,
    };
    let records = bench(&[], &cfg, None, None).unwrap();
    assert!(records.is_empty());
    assert_eq!(grid_csv(&records, (2, 3), (2, 2)), "n_d,n_v=2\n2,0\n3,0\n");
}

#[test]
fn missing_oracle_is_reported_per_task() {
    let tasks = build_dataset((2, 2), (2, 2), 1, 0).unwrap();
    let cfg = BenchConfig {
        solver: Solver::Lguess,
        phase: quick_phases(),
        direct_es: SaturationLimits::iterations(1),
        parallelism: 1,
        with_timings: false,
    };
    let records = bench(&tasks, &cfg, None, None).unwrap();
    assert_eq!(records[0].stop_reason, StopReason::OracleFailure);
    assert!(!records[0].solved);
    assert_eq!(records[0].detail.as_deref(), Some("no oracle configured"));
}
