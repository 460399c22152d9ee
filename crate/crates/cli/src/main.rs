use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use guidesat::driver::{
    bench, grid_csv, records_jsonl, run_direct_es, run_direct_llm, run_lguess, BenchConfig, ClientFactory, Goal,
    OracleFactory, PhaseConfig, Problem, RunResult, Solver,
};
use guidesat::egraph::SaturationLimits;
use guidesat::extract::{RefineConfig, Sampler};
use guidesat::lang::{parse_sexpr, sexpr_atoms, Signature, Term, POLY_VARIABLES};
use guidesat::oracle::{
    factorization_description, ring_simplification_description, ChatClient, Heuristic, HeuristicOracle, HttpChatClient,
    HttpConfig, LlmOracle, Oracle, ReplayOracle, ScriptedOracle,
};
use guidesat::rewrite::{verify_chain, Certificate, RuleSet, Verdict};
use guidesat::tasks::{build_dataset, read_dataset, write_dataset, Task};

/// Exit code for usage and environment errors; 1 means unsolved or invalid.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "guidesat", version)]
#[command(about = "Phased equality saturation with preference-guided checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a factorization dataset
    Gen {
        /// Inclusive factor-count range, `A-B` or `A`
        #[arg(long, default_value = "2-5")]
        nd_range: String,
        /// Inclusive variable-count range, `A-B` or `A`
        #[arg(long, default_value = "2-5")]
        nv_range: String,
        #[arg(long, default_value_t = 20)]
        per_cell: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one rewriting problem
    Run(RunArgs),
    /// Run a solver over a dataset
    Bench(BenchArgs),
    /// Replay a certificate against a rule set
    Verify {
        #[arg(long)]
        cert: PathBuf,
        /// Builtin rule-set name (`ring-char2`, `poly-ac`) or rule file
        #[arg(long)]
        rules: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Start term as an s-expression
    term: Option<String>,
    /// Take the start term from this dataset (with --id)
    #[arg(long, requires = "id", conflicts_with = "term")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "lguess")]
    solver: Solver,
    /// Builtin rule-set name (`ring-char2`, `poly-ac`) or rule file
    #[arg(long, default_value = "poly-ac")]
    rules: String,
    /// `mult-form`, `term:<sexpr>` or `none`; defaults to `mult-form` for
    /// poly-ac and `none` otherwise
    #[arg(long)]
    goal: Option<String>,
    #[command(flatten)]
    phase: PhaseArgs,
    /// `heuristic:<name>`, `scripted:<file>`, `replay:<file>` or `http`
    #[arg(long, default_value = "heuristic:factor-progress")]
    oracle: String,
    /// Write the certificate here
    #[arg(long)]
    cert_out: Option<PathBuf>,
    /// Write the oracle query log here as JSON lines
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "lguess")]
    solver: Solver,
    /// Worker threads (defaults to available cores)
    #[arg(long)]
    parallelism: Option<usize>,
    #[command(flatten)]
    phase: PhaseArgs,
    /// `heuristic:<name>`, `scripted:<file>`, `replay:<file>` or `http`
    #[arg(long, default_value = "heuristic:factor-progress")]
    oracle: String,
    /// Iteration cap for direct-es (none: use --sat-timeout only)
    #[arg(long)]
    direct_iters: Option<usize>,
    /// JSON-lines records (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solved-count grid as CSV
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Include wall-clock times in the records
    #[arg(long)]
    with_timings: bool,
}

#[derive(Args, Clone)]
struct PhaseArgs {
    /// Saturation budget per phase, in seconds
    #[arg(long, default_value_t = 5.0)]
    sat_timeout: f64,
    /// Saturation iteration cap per phase
    #[arg(long)]
    sat_iters: Option<usize>,
    /// E-node cap per phase
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    #[arg(long, default_value_t = 30)]
    max_phases: usize,
    /// Wall-clock limit for one run, in seconds
    #[arg(long, default_value_t = 150.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `exact` or `local`
    #[arg(long, default_value = "exact")]
    sampler: Sampler,
}

impl PhaseArgs {
    fn limits(&self) -> Result<SaturationLimits> {
        let mut limits = SaturationLimits::time(secs(self.sat_timeout, "--sat-timeout")?);
        if let Some(n) = self.sat_iters {
            limits = limits.with_max_iterations(n);
        }
        if let Some(n) = self.max_nodes {
            limits = limits.with_max_nodes(n);
        }
        Ok(limits)
    }

    fn config(&self) -> Result<PhaseConfig> {
        let refine = RefineConfig {
            rounds: self.rounds,
            alpha: self.alpha,
            rng_seed: self.seed,
            sampler: self.sampler,
            ..RefineConfig::default()
        };
        refine.validate()?;
        Ok(PhaseConfig {
            saturation: self.limits()?,
            refine,
            max_phases: self.max_phases,
            total_timeout: Some(secs(self.timeout, "--timeout")?),
            ..PhaseConfig::default()
        })
    }
}

fn secs(v: f64, flag: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| anyhow!("{flag} must be a positive number of seconds"))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen {
            nd_range,
            nv_range,
            per_cell,
            seed,
            out,
        } => cmd_gen(&nd_range, &nv_range, per_cell, seed, out.as_deref()),
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Verify { cert, rules } => cmd_verify(&cert, &rules),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let lo: usize = a.trim().parse().with_context(|| format!("bad range `{s}`"))?;
    let hi: usize = b.trim().parse().with_context(|| format!("bad range `{s}`"))?;
    if lo > hi {
        bail!("empty range `{s}`");
    }
    Ok((lo, hi))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(nd: &str, nv: &str, per_cell: usize, seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let tasks = build_dataset(parse_range(nd)?, parse_range(nv)?, per_cell, seed)?;
    write_or_print(out, &write_dataset(&tasks))?;
    eprintln!("{} tasks", tasks.len());
    Ok(ExitCode::SUCCESS)
}

fn load_rules(spec: &str) -> Result<(RuleSet, bool)> {
    if let Ok(r) = RuleSet::builtin(spec) {
        return Ok((r, true));
    }
    let text = fs::read_to_string(spec)
        .with_context(|| format!("`{spec}` is neither a builtin rule set nor a readable file"))?;
    Ok((RuleSet::parse(&text)?, false))
}

/// The builtin signature when every symbol fits it, else one inferred from
/// the rules and `texts`.
fn signature_for(rules: &RuleSet, builtin: bool, texts: &[&str]) -> Result<Signature> {
    let mut atoms = Vec::new();
    for t in texts {
        atoms.extend(sexpr_atoms(t)?);
    }
    let fits = |sig: &Signature| atoms.iter().all(|(n, a)| sig.arity(n) == Some(*a));
    if builtin {
        let candidate = match rules.name.as_str() {
            "ring-char2" => Some(Signature::ring_char2()),
            "poly-ac" => {
                let used = atoms
                    .iter()
                    .filter_map(|(n, _)| POLY_VARIABLES.iter().position(|v| v == n))
                    .max()
                    .map_or(1, |i| i + 1);
                Some(Signature::polynomial(used))
            }
            _ => None,
        };
        if let Some(sig) = candidate.filter(fits) {
            return Ok(sig);
        }
    }
    Ok(Signature::infer(&rules.symbols(), texts)?)
}

enum OracleSpec {
    Heuristic(Heuristic),
    Scripted(String),
    Replay(String),
    Http(HttpConfig),
}

impl OracleSpec {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s.split_once(':') {
            Some(("heuristic", name)) => OracleSpec::Heuristic(Heuristic::parse(name)?),
            Some(("scripted", file)) => OracleSpec::Scripted(read(file)?),
            Some(("replay", file)) => OracleSpec::Replay(read(file)?),
            None if s == "http" => OracleSpec::Http(HttpConfig::from_env()?),
            _ => bail!("unknown oracle `{s}`"),
        })
    }

    fn build(&self, sig: &Signature) -> Result<Box<dyn Oracle>> {
        Ok(match self {
            OracleSpec::Heuristic(h) => Box::new(HeuristicOracle::new(*h)),
            OracleSpec::Scripted(text) => Box::new(ScriptedOracle::parse(text)?),
            OracleSpec::Replay(text) => {
                let terms = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| parse_sexpr(l, sig))
                    .collect::<Result<Vec<Term>, _>>()?;
                if terms.is_empty() {
                    bail!("replay file lists no checkpoints");
                }
                Box::new(ReplayOracle::new(terms))
            }
            OracleSpec::Http(cfg) => Box::new(LlmOracle::new(HttpChatClient::new(cfg.clone())?)),
        })
    }
}

fn read(path: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {path}"))
}

fn parse_goal(spec: Option<&str>, rules: &RuleSet, sig: &Signature) -> Result<Option<Goal>> {
    let spec = spec.unwrap_or(if rules.name == "poly-ac" { "mult-form" } else { "none" });
    Ok(match spec.split_once(':') {
        Some(("term", t)) => Some(Goal::Term(parse_sexpr(t, sig)?)),
        None if spec == "mult-form" => Some(Goal::MultiplicationForm),
        None if spec == "none" => None,
        _ => bail!("unknown goal `{spec}`"),
    })
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (rules, builtin) = load_rules(&args.rules)?;
    let start_text = match (&args.term, &args.dataset, &args.id) {
        (Some(t), _, _) => t.clone(),
        (None, Some(path), Some(id)) => {
            let tasks = read_dataset(&read(&path.to_string_lossy())?)?;
            let task = tasks
                .iter()
                .find(|t| &t.id == id)
                .ok_or_else(|| anyhow!("no task `{id}` in {}", path.display()))?;
            task.start.to_string()
        }
        _ => bail!("give a start term or --dataset with --id"),
    };
    let mut texts = vec![start_text.as_str()];
    if let Some(t) = args.goal.as_deref().and_then(|g| g.strip_prefix("term:")) {
        texts.push(t);
    }
    let sig = Arc::new(signature_for(&rules, builtin, &texts)?);
    rules.check_signature(&sig)?;
    let start = parse_sexpr(&start_text, &sig)?;
    let goal = parse_goal(args.goal.as_deref(), &rules, &sig)?;
    let description = if matches!(goal, Some(Goal::MultiplicationForm)) {
        factorization_description(&start)
    } else {
        ring_simplification_description(&start)
    };
    let problem = Problem {
        sig: sig.clone(),
        rules,
        start,
        goal,
        description,
    };
    let result = match args.solver {
        Solver::Lguess => {
            let mut oracle = OracleSpec::parse(&args.oracle)?.build(&sig)?;
            run_lguess(&problem, oracle.as_mut(), &args.phase.config()?)
        }
        Solver::DirectEs => {
            let mut limits = args.phase.limits()?;
            limits.time_budget =
                Some(secs(args.phase.timeout, "--timeout")?.min(limits.time_budget.unwrap_or(Duration::MAX)));
            run_direct_es(&problem, &limits)
        }
        Solver::DirectLlm => {
            let mut client = HttpChatClient::new(HttpConfig::from_env()?)?;
            run_direct_llm(&problem, &mut client)
        }
    };
    let valid = report(&problem, &result, args.solver);
    if let Some(p) = &args.cert_out {
        fs::write(p, result.certificate.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.log_out {
        let mut text = String::new();
        for q in &result.query_log {
            text.push_str(&serde_json::to_string(q)?);
            text.push('\n');
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if result.solved && valid {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Prints a run summary; returns whether the certificate verifies.
fn report(problem: &Problem, r: &RunResult, solver: Solver) -> bool {
    let verdict = verify_chain(&r.certificate, &problem.rules);
    let valid = verdict.is_ok() && r.certificate.final_term() == &r.final_term;
    println!("solver: {solver}");
    if let Some(goal) = &problem.goal {
        println!("goal: {}", goal.describe());
    }
    println!("stop: {}", r.stop_reason);
    println!("solved: {}", r.solved);
    println!(
        "phases: {}  iterations: {}  oracle queries: {}  time: {:.3}s",
        r.phase_count,
        r.saturation_iterations,
        r.oracle_queries,
        r.wall_time.as_secs_f64()
    );
    println!("checkpoints:");
    for (i, c) in r.checkpoints.iter().enumerate() {
        println!("  {i}: {c}");
    }
    println!("final: {}", r.final_term);
    match verdict {
        Verdict::Ok { .. } if valid => println!("certificate: {} steps, verifies", r.certificate.len()),
        Verdict::Ok { .. } => println!("certificate: {} steps, ends at a different term", r.certificate.len()),
        Verdict::Failed { step, reason } => println!("certificate: step {} fails: {reason}", step + 1),
    }
    if let Some(d) = &r.detail {
        println!("detail: {d}");
    }
    valid
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let tasks = read_dataset(&read(&args.dataset.to_string_lossy())?)?;
    let mut direct = args.phase.limits()?;
    if let Some(n) = args.direct_iters {
        direct = direct.with_max_iterations(n);
    }
    let cfg = BenchConfig {
        solver: args.solver,
        phase: args.phase.config()?,
        direct_es: direct,
        parallelism: args
            .parallelism
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        with_timings: args.with_timings,
    };
    let oracle_spec = match args.solver {
        Solver::Lguess => Some(OracleSpec::parse(&args.oracle)?),
        _ => None,
    };
    let http = match args.solver {
        Solver::DirectLlm => Some(HttpConfig::from_env()?),
        _ => None,
    };
    let oracles = |t: &Task| -> Result<Box<dyn Oracle>, guidesat::oracle::OracleError> {
        let spec = oracle_spec.as_ref().expect("oracle configured for lguess");
        spec.build(&t.signature())
            .map_err(|e| guidesat::oracle::OracleError::Config(format!("{e:#}")))
    };
    let clients = |_: &Task| -> Result<Box<dyn ChatClient>, guidesat::oracle::OracleError> {
        let cfg = http.clone().expect("http configured for direct-llm");
        Ok(Box::new(HttpChatClient::new(cfg)?))
    };
    let records = bench(
        &tasks,
        &cfg,
        oracle_spec.is_some().then_some(&oracles as &OracleFactory),
        http.is_some().then_some(&clients as &ClientFactory),
    )?;
    write_or_print(args.out.as_deref(), &records_jsonl(&records))?;
    if let Some(p) = &args.grid {
        let span = |f: fn(&Task) -> usize| {
            let lo = tasks.iter().map(f).min().unwrap_or(0);
            let hi = tasks.iter().map(f).max().unwrap_or(0);
            (lo, hi)
        };
        let csv = grid_csv(&records, span(|t| t.spec.n_d), span(|t| t.spec.n_v));
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    let solved = records.iter().filter(|r| r.solved).count();
    let invalid = records.iter().filter(|r| !r.certificate_valid).count();
    eprintln!("solved {solved}/{} ({invalid} invalid certificates)", records.len());
    Ok(if invalid == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_verify(cert: &Path, rules: &str) -> Result<ExitCode> {
    let (rules, builtin) = load_rules(rules)?;
    let text = read(&cert.to_string_lossy())?;
    let terms: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            l.strip_prefix("initial:")
                .or_else(|| l.split_once("->").map(|(_, t)| t))
        })
        .collect();
    let sig = signature_for(&rules, builtin, &terms)?;
    let cert = Certificate::parse(&text, &sig)?;
    match verify_chain(&cert, &rules) {
        Verdict::Ok { final_term } => {
            println!("valid: {} steps, {} -> {final_term}", cert.len(), cert.initial);
            Ok(ExitCode::SUCCESS)
        }
        Verdict::Failed { step, reason } => {
            println!("invalid: step {} fails: {reason}", step + 1);
            Ok(ExitCode::FAILURE)
        }
    }
}
