//! Preference oracles: given the current result and a candidate, decide
//! which makes more progress.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bigram::contributions;
use crate::lang::Term;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoalContext {
    pub task_description: String,
    /// The term the whole run started from.
    pub initial_term: Term,
    /// The term the current phase started from.
    pub phase_input: Term,
}

impl GoalContext {
    pub fn new(task_description: impl Into<String>, initial_term: Term) -> Result<Self, OracleError> {
        let task_description = task_description.into();
        if task_description.trim().is_empty() {
            return Err(OracleError::Config("task description is empty".into()));
        }
        Ok(GoalContext {
            task_description,
            phase_input: initial_term.clone(),
            initial_term,
        })
    }

    pub fn for_phase(&self, phase_input: &Term) -> GoalContext {
        GoalContext {
            phase_input: phase_input.clone(),
            ..self.clone()
        }
    }
}

pub fn ring_simplification_description(t: &Term) -> String {
    format!("simplifying the s-expression {t} on a commutative ring with characteristic 2")
}

pub fn factorization_description(t: &Term) -> String {
    format!("factorizing the polynomial given by the s-expression {t} into a product of sums of variables")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Choice {
    Current,
    Candidate,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::Current => "current",
            Choice::Candidate => "candidate",
        })
    }
}

impl std::str::FromStr for Choice {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "current" | "a" | "(a)" => Ok(Choice::Current),
            "candidate" | "b" | "(b)" => Ok(Choice::Candidate),
            other => Err(OracleError::Config(format!("unknown choice `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preference {
    pub choice: Choice,
    pub raw_response: String,
    pub attempts: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("no answer marker after {attempts} attempts; last response: {last_response:?}")]
    Unparsable { attempts: usize, last_response: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response body: {0}")]
    Decode(String),
    #[error("script exhausted after {0} answers")]
    ScriptExhausted(usize),
    #[error("oracle configuration: {0}")]
    Config(String),
}

pub trait Oracle: Send {
    fn name(&self) -> String;

    /// Item (a) is always `current` and (b) is `candidate`.
    fn compare(&mut self, ctx: &GoalContext, current: &Term, candidate: &Term) -> Result<Preference, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn compare(&mut self, ctx: &GoalContext, current: &Term, candidate: &Term) -> Result<Preference, OracleError> {
        (**self).compare(ctx, current, candidate)
    }
}

pub fn render_prompt(ctx: &GoalContext, current: &Term, candidate: &Term) -> String {
    format!(
        "I am {}.\n\
         Please compare the following two intermediate results, and decide which makes more progress toward simplification.\n\
         (a) {}\n\
         (b) {}\n\
         Conclude your output with the answer is (a)/(b).",
        ctx.task_description, current, candidate
    )
}

pub const CLARIFICATION: &str = "Please end your reply with exactly one of: the answer is (a) / the answer is (b).";

/// The last `the answer is (a)` / `the answer is (b)` marker, ignoring case,
/// emphasis asterisks and a colon before the letter.
pub fn parse_answer(response: &str) -> Option<Choice> {
    let lower = response.to_ascii_lowercase();
    let marker = "the answer is";
    let mut found = None;
    let mut from = 0;
    while let Some(i) = lower[from..].find(marker) {
        let start = from + i + marker.len();
        let rest = lower[start..].trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == ':');
        if rest.starts_with("(a)") {
            found = Some(Choice::Current);
        } else if rest.starts_with("(b)") {
            found = Some(Choice::Candidate);
        }
        from = start;
    }
    found
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// A chat-completion transport.
pub trait ChatClient: Send {
    fn chat(&mut self, messages: &[Message]) -> Result<String, OracleError>;
}

impl<F> ChatClient for F
where
    F: FnMut(&[Message]) -> Result<String, OracleError> + Send,
{
    fn chat(&mut self, messages: &[Message]) -> Result<String, OracleError> {
        self(messages)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub temperature: f64,
}

impl HttpConfig {
    /// Reads `ORACLE_ENDPOINT`, `ORACLE_MODEL`, `ORACLE_API_KEY` and the
    /// optional `ORACLE_TIMEOUT_SECS` (default 60).
    pub fn from_env() -> Result<Self, OracleError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint =
            var("ORACLE_ENDPOINT").ok_or_else(|| OracleError::Config("ORACLE_ENDPOINT is not set".into()))?;
        let model = var("ORACLE_MODEL").ok_or_else(|| OracleError::Config("ORACLE_MODEL is not set".into()))?;
        let timeout = match var("ORACLE_TIMEOUT_SECS") {
            Some(s) => s
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .map(Duration::from_secs_f64)
                .ok_or_else(|| OracleError::Config(format!("bad ORACLE_TIMEOUT_SECS `{s}`")))?,
            None => Duration::from_secs(60),
        };
        Ok(HttpConfig {
            endpoint,
            model,
            api_key: var("ORACLE_API_KEY"),
            timeout,
            temperature: 0.0,
        })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: Option<Message>,
    text: Option<String>,
}

/// Generic chat-completion client over HTTP.
pub struct HttpChatClient {
    config: HttpConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: HttpConfig) -> Result<Self, OracleError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| OracleError::Config(e.to_string()))?;
        Ok(HttpChatClient { config, http })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&mut self, messages: &[Message]) -> Result<String, OracleError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
        };
        let mut req = self.http.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| OracleError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| OracleError::Network(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(OracleError::Auth(status)),
            _ => return Err(OracleError::Http { status, body: text }),
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| OracleError::Decode(e.to_string()))?;
        let first = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| OracleError::Decode("no choices in response".into()))?;
        first
            .message
            .map(|m| m.content)
            .or(first.text)
            .ok_or_else(|| OracleError::Decode("first choice has no text".into()))
    }
}

/// Asks a chat model, retrying with a clarification when the reply has no
/// answer marker.
pub struct LlmOracle<C> {
    client: C,
    retries: usize,
}

impl<C: ChatClient> LlmOracle<C> {
    pub fn new(client: C) -> Self {
        LlmOracle { client, retries: 2 }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }
}

impl<C: ChatClient> Oracle for LlmOracle<C> {
    fn name(&self) -> String {
        "llm".into()
    }

    fn compare(&mut self, ctx: &GoalContext, current: &Term, candidate: &Term) -> Result<Preference, OracleError> {
        let mut messages = vec![Message::user(render_prompt(ctx, current, candidate))];
        let mut attempts = 0;
        loop {
            attempts += 1;
            let reply = self.client.chat(&messages)?;
            if let Some(choice) = parse_answer(&reply) {
                return Ok(Preference {
                    choice,
                    raw_response: reply,
                    attempts,
                });
            }
            if attempts > self.retries {
                return Err(OracleError::Unparsable {
                    attempts,
                    last_response: reply,
                });
            }
            messages.push(Message::assistant(reply));
            messages.push(Message::user(CLARIFICATION));
        }
    }
}

/// Replays a fixed list of answers in order.
#[derive(Clone, Debug)]
pub struct ScriptedOracle {
    script: VecDeque<Choice>,
    used: usize,
}

impl ScriptedOracle {
    pub fn new(script: impl IntoIterator<Item = Choice>) -> Self {
        ScriptedOracle {
            script: script.into_iter().collect(),
            used: 0,
        }
    }

    /// Whitespace- or comma-separated `a`/`b`/`current`/`candidate` tokens;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let mut out = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
            {
                out.push(tok.parse()?);
            }
        }
        Ok(ScriptedOracle::new(out))
    }

    pub fn remaining(&self) -> usize {
        self.script.len()
    }
}

impl Oracle for ScriptedOracle {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn compare(&mut self, _: &GoalContext, _: &Term, _: &Term) -> Result<Preference, OracleError> {
        let choice = self.script.pop_front().ok_or(OracleError::ScriptExhausted(self.used))?;
        self.used += 1;
        Ok(Preference {
            choice,
            raw_response: format!("scripted {choice}"),
            attempts: 1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heuristic {
    /// Fewer nodes is better.
    SmallerSize,
    /// Fewer `+` nodes with a `*` below them, then fewer nodes.
    FactorProgress,
}

impl Heuristic {
    pub fn parse(name: &str) -> Result<Self, OracleError> {
        match name {
            "smaller-size" => Ok(Heuristic::SmallerSize),
            "factor-progress" => Ok(Heuristic::FactorProgress),
            other => Err(OracleError::Config(format!("unknown heuristic `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::SmallerSize => "smaller-size",
            Heuristic::FactorProgress => "factor-progress",
        }
    }

    pub fn score(&self, t: &Term) -> (usize, usize) {
        match self {
            Heuristic::SmallerSize => (0, t.size()),
            Heuristic::FactorProgress => (sums_over_products(t), t.size()),
        }
    }
}

/// Number of `+` nodes that have a `*` node somewhere below them.
pub fn sums_over_products(t: &Term) -> usize {
    fn go(t: &Term, count: &mut usize) -> bool {
        let mut below = false;
        for c in t.children() {
            below |= go(c, count);
        }
        if t.op().as_str() == "+" && below {
            *count += 1;
        }
        below || t.op().as_str() == "*"
    }
    let mut count = 0;
    go(t, &mut count);
    count
}

#[derive(Clone, Debug)]
pub struct HeuristicOracle {
    kind: Heuristic,
}

impl HeuristicOracle {
    pub fn new(kind: Heuristic) -> Self {
        HeuristicOracle { kind }
    }
}

impl Oracle for HeuristicOracle {
    fn name(&self) -> String {
        format!("heuristic:{}", self.kind.name())
    }

    fn compare(&mut self, _: &GoalContext, current: &Term, candidate: &Term) -> Result<Preference, OracleError> {
        let (a, b) = (self.kind.score(current), self.kind.score(candidate));
        let choice = if b < a { Choice::Candidate } else { Choice::Current };
        Ok(Preference {
            choice,
            raw_response: format!("score (a) {a:?} (b) {b:?}"),
            attempts: 1,
        })
    }
}

/// Steers each phase toward a known checkpoint sequence: within the phase
/// whose input is `checkpoints[i]`, prefers terms closer to
/// `checkpoints[i + 1]`: more shared (context, operator) occurrences first,
/// then fewer unshared ones, then smaller size.
#[derive(Clone, Debug)]
pub struct ReplayOracle {
    checkpoints: Vec<Term>,
}

impl ReplayOracle {
    pub fn new(checkpoints: Vec<Term>) -> Self {
        assert!(!checkpoints.is_empty(), "replay needs at least one checkpoint");
        ReplayOracle { checkpoints }
    }

    fn target(&self, phase_input: &Term) -> &Term {
        let i = self.checkpoints.iter().position(|c| c == phase_input);
        match i {
            Some(i) if i + 1 < self.checkpoints.len() => &self.checkpoints[i + 1],
            _ => self.checkpoints.last().unwrap(),
        }
    }

    /// (shared, differing) counts between the (context, operator)
    /// multisets of two terms.
    pub fn overlap(a: &Term, b: &Term) -> (usize, usize) {
        let mut counts: HashMap<_, (usize, usize)> = HashMap::new();
        for k in contributions(a) {
            counts.entry(k).or_insert((0, 0)).0 += 1;
        }
        for k in contributions(b) {
            counts.entry(k).or_insert((0, 0)).1 += 1;
        }
        counts
            .values()
            .fold((0, 0), |(s, d), &(x, y)| (s + x.min(y), d + x.abs_diff(y)))
    }
}

impl Oracle for ReplayOracle {
    fn name(&self) -> String {
        "replay".into()
    }

    fn compare(&mut self, ctx: &GoalContext, current: &Term, candidate: &Term) -> Result<Preference, OracleError> {
        let target = self.target(&ctx.phase_input);
        let score = |t: &Term| {
            let (shared, differing) = Self::overlap(t, target);
            (t != target, std::cmp::Reverse(shared), differing, t.size())
        };
        let choice = if score(candidate) < score(current) {
            Choice::Candidate
        } else {
            Choice::Current
        };
        Ok(Preference {
            choice,
            raw_response: format!("replay toward {target}"),
            attempts: 1,
        })
    }
}
