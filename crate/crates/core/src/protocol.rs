//! The generation loop: prompt, parse the reply, judge the hypothesis, and
//! stop after three bad ones.

use std::io::{BufRead, Write};
use std::time::Duration;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{
    Evaluator, ExecError, ExecLimits, Hypothesis, Origin, PredictionSet, ProgramSource,
};
use crate::metrics::{check_consistency, classify, novelty_coverage, novelty_threshold, Verdict};
use crate::report::{fraction, parse_fraction};
use crate::samplespace::SampleSpace;
use crate::values::{ObservationSet, Value};

pub const TRANSCRIPT_SCHEMA: &str = "gear-transcript/1";

pub const INIT_TEMPLATE: &str = r#"You must return one tuple of two raw strings (no Markdown fences, no back-ticks).

  element 0 = concise natural-language hypothesis
  element 1 = FULL Python source of exactly one top-level "def"

Code rules (apply to the source string in element 1)
- built-ins only (do not import anything)
- spaces-only indentation (4 spaces), "\n" newlines (no "\r")
- every control-flow header (if/for/while/else/elif/with/try) must break onto
  the next line; never place another statement after a colon
- at most 80 characters per line
- the file must compile with ast.parse() and execute with exec() unchanged
- do not add prints, tests, or extra defs; a return must appear in the function
- logic must generalize beyond the given pairs; no hard-coding

Task
- Below are (input, output) pairs O_n .
- Infer one rule consistent with all pairs and write a function that follows it
  on unseen inputs.

Pairs: {{OBS_PAIRS}}

Return only:

(
 "My hypothesis in one sentence ...",
 "def f(x):\n    # your code\n    return y"
)

Example format (strictly follow):

(
 "Return 6 if 6 appears, else 0","
def f(x):\n
    if 6 in x:\n
        return [6]\n
    return [0]"
)

Note: This template is dataset-agnostic; only O_n is instantiated per task.
"#;

pub const ITER_TEMPLATE: &str = r#"Return one tuple of two raw strings (no Markdown fences, no back-ticks).

  element 0 = concise description of a new hypothesis
  element 1 = FULL Python source of exactly one top-level "def"

Code rules (identical to P_init)
- built-ins only; spaces-only indentation (4); "\n" newlines
- control-flow headers must break onto the next line; no statements after colon
- <= 80 chars per line; must compile with ast.parse() and run with exec()
- no prints/tests/extra defs; the function must contain a return
- generalize beyond the pairs; no hard-coding

You have proposed the following hypotheses so far:
F_{t-1} = {f_1, ..., f_{t-1}} (summaries below)
{{PREVIOUS_HYPOTHESES}}

Re-examine the (input, output) pairs O_n :
{{OBS_PAIRS}}

Your goal
- Invent a brand-new hypothesis f_t that
  (i) is consistent with all pairs in O_n, and
  (ii) is distinct in underlying principle from every f in F_{t-1}.

Return exactly:

(
 "Concise description of the new hypothesis",
 "def f(x):\n    # your code\n    return y"
)

Example format (strictly follow):

(
 "Return 6 if 6 appears, else 0","
def f(x):\n
    if 6 in x:\n
        return [6]\n
    return [0]"
)

Note: This template is shared across datasets; only O_n and F_{t-1} vary.
"#;

/// `(in, out), (in, out), ...` in canonical text.
pub fn render_obs_pairs(obs: &ObservationSet) -> String {
    obs.pairs
        .iter()
        .map(|p| format!("({}, {})", p.input, p.output))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_init_prompt(obs: &ObservationSet) -> String {
    INIT_TEMPLATE.replace("{{OBS_PAIRS}}", &render_obs_pairs(obs))
}

pub fn render_iter_prompt(obs: &ObservationSet, priors: &[&str]) -> String {
    let listing = priors
        .iter()
        .enumerate()
        .map(|(i, s)| format!("- f_{}: {}", i + 1, s.replace(['\n', '\r'], " ")))
        .collect::<Vec<_>>()
        .join("\n");
    ITER_TEMPLATE
        .replace("{{PREVIOUS_HYPOTHESES}}", &listing)
        .replace("{{OBS_PAIRS}}", &render_obs_pairs(obs))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub summary: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed reply at byte {pos}: {message}")]
pub struct FormatFailure {
    pub pos: usize,
    pub message: String,
}

struct TupleParser<'a> {
    text: &'a str,
    pos: usize,
}

impl TupleParser<'_> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T, FormatFailure> {
        Err(FormatFailure {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn expect(&mut self, c: char) -> Result<(), FormatFailure> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.fail(format!("expected '{c}'"))
        }
    }

    fn string(&mut self) -> Result<String, FormatFailure> {
        self.skip_ws();
        let rest = self.rest();
        let quote = match rest.chars().next() {
            Some(q @ ('"' | '\'')) => q,
            _ => return self.fail("expected a quoted string"),
        };
        let triple: String = std::iter::repeat_n(quote, 3).collect();
        let delim = if rest.starts_with(&triple) {
            triple
        } else {
            quote.to_string()
        };
        self.pos += delim.len();
        let mut out = String::new();
        loop {
            let rest = self.rest();
            if rest.starts_with(&delim) {
                self.pos += delim.len();
                return Ok(out);
            }
            let mut chars = rest.chars();
            match chars.next() {
                None => return self.fail("unterminated string"),
                Some('\\') => {
                    let esc = chars.next();
                    let decoded = match esc {
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        Some('0') => '\0',
                        Some(c @ ('\\' | '"' | '\'')) => c,
                        Some('\n') => {
                            self.pos += 2;
                            continue;
                        }
                        Some(other) => {
                            out.push('\\');
                            other
                        }
                        None => return self.fail("unterminated string"),
                    };
                    out.push(decoded);
                    self.pos += 1 + esc.map_or(0, char::len_utf8);
                }
                Some(c) => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }
}

/// Parses a reply of the form `("summary", "source")`. Only surrounding
/// whitespace is tolerated. Strings use Python-style quoting: single, double
/// or triple quotes, with the usual backslash escapes. A trailing comma
/// inside the parentheses is accepted.
pub fn parse_proposal(reply: &str) -> Result<Proposal, FormatFailure> {
    let mut p = TupleParser {
        text: reply,
        pos: 0,
    };
    p.skip_ws();
    if p.rest().is_empty() {
        return p.fail("empty reply");
    }
    if p.rest().starts_with("```") {
        return p.fail("reply is wrapped in a code fence");
    }
    p.expect('(')?;
    let summary = p.string()?;
    p.expect(',')?;
    let source = p.string()?;
    p.skip_ws();
    if p.rest().starts_with(',') {
        p.pos += 1;
    }
    p.expect(')')?;
    p.skip_ws();
    if !p.rest().is_empty() {
        return p.fail("unexpected text after the tuple");
    }
    if summary.trim().is_empty() {
        return Err(FormatFailure {
            pos: 0,
            message: "empty hypothesis summary".into(),
        });
    }
    if source.trim().is_empty() {
        return Err(FormatFailure {
            pos: 0,
            message: "empty program source".into(),
        });
    }
    Ok(Proposal { summary, source })
}

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("proposer configuration: {0}")]
    Config(String),
    #[error("proposer transport failure: {0}")]
    Transport(String),
}

/// One proposer answer, with the raw exchange when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub exchange: Option<serde_json::Value>,
}

pub trait Proposer {
    fn id(&self) -> String;

    /// `Ok(None)` means the proposer has nothing more to say.
    fn propose(&mut self, prompt: &str) -> Result<Option<Reply>, ProposerError>;
}

/// Replays a fixed list of replies in order.
#[derive(Debug, Clone)]
pub struct ScriptedProposer {
    replies: Vec<String>,
    next: usize,
}

impl ScriptedProposer {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedProposer {
            replies: replies.into_iter().map(Into::into).collect(),
            next: 0,
        }
    }

    /// Skips replies already consumed by an earlier, interrupted run.
    pub fn skip(mut self, n: usize) -> Self {
        self.next = (self.next + n).min(self.replies.len());
        self
    }
}

impl Proposer for ScriptedProposer {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn propose(&mut self, _prompt: &str) -> Result<Option<Reply>, ProposerError> {
        let reply = self.replies.get(self.next).cloned();
        self.next += 1;
        Ok(reply.map(|text| Reply {
            text,
            exchange: None,
        }))
    }
}

/// Settings for a chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            token_env: "GEAR_API_TOKEN".into(),
            temperature: None,
            max_tokens: None,
            timeout_secs: 300,
        }
    }
}

/// Proposer backed by an OpenAI-style `POST {base_url}/chat/completions`.
pub struct ChatProposer {
    config: ChatConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl ChatProposer {
    /// Reads the token from the configured environment variable. A missing
    /// variable means unauthenticated requests.
    pub fn new(config: ChatConfig) -> Self {
        let token = std::env::var(&config.token_env)
            .ok()
            .filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        ChatProposer {
            config,
            token,
            agent,
        }
    }

    fn request_body(&self, prompt: &str) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = t.into();
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = m.into();
        }
        body
    }
}

impl Proposer for ChatProposer {
    fn id(&self) -> String {
        format!("chat:{}", self.config.model)
    }

    fn propose(&mut self, prompt: &str) -> Result<Option<Reply>, ProposerError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = self.request_body(prompt);
        let mut request = self.agent.post(&url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| ProposerError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let payload: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProposerError::Transport(format!("HTTP {status}: {e}")))?;
        if status >= 400 {
            return Err(ProposerError::Transport(format!(
                "HTTP {status}: {payload}"
            )));
        }
        let text = payload["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProposerError::Transport(format!("no message content in {payload}")))?
            .to_string();
        Ok(Some(Reply {
            text,
            exchange: Some(serde_json::json!({"request": body, "response": payload})),
        }))
    }
}

/// How proposal sources become programs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProgramKind {
    Dsl,
    External { worker: String },
}

impl ProgramKind {
    pub fn program(&self, source: String) -> ProgramSource {
        match self {
            ProgramKind::Dsl => ProgramSource::Dsl { source },
            ProgramKind::External { worker } => ProgramSource::External {
                worker: worker.clone(),
                source,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopConfig {
    pub max_bad: usize,
    pub threshold: BigRational,
    /// Safety cap on attempts; `None` runs until the stopping rule fires.
    pub max_attempts: Option<usize>,
    pub program_kind: ProgramKind,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_bad: 3,
            threshold: novelty_threshold(),
            max_attempts: None,
            program_kind: ProgramKind::Dsl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum StopReason {
    ThreeBad,
    ProposerExhausted,
    AttemptLimit,
    Aborted { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Init,
    Iter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub index: usize,
    pub timestamp: String,
    pub prompt_kind: PromptKind,
    pub prompt: String,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<serde_json::Value>,
    pub hypothesis: Option<Hypothesis>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PredictionSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub schema: String,
    pub problem_id: String,
    pub observations: ObservationSet,
    pub space_id: String,
    pub proposer: String,
    pub threshold: String,
    pub max_bad: usize,
    pub program_kind: ProgramKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum Record {
    Header(TranscriptHeader),
    Attempt(Box<Attempt>),
    Stop {
        timestamp: String,
        stop: StopReason,
        bad_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub attempts: Vec<Attempt>,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Transcript {
    pub fn bad_count(&self) -> usize {
        self.attempts.iter().filter(|a| a.verdict.is_bad()).count()
    }

    pub fn good(&self) -> impl Iterator<Item = &Attempt> {
        self.attempts.iter().filter(|a| !a.verdict.is_bad())
    }

    /// Parsable and consistent attempts, novel or not.
    pub fn consistent(&self) -> impl Iterator<Item = &Attempt> {
        self.attempts.iter().filter(|a| a.verdict.is_consistent())
    }

    pub fn consistent_predictions(&self) -> Vec<&PredictionSet> {
        self.consistent()
            .filter_map(|a| a.predictions.as_ref())
            .collect()
    }

    pub fn is_finished(&self) -> bool {
        matches!(
            self.stop,
            Some(StopReason::ThreeBad | StopReason::ProposerExhausted | StopReason::AttemptLimit)
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write_record(&mut out, &Record::Header(self.header.clone()))?;
        for a in &self.attempts {
            write_record(&mut out, &Record::Attempt(Box::new(a.clone())))?;
        }
        if let Some(stop) = &self.stop {
            write_record(&mut out, &stop_record(stop, self.bad_count()))?;
        }
        Ok(())
    }

    /// Reads a transcript file. Later stop records supersede earlier ones,
    /// so a resumed run appends to the file it continues.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Transcript, TranscriptError> {
        let mut header = None;
        let mut attempts = Vec::new();
        let mut stop = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| TranscriptError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            match record {
                Record::Header(h) => {
                    if header.is_some() {
                        return Err(TranscriptError::Format {
                            line: i + 1,
                            message: "second header".into(),
                        });
                    }
                    if h.schema != TRANSCRIPT_SCHEMA {
                        return Err(TranscriptError::Format {
                            line: i + 1,
                            message: format!("unsupported schema {}", h.schema),
                        });
                    }
                    header = Some(h);
                }
                Record::Attempt(a) => {
                    if header.is_none() {
                        return Err(TranscriptError::Format {
                            line: i + 1,
                            message: "attempt before header".into(),
                        });
                    }
                    if a.index != attempts.len() {
                        return Err(TranscriptError::Format {
                            line: i + 1,
                            message: format!("attempt {} out of order", a.index),
                        });
                    }
                    stop = None;
                    attempts.push(*a);
                }
                Record::Stop { stop: s, .. } => stop = Some(s),
            }
        }
        let header = header.ok_or(TranscriptError::Format {
            line: 0,
            message: "missing header".into(),
        })?;
        Ok(Transcript {
            header,
            attempts,
            stop,
        })
    }
}

fn write_record<W: Write + ?Sized>(out: &mut W, record: &Record) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn stop_record(stop: &StopReason, bad_count: usize) -> Record {
    Record::Stop {
        timestamp: now(),
        stop: stop.clone(),
        bad_count,
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Everything a loop needs besides the proposer.
pub struct LoopContext<'a> {
    pub evaluator: &'a Evaluator,
    pub space: &'a SampleSpace,
    pub config: LoopConfig,
}

impl LoopContext<'_> {
    pub fn limits(&self) -> &ExecLimits {
        self.evaluator.limits()
    }

    /// Judges one raw reply against the observations and the prediction
    /// sets of earlier good attempts.
    pub fn judge(
        &self,
        obs: &ObservationSet,
        index: usize,
        proposer: &str,
        reply: &str,
        priors: &[&PredictionSet],
    ) -> Result<(Option<Hypothesis>, Verdict, Option<PredictionSet>), ExecError> {
        let proposal = match parse_proposal(reply) {
            Ok(p) => p,
            Err(e) => return Ok((None, self.bad_format(&e.to_string()), None)),
        };
        let hypothesis = Hypothesis {
            id: format!("{}#{index}", obs.problem_id),
            summary: proposal.summary,
            program: self.config.program_kind.program(proposal.source),
            origin: Origin {
                proposer: proposer.to_string(),
                iteration: index,
            },
        };
        let program = match self.evaluator.load(&hypothesis.program) {
            Ok(p) => p,
            Err(e) if e.is_format_failure() => {
                let verdict = self.bad_format(&e.to_string());
                return Ok((Some(hypothesis), verdict, None));
            }
            Err(e) => return Err(e),
        };
        let inputs: Vec<Value> = obs.pairs.iter().map(|p| p.input.clone()).collect();
        let outcomes = self.evaluator.eval_all(&program, &inputs)?;
        let violations = check_consistency(&outcomes, obs);
        if !violations.is_empty() {
            let verdict = classify(
                None,
                &violations,
                &num_traits::Zero::zero(),
                &self.config.threshold,
            );
            return Ok((Some(hypothesis), verdict, None));
        }
        let predictions = self
            .evaluator
            .predict(&hypothesis.id, &program, self.space)?;
        let coverage =
            novelty_coverage(&predictions, priors).map_err(|e| ExecError::Load(e.to_string()))?;
        let verdict = classify(None, &[], &coverage, &self.config.threshold);
        Ok((Some(hypothesis), verdict, Some(predictions)))
    }

    fn bad_format(&self, message: &str) -> Verdict {
        classify(
            Some(message),
            &[],
            &num_traits::Zero::zero(),
            &self.config.threshold,
        )
    }

    pub fn new_transcript(&self, obs: &ObservationSet, proposer: &str) -> Transcript {
        Transcript {
            header: TranscriptHeader {
                schema: TRANSCRIPT_SCHEMA.into(),
                problem_id: obs.problem_id.clone(),
                observations: obs.clone(),
                space_id: self.space.id(),
                proposer: proposer.to_string(),
                threshold: fraction(&self.config.threshold),
                max_bad: self.config.max_bad,
                program_kind: self.config.program_kind.clone(),
            },
            attempts: Vec::new(),
            stop: None,
        }
    }

    /// Runs a fresh loop, streaming records to `sink`.
    pub fn run(
        &self,
        obs: &ObservationSet,
        proposer: &mut dyn Proposer,
        sink: &mut dyn Write,
    ) -> std::io::Result<Transcript> {
        let mut transcript = self.new_transcript(obs, &proposer.id());
        write_record(sink, &Record::Header(transcript.header.clone()))?;
        self.resume(&mut transcript, proposer, sink)?;
        Ok(transcript)
    }

    /// Continues an unfinished transcript, appending new records to `sink`.
    /// A finished transcript is returned unchanged.
    pub fn resume(
        &self,
        transcript: &mut Transcript,
        proposer: &mut dyn Proposer,
        sink: &mut dyn Write,
    ) -> std::io::Result<()> {
        if transcript.is_finished() {
            return Ok(());
        }
        transcript.stop = None;
        let obs = transcript.header.observations.clone();
        let proposer_id = proposer.id();
        let stop = loop {
            let bad = transcript.bad_count();
            if bad >= self.config.max_bad {
                break StopReason::ThreeBad;
            }
            if self
                .config
                .max_attempts
                .is_some_and(|cap| transcript.attempts.len() >= cap)
            {
                break StopReason::AttemptLimit;
            }
            let goods: Vec<&Attempt> = transcript.good().collect();
            let (prompt_kind, prompt) = if goods.is_empty() {
                (PromptKind::Init, render_init_prompt(&obs))
            } else {
                let summaries: Vec<&str> = goods
                    .iter()
                    .filter_map(|a| a.hypothesis.as_ref().map(|h| h.summary.as_str()))
                    .collect();
                (PromptKind::Iter, render_iter_prompt(&obs, &summaries))
            };
            let reply = match proposer.propose(&prompt) {
                Ok(Some(r)) => r,
                Ok(None) => break StopReason::ProposerExhausted,
                Err(e) => {
                    break StopReason::Aborted {
                        message: e.to_string(),
                    }
                }
            };
            let priors: Vec<&PredictionSet> = goods
                .iter()
                .filter_map(|a| a.predictions.as_ref())
                .collect();
            let index = transcript.attempts.len();
            let judged = self.judge(&obs, index, &proposer_id, &reply.text, &priors);
            let (hypothesis, verdict, predictions) = match judged {
                Ok(j) => j,
                Err(e) => {
                    break StopReason::Aborted {
                        message: e.to_string(),
                    }
                }
            };
            log::debug!(
                "{} attempt {index}: {}",
                obs.problem_id,
                verdict.kind().name()
            );
            let attempt = Attempt {
                index,
                timestamp: now(),
                prompt_kind,
                prompt,
                reply: reply.text,
                exchange: reply.exchange,
                hypothesis,
                verdict,
                predictions,
            };
            write_record(sink, &Record::Attempt(Box::new(attempt.clone())))?;
            transcript.attempts.push(attempt);
        };
        write_record(sink, &stop_record(&stop, transcript.bad_count()))?;
        transcript.stop = Some(stop);
        Ok(())
    }

    /// Recomputes every verdict from the recorded raw replies.
    pub fn replay(&self, transcript: &Transcript) -> Result<Vec<Verdict>, ExecError> {
        let obs = &transcript.header.observations;
        let mut good_predictions: Vec<PredictionSet> = Vec::new();
        let mut verdicts = Vec::new();
        for a in &transcript.attempts {
            let priors: Vec<&PredictionSet> = good_predictions.iter().collect();
            let proposer = a
                .hypothesis
                .as_ref()
                .map_or(transcript.header.proposer.as_str(), |h| {
                    h.origin.proposer.as_str()
                });
            let (_, verdict, predictions) =
                self.judge(obs, a.index, proposer, &a.reply, &priors)?;
            if !verdict.is_bad() {
                good_predictions.extend(predictions);
            }
            verdicts.push(verdict);
        }
        Ok(verdicts)
    }
}

/// Parses a recorded threshold such as `4/5`.
pub fn parse_threshold(text: &str) -> Option<BigRational> {
    parse_fraction(text)
}
