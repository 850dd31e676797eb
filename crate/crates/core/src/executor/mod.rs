//! Hypotheses as executable programs, and their prediction sets over a
//! sample space.

pub mod dsl;
pub mod interp;
pub mod worker;

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dsl::{parse_dsl, DslError, DslErrorKind, Program};
pub use interp::eval_program;
pub use worker::{LoadFailure, TransportError, WorkerConnection, WorkerPool};

use crate::samplespace::SampleSpace;
use crate::values::{parse_value, ObservationSet, Value};

/// Per-call budgets. `max_steps` is the reproducible time budget; `time` is
/// a wall-clock backstop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecLimits {
    pub time: Duration,
    pub max_steps: u64,
    pub max_cells: usize,
    pub max_int_bits: u64,
    pub max_depth: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            time: Duration::from_secs(1),
            max_steps: 1_000_000,
            max_cells: 1 << 20,
            max_int_bits: 1 << 14,
            max_depth: 200,
        }
    }
}

/// Result of applying a hypothesis to one input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Outcome {
    Defined(Value),
    Undefined,
    RuntimeError(String),
    Timeout,
    ResourceExceeded(String),
}

impl Outcome {
    pub fn value(&self) -> Option<&Value> {
        match self {
            Outcome::Defined(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Outcome::Defined(_))
    }

    /// Compact one-token form used in transcripts: `=<canonical>` for a
    /// defined value, otherwise `!undef`, `!timeout`, `!error:<msg>` or
    /// `!resource:<msg>`.
    pub fn encode(&self) -> String {
        match self {
            Outcome::Defined(v) => format!("={v}"),
            Outcome::Undefined => "!undef".into(),
            Outcome::Timeout => "!timeout".into(),
            Outcome::RuntimeError(m) => format!("!error:{m}"),
            Outcome::ResourceExceeded(m) => format!("!resource:{m}"),
        }
    }

    pub fn decode(text: &str) -> Option<Outcome> {
        if let Some(v) = text.strip_prefix('=') {
            return parse_value(v).ok().map(Outcome::Defined);
        }
        if let Some(m) = text.strip_prefix("!error:") {
            return Some(Outcome::RuntimeError(m.to_string()));
        }
        if let Some(m) = text.strip_prefix("!resource:") {
            return Some(Outcome::ResourceExceeded(m.to_string()));
        }
        match text {
            "!undef" => Some(Outcome::Undefined),
            "!timeout" => Some(Outcome::Timeout),
            _ => None,
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Outcome::decode(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("bad outcome {text}")))
    }
}

/// Outcomes of one hypothesis, aligned with the space's input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PredictionSetRepr")]
pub struct PredictionSet {
    pub hypothesis_id: String,
    pub space_id: String,
    outcomes: Vec<Outcome>,
    #[serde(skip)]
    defined: usize,
}

#[derive(Deserialize)]
struct PredictionSetRepr {
    hypothesis_id: String,
    space_id: String,
    outcomes: Vec<Outcome>,
}

impl From<PredictionSetRepr> for PredictionSet {
    fn from(r: PredictionSetRepr) -> Self {
        PredictionSet::new(r.hypothesis_id, r.space_id, r.outcomes)
    }
}

impl PredictionSet {
    pub fn new(
        hypothesis_id: impl Into<String>,
        space_id: impl Into<String>,
        outcomes: Vec<Outcome>,
    ) -> Self {
        let defined = outcomes.iter().filter(|o| o.is_defined()).count();
        PredictionSet {
            hypothesis_id: hypothesis_id.into(),
            space_id: space_id.into(),
            outcomes,
            defined,
        }
    }

    /// Builds a set directly from optional values, for synthetic studies.
    pub fn from_values(
        hypothesis_id: impl Into<String>,
        space_id: impl Into<String>,
        values: impl IntoIterator<Item = Option<Value>>,
    ) -> Self {
        let outcomes = values
            .into_iter()
            .map(|v| v.map_or(Outcome::Undefined, Outcome::Defined))
            .collect();
        Self::new(hypothesis_id, space_id, outcomes)
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn defined_count(&self) -> usize {
        self.defined
    }

    pub fn value(&self, index: usize) -> Option<&Value> {
        self.outcomes.get(index).and_then(Outcome::value)
    }

    pub fn is_fully_defined(&self) -> bool {
        self.defined == self.outcomes.len()
    }
}

impl fmt::Display for PredictionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# prediction-set hypothesis={} space={}",
            self.hypothesis_id, self.space_id
        )?;
        for o in &self.outcomes {
            writeln!(f, "{}", o.encode())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProgramSource {
    Dsl { source: String },
    External { worker: String, source: String },
}

impl ProgramSource {
    pub fn text(&self) -> &str {
        match self {
            ProgramSource::Dsl { source } | ProgramSource::External { source, .. } => source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub proposer: String,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub summary: String,
    pub program: ProgramSource,
    pub origin: Origin,
}

impl Hypothesis {
    pub fn dsl(
        id: impl Into<String>,
        summary: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Hypothesis {
            id: id.into(),
            summary: summary.into(),
            program: ProgramSource::Dsl {
                source: source.into(),
            },
            origin: Origin {
                proposer: "manual".into(),
                iteration: 0,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("program does not load: {0}")]
    Load(String),
    #[error("observations map input {input} to both {first} and {second}")]
    Conflict {
        input: String,
        first: String,
        second: String,
    },
    #[error("cannot build a lookup table from zero observations")]
    EmptyObservations,
    #[error("hypothesis needs worker kind `{0}` but no worker pool is attached")]
    NoWorker(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl ExecError {
    /// True for failures that count against the hypothesis itself
    /// (unparsable or rejected by the worker) rather than the infrastructure.
    pub fn is_format_failure(&self) -> bool {
        matches!(self, ExecError::Load(_))
    }
}

/// A program ready to run: parsed locally, or loaded into a worker pool.
#[derive(Debug)]
pub enum LoadedProgram {
    Dsl(Program),
    External { handle: String },
}

/// Runs hypotheses with fixed limits on a dedicated thread pool, optionally
/// delegating external programs to a worker pool.
pub struct Evaluator {
    limits: ExecLimits,
    pool: rayon::ThreadPool,
    workers: Option<WorkerPool>,
    next_handle: std::sync::atomic::AtomicUsize,
}

impl fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Evaluator")
            .field("limits", &self.limits)
            .field("threads", &self.pool.current_num_threads())
            .field("workers", &self.workers.as_ref().map(WorkerPool::size))
            .finish()
    }
}

impl Evaluator {
    /// `threads == 0` picks the number of available cores.
    pub fn new(limits: ExecLimits, threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .stack_size(32 << 20)
            .build()
            .expect("thread pool construction");
        Evaluator {
            limits,
            pool,
            workers: None,
            next_handle: Default::default(),
        }
    }

    pub fn with_workers(mut self, workers: WorkerPool) -> Self {
        self.workers = Some(workers);
        self
    }

    pub fn limits(&self) -> &ExecLimits {
        &self.limits
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn load(&self, program: &ProgramSource) -> Result<LoadedProgram, ExecError> {
        match program {
            ProgramSource::Dsl { source } => parse_dsl(source)
                .map(LoadedProgram::Dsl)
                .map_err(|e| ExecError::Load(e.to_string())),
            ProgramSource::External { worker, source } => {
                let pool = self
                    .workers
                    .as_ref()
                    .ok_or_else(|| ExecError::NoWorker(worker.clone()))?;
                let n = self
                    .next_handle
                    .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let handle = format!("h{n}");
                match pool.load(&handle, source) {
                    Ok(()) => Ok(LoadedProgram::External { handle }),
                    Err(LoadFailure::Rejected { kind, message }) => {
                        Err(ExecError::Load(format!("{kind}: {message}")))
                    }
                    Err(LoadFailure::Transport(t)) => Err(ExecError::Transport(t)),
                }
            }
        }
    }

    pub fn eval(&self, program: &LoadedProgram, input: &Value) -> Result<Outcome, ExecError> {
        match program {
            LoadedProgram::Dsl(p) => Ok(self.pool.install(|| eval_program(p, input, &self.limits))),
            LoadedProgram::External { handle } => {
                let pool = self
                    .workers
                    .as_ref()
                    .ok_or_else(|| ExecError::NoWorker(handle.clone()))?;
                Ok(pool.call(handle, input)?)
            }
        }
    }

    /// Outcomes over `inputs`, in input order regardless of thread count.
    pub fn eval_all(
        &self,
        program: &LoadedProgram,
        inputs: &[Value],
    ) -> Result<Vec<Outcome>, ExecError> {
        match program {
            LoadedProgram::Dsl(p) => Ok(self.pool.install(|| {
                inputs
                    .par_iter()
                    .with_min_len(64)
                    .map(|v| eval_program(p, v, &self.limits))
                    .collect()
            })),
            LoadedProgram::External { handle } => {
                let pool = self
                    .workers
                    .as_ref()
                    .ok_or_else(|| ExecError::NoWorker(handle.clone()))?;
                Ok(pool.call_all(handle, inputs)?)
            }
        }
    }

    pub fn predict(
        &self,
        hypothesis_id: &str,
        program: &LoadedProgram,
        space: &SampleSpace,
    ) -> Result<PredictionSet, ExecError> {
        let outcomes = self.eval_all(program, space.inputs())?;
        Ok(PredictionSet::new(hypothesis_id, space.id(), outcomes))
    }

    /// Prediction sets for many programs; the space id is hashed once.
    pub fn predict_many(
        &self,
        programs: &[(String, LoadedProgram)],
        space: &SampleSpace,
    ) -> Result<Vec<PredictionSet>, ExecError> {
        let space_id = space.id();
        programs
            .iter()
            .map(|(id, p)| {
                self.eval_all(p, space.inputs())
                    .map(|o| PredictionSet::new(id.clone(), space_id.clone(), o))
            })
            .collect()
    }
}

/// Loads `h` and computes its prediction set over `space`.
pub fn compute_prediction_set(
    evaluator: &Evaluator,
    h: &Hypothesis,
    space: &SampleSpace,
) -> Result<PredictionSet, ExecError> {
    let program = evaluator.load(&h.program)?;
    evaluator.predict(&h.id, &program, space)
}

/// A hypothesis that memorizes the observations and is undefined elsewhere.
pub fn make_lookup_hypothesis(obs: &ObservationSet) -> Result<Hypothesis, ExecError> {
    if obs.is_empty() {
        return Err(ExecError::EmptyObservations);
    }
    let mut table: Vec<(&Value, &Value)> = Vec::new();
    let mut seen: HashMap<&Value, &Value> = HashMap::new();
    for pair in &obs.pairs {
        match seen.get(&pair.input) {
            Some(prev) if *prev != &pair.output => {
                return Err(ExecError::Conflict {
                    input: pair.input.canonical(),
                    first: prev.canonical(),
                    second: pair.output.canonical(),
                })
            }
            Some(_) => {}
            None => {
                seen.insert(&pair.input, &pair.output);
                table.push((&pair.input, &pair.output));
            }
        }
    }
    let render = |vals: Vec<&Value>| -> String {
        vals.iter()
            .map(|v| dsl_literal(v))
            .collect::<Vec<_>>()
            .join(",")
    };
    let inputs = render(table.iter().map(|(i, _)| *i).collect());
    let outputs = render(table.iter().map(|(_, o)| *o).collect());
    let source =
        format!("let i = index_of([{inputs}], x) in if i < 0 then undefined else [{outputs}][i]");
    Ok(Hypothesis {
        id: format!("lookup:{}", obs.problem_id),
        summary: "Return the memorized output for a seen input; undefined elsewhere.".into(),
        program: ProgramSource::Dsl { source },
        origin: Origin {
            proposer: "lookup".into(),
            iteration: 0,
        },
    })
}

/// Renders a value as a DSL expression that evaluates to it.
pub fn dsl_literal(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(true) => "on".into(),
        Value::Bool(false) => "off".into(),
        Value::Int(n) => n.to_string(),
        Value::List(items) => format!(
            "[{}]",
            items.iter().map(dsl_literal).collect::<Vec<_>>().join(",")
        ),
        Value::Grid(g) => {
            let rows: Vec<String> = g
                .to_rows()
                .iter()
                .map(|r| {
                    format!(
                        "[{}]",
                        r.iter()
                            .map(|c| c.to_string())
                            .collect::<Vec<_>>()
                            .join(",")
                    )
                })
                .collect();
            if g.rows() == 0 {
                "fill(0,0,0)".into()
            } else if g.cols() == 0 {
                format!("fill({},0,0)", g.rows())
            } else {
                format!("grid([{}])", rows.join(","))
            }
        }
        Value::Entity(e) => format!(
            "entity({},{},{})",
            e.color.name(),
            e.shape.name(),
            e.material.name()
        ),
    }
}
