//! `gear`: command-line front end for label-free hypothesis evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use gear_core::curriculum::{self, CurriculumParams};
use gear_core::executor::{
    compute_prediction_set, Evaluator, ExecLimits, Hypothesis, Origin, PredictionSet, WorkerPool,
};
use gear_core::ingest::{load_corpus, Problem};
use gear_core::metrics::{bounds_certificate, diversity_report, Certificate, VerdictKind};
use gear_core::preferences::{self, PrefConfig, PrefProblem};
use gear_core::protocol::{
    ChatConfig, ChatProposer, LoopConfig, LoopContext, ProgramKind, Proposer, ScriptedProposer,
    StopReason, Transcript,
};
use gear_core::report::{fraction, macro_mean, Cell, Report, ReportFormat};
use gear_core::samplespace::{
    build_acre_space, build_corpus_space, build_list_function_space, derived_rng,
    sample_observations, LabelConstraint, SampleSpace,
};
use gear_core::simulation::{self, StudyConfig, StudyProblem};

const RUN_SCHEMA: &str = "gear-run/1";
const SCORECARD_SCHEMA: &str = "gear-scorecard/1";
const EVAL_SCHEMA: &str = "gear-eval/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Usage = 1,
    Data = 2,
    External = 3,
}

#[derive(Debug)]
struct Failure {
    exit: Exit,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait ResultExt<T> {
    fn data(self) -> CliResult<T>;
    fn usage(self) -> CliResult<T>;
    fn external(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn data(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            exit: Exit::Data,
            error: e.into(),
        })
    }

    fn usage(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            exit: Exit::Usage,
            error: e.into(),
        })
    }

    fn external(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            exit: Exit::External,
            error: e.into(),
        })
    }
}

fn usage_error<T>(message: impl Into<String>) -> CliResult<T> {
    Err(Failure {
        exit: Exit::Usage,
        error: anyhow!(message.into()),
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "gear",
    version,
    about = "Label-free evaluation of abductive hypothesis sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a sample space file.
    BuildSpace(BuildSpaceArgs),
    /// Compute prediction sets and diversity for a set of hypotheses.
    Eval(EvalArgs),
    /// Run the generation loop on each selected problem.
    Run(RunArgs),
    /// Run a simulation study over finished transcripts.
    Simulate(SimulateArgs),
    /// Build a preference-pair dataset from transcripts.
    Prefs(PrefsArgs),
    /// Replay a probe-loss log through the curriculum scheduler.
    CurriculumReplay(CurriculumArgs),
    /// Per-transcript scorecard with a macro-averaged summary row.
    Report(ReportArgs),
    /// Serve the executor protocol over stdio with the built-in language.
    Worker(WorkerArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    ListFunctions,
    Acre,
    Corpus,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Lines,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Lines => ReportFormat::Lines,
        }
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

impl OutputArgs {
    fn emit(&self, report: &Report) -> CliResult<()> {
        let bytes = report.to_string(self.format.into());
        write_output(self.out.as_deref(), bytes.as_bytes())
    }
}

#[derive(Debug, Args)]
struct ExecArgs {
    /// Wall-clock limit per call, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = ExecLimits::default().max_steps)]
    max_steps: u64,
    /// Evaluation threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Command line of an external worker for guest-language programs.
    #[arg(long)]
    worker: Option<String>,
    /// Worker kind name recorded in program sources.
    #[arg(long, default_value = "python")]
    worker_kind: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl ExecArgs {
    fn limits(&self) -> ExecLimits {
        ExecLimits {
            time: Duration::from_millis(self.timeout_ms),
            max_steps: self.max_steps,
            ..ExecLimits::default()
        }
    }

    fn evaluator(&self) -> CliResult<Evaluator> {
        let evaluator = Evaluator::new(self.limits(), self.threads);
        match &self.worker {
            None => Ok(evaluator),
            Some(cmd) => {
                let mut parts = cmd.split_whitespace().map(String::from);
                let program = parts
                    .next()
                    .ok_or_else(|| anyhow!("empty worker command"))
                    .usage()?;
                let args: Vec<String> = parts.collect();
                let pool = WorkerPool::spawn(self.workers.max(1), &program, &args)
                    .with_context(|| format!("starting worker `{cmd}`"))
                    .external()?;
                Ok(evaluator.with_workers(pool))
            }
        }
    }

    fn program_kind(&self) -> ProgramKind {
        match self.worker {
            Some(_) => ProgramKind::External {
                worker: self.worker_kind.clone(),
            },
            None => ProgramKind::Dsl,
        }
    }
}

#[derive(Debug, Args)]
struct BuildSpaceArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inputs drawn per stratum.
    #[arg(long, default_value_t = 1000)]
    cap: u64,
    /// Problem files for a corpus space.
    #[arg(long = "corpus", num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    space: PathBuf,
    /// JSON lines `{"id","source","summary"?}`.
    #[arg(long)]
    hypotheses: PathBuf,
    /// Also write every prediction set as JSON lines.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProposerKind {
    Scripted,
    Chat,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long = "problems", num_args = 1.., required = true)]
    problems: Vec<PathBuf>,
    /// Restrict to these problem ids.
    #[arg(long = "problem")]
    select: Vec<String>,
    #[arg(long)]
    space: PathBuf,
    /// Observation counts shown to the proposer.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Require both `on` and `off` outputs among the shown observations.
    #[arg(long)]
    both_labels: bool,
    #[arg(long, default_value = "4/5")]
    threshold: String,
    #[arg(long, default_value_t = 3)]
    max_bad: usize,
    #[arg(long)]
    max_attempts: Option<usize>,
    #[arg(long, value_enum, default_value = "chat")]
    proposer: ProposerKind,
    /// JSON object mapping problem id to a list of replies.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value = "http://localhost:8000/v1")]
    base_url: String,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long, default_value_t = 300)]
    request_timeout: u64,
    /// Continue unfinished transcripts already in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Study {
    Study1,
    Study2,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    study: Study,
    #[arg(long = "problems", num_args = 1.., required = true)]
    problems: Vec<PathBuf>,
    /// Transcript files or directories of `*.jsonl` transcripts.
    #[arg(long = "transcripts", num_args = 1.., required = true)]
    transcripts: Vec<PathBuf>,
    #[arg(long)]
    dataset: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    context_sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    contexts_per_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    exec: ExecArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct PrefsArgs {
    #[arg(long = "transcripts", num_args = 1.., required = true)]
    transcripts: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    context_sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    contexts_per_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw this many pairs split evenly across the three stages.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurriculumArgs {
    /// Loss log, or `-` for stdin.
    #[arg(long)]
    losses: PathBuf,
    #[arg(long, default_value = "0.1")]
    alpha: String,
    #[arg(long, default_value = "0.1")]
    epsilon: String,
    #[arg(long, default_value = "0.03")]
    m_max: String,
    #[arg(long, default_value = "0.8")]
    w_min: String,
    #[arg(long, default_value = "1.2")]
    w_max: String,
    #[arg(long, default_value_t = 1280)]
    interval: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long = "transcripts", num_args = 1.., required = true)]
    transcripts: Vec<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct WorkerArgs {
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = ExecLimits::default().max_steps)]
    max_steps: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Exit::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gear: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::BuildSpace(a) => build_space(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate(a),
        Command::Prefs(a) => prefs(a),
        Command::CurriculumReplay(a) => curriculum_replay(a),
        Command::Report(a) => report(a),
        Command::Worker(a) => {
            let limits = ExecLimits {
                time: Duration::from_millis(a.timeout_ms),
                max_steps: a.max_steps,
                ..ExecLimits::default()
            };
            gear_core::executor::worker::serve_dsl(io::stdin().lock(), io::stdout().lock(), &limits)
                .external()
        }
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes)
            .with_context(|| format!("writing {}", p.display()))
            .data(),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).data()
        }
    }
}

fn read_space(path: &Path) -> CliResult<SampleSpace> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .data()?;
    SampleSpace::read_from(BufReader::new(file))
        .with_context(|| format!("reading space {}", path.display()))
        .data()
}

fn load_problems(paths: &[PathBuf]) -> CliResult<Vec<Problem>> {
    let mut problems = load_corpus(paths).data()?;
    problems.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in problems.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(anyhow!("problem id {} appears twice", pair[0].id)).data();
        }
    }
    Ok(problems)
}

/// Expands directories to their `*.jsonl` files, sorted by name.
fn transcript_files(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))
                .data()?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn read_transcript(path: &Path) -> CliResult<Transcript> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .data()?;
    Transcript::read_from(BufReader::new(file))
        .with_context(|| format!("reading transcript {}", path.display()))
        .data()
}

fn read_transcripts(paths: &[PathBuf]) -> CliResult<Vec<Transcript>> {
    let files = transcript_files(paths)?;
    if files.is_empty() {
        return Err(anyhow!("no transcripts found")).data();
    }
    files.iter().map(|f| read_transcript(f)).collect()
}

fn build_space(a: BuildSpaceArgs) -> CliResult<()> {
    let space = match a.family {
        Family::ListFunctions => build_list_function_space(a.seed, a.cap),
        Family::Acre => build_acre_space(a.seed, a.cap),
        Family::Corpus => {
            if a.corpus.is_empty() {
                return usage_error("--corpus is required for a corpus space");
            }
            build_corpus_space(&a.corpus).data()?
        }
    };
    log::info!("built {} with {} inputs", space.id(), space.len());
    write_output(a.out.as_deref(), &space.to_bytes())
}

#[derive(Debug, Deserialize)]
struct HypothesisLine {
    id: String,
    source: String,
    #[serde(default)]
    summary: String,
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let space = read_space(&a.space)?;
    let evaluator = a.exec.evaluator()?;
    let kind = a.exec.program_kind();
    let text = fs::read_to_string(&a.hypotheses)
        .with_context(|| format!("reading {}", a.hypotheses.display()))
        .data()?;
    let mut hypotheses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let h: HypothesisLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", a.hypotheses.display(), i + 1))
            .data()?;
        hypotheses.push(Hypothesis {
            id: h.id,
            summary: h.summary,
            program: kind.program(h.source),
            origin: Origin {
                proposer: "file".into(),
                iteration: i,
            },
        });
    }
    let mut preds: Vec<PredictionSet> = Vec::with_capacity(hypotheses.len());
    for h in &hypotheses {
        preds.push(
            compute_prediction_set(&evaluator, h, &space)
                .with_context(|| format!("hypothesis {}", h.id))
                .data()?,
        );
    }
    if let Some(path) = &a.predictions {
        let mut out = String::new();
        for p in &preds {
            out.push_str(&serde_json::to_string(p).data()?);
            out.push('\n');
        }
        fs::write(path, out)
            .with_context(|| format!("writing {}", path.display()))
            .data()?;
    }
    let refs: Vec<&PredictionSet> = preds.iter().collect();
    let mut report = Report::new(EVAL_SCHEMA, &["hypothesis", "defined", "coverage"])
        .meta("space", space.id())
        .meta("hypotheses", refs.len());
    if !refs.is_empty() {
        let div = diversity_report(&refs).data()?;
        report = report
            .meta("gamma", fraction(&div.gamma.0))
            .meta("beta", fraction(&div.beta.0));
        report = match bounds_certificate(&refs).data()? {
            Certificate::Applicable(c) => report
                .meta("beta_lower", fraction(&c.lower.0))
                .meta("beta_upper", fraction(&c.upper.0))
                .meta("bounds_hold", c.holds()),
            Certificate::Inapplicable { reason } => report.meta("bounds", reason),
        };
    }
    for p in &preds {
        report.push(vec![
            Cell::from(p.hypothesis_id.as_str()),
            Cell::from(p.defined_count()),
            Cell::from(gear_core::report::ratio(p.defined_count(), p.len())),
        ]);
    }
    a.output.emit(&report)
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    schema: &'a str,
    seed: u64,
    n: &'a [usize],
    space: String,
    problems: Vec<&'a str>,
    proposer: String,
    threshold: String,
    max_bad: usize,
    max_attempts: Option<usize>,
    both_labels: bool,
    timeout_ms: u64,
    max_steps: u64,
}

fn make_proposer(
    a: &RunArgs,
    problem: &str,
    script: &BTreeMap<String, Vec<String>>,
    skip: usize,
) -> Box<dyn Proposer> {
    match a.proposer {
        ProposerKind::Scripted => {
            let replies = script.get(problem).cloned().unwrap_or_default();
            Box::new(ScriptedProposer::new(replies).skip(skip))
        }
        ProposerKind::Chat => Box::new(ChatProposer::new(ChatConfig {
            base_url: a.base_url.clone(),
            model: a.model.clone(),
            temperature: a.temperature,
            max_tokens: a.max_tokens,
            timeout_secs: a.request_timeout,
            ..ChatConfig::default()
        })),
    }
}

fn observation_seed(seed: u64, problem: &str, n: usize) -> u64 {
    derived_rng(seed, &format!("observations/{problem}/{n}")).next_u64()
}

fn run(a: RunArgs) -> CliResult<()> {
    let threshold = gear_core::protocol::parse_threshold(&a.threshold)
        .ok_or_else(|| anyhow!("bad threshold {}", a.threshold))
        .usage()?;
    let script: BTreeMap<String, Vec<String>> = match (a.proposer, &a.script) {
        (ProposerKind::Scripted, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .data()?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .data()?
        }
        (ProposerKind::Scripted, None) => {
            return usage_error("--script is required with --proposer scripted")
        }
        _ => BTreeMap::new(),
    };
    if a.n.contains(&0) {
        return usage_error("observation counts must be positive");
    }
    let space = read_space(&a.space)?;
    let mut problems = load_problems(&a.problems)?;
    if !a.select.is_empty() {
        for id in &a.select {
            if !problems.iter().any(|p| &p.id == id) {
                return Err(anyhow!("unknown problem {id}")).data();
            }
        }
        problems.retain(|p| a.select.contains(&p.id));
    }
    let evaluator = a.exec.evaluator()?;
    let ctx = LoopContext {
        evaluator: &evaluator,
        space: &space,
        config: LoopConfig {
            max_bad: a.max_bad,
            threshold,
            max_attempts: a.max_attempts,
            program_kind: a.exec.program_kind(),
        },
    };
    fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .data()?;
    let manifest = RunManifest {
        schema: RUN_SCHEMA,
        seed: a.seed,
        n: &a.n,
        space: space.id(),
        problems: problems.iter().map(|p| p.id.as_str()).collect(),
        proposer: match a.proposer {
            ProposerKind::Scripted => "scripted".into(),
            ProposerKind::Chat => format!("chat:{}@{}", a.model, a.base_url),
        },
        threshold: a.threshold.clone(),
        max_bad: a.max_bad,
        max_attempts: a.max_attempts,
        both_labels: a.both_labels,
        timeout_ms: a.exec.timeout_ms,
        max_steps: a.exec.max_steps,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).data()? + "\n";
    fs::write(a.out_dir.join("run.json"), manifest_json).data()?;

    let constraint = if a.both_labels {
        LabelConstraint::BothOnOff
    } else {
        LabelConstraint::None
    };
    let mut aborted = Vec::new();
    for &n in &a.n {
        let dir = a.out_dir.join(format!("n{n}"));
        fs::create_dir_all(&dir).data()?;
        for problem in &problems {
            let (pool, dropped) = problem.observations();
            if dropped > 0 {
                log::warn!("{}: dropped {dropped} duplicate pairs", problem.id);
            }
            let obs = match sample_observations(
                &pool,
                n,
                observation_seed(a.seed, &problem.id, n),
                constraint,
            ) {
                Ok(o) => o,
                Err(e) => {
                    log::warn!("{}: skipped at n={n}: {e}", problem.id);
                    continue;
                }
            };
            let path = dir.join(format!("{}.jsonl", file_stem(&problem.id)));
            let stop = if a.resume && path.exists() {
                let mut transcript = read_transcript(&path)?;
                if transcript.is_finished() {
                    continue;
                }
                let mut proposer =
                    make_proposer(&a, &problem.id, &script, transcript.attempts.len());
                let file = fs::OpenOptions::new().append(true).open(&path).data()?;
                let mut sink = BufWriter::new(file);
                ctx.resume(&mut transcript, proposer.as_mut(), &mut sink)
                    .data()?;
                sink.flush().data()?;
                transcript.stop
            } else {
                let mut proposer = make_proposer(&a, &problem.id, &script, 0);
                let file = fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))
                    .data()?;
                let mut sink = BufWriter::new(file);
                let transcript = ctx.run(&obs, proposer.as_mut(), &mut sink).data()?;
                sink.flush().data()?;
                log::info!(
                    "{} n={n}: {} attempts, {} good",
                    problem.id,
                    transcript.attempts.len(),
                    transcript.good().count()
                );
                transcript.stop
            };
            if let Some(StopReason::Aborted { message }) = stop {
                aborted.push(format!("{} n={n}: {message}", problem.id));
            }
        }
    }
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(anyhow!(
            "{} loops aborted:\n{}",
            aborted.len(),
            aborted.join("\n")
        ))
        .external()
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let problems = load_problems(&a.problems)?;
    let pooled: BTreeMap<&str, _> = problems
        .iter()
        .map(|p| (p.id.as_str(), p.observations().0))
        .collect();
    let transcripts = read_transcripts(&a.transcripts)?;
    let evaluator = a.exec.evaluator()?;
    let mut study = Vec::with_capacity(transcripts.len());
    for t in &transcripts {
        let pool = pooled
            .get(t.header.problem_id.as_str())
            .ok_or_else(|| anyhow!("transcript for unknown problem {}", t.header.problem_id))
            .data()?;
        if !t.is_finished() {
            log::warn!("{}: transcript is unfinished", t.header.problem_id);
        }
        study.push(StudyProblem::from_transcript(&a.dataset, t, pool, &evaluator).data()?);
    }
    study.sort_by(|x, y| (x.n, &x.problem_id).cmp(&(y.n, &y.problem_id)));
    let config = StudyConfig {
        m_values: a.m.clone(),
        repetitions: a.repetitions,
        context_sizes: a.context_sizes.clone(),
        contexts_per_size: a.contexts_per_size,
        seed: a.seed,
    };
    let report = match a.study {
        Study::Study1 => {
            simulation::study1_report(&simulation::run_study1(&study, &config).data()?, &config)
        }
        Study::Study2 => {
            simulation::study2_report(&simulation::run_study2(&study, &config).data()?, &config)
        }
    };
    a.output.emit(&report)
}

fn prefs(a: PrefsArgs) -> CliResult<()> {
    let transcripts = read_transcripts(&a.transcripts)?;
    let mut grouped: BTreeMap<&str, Vec<&Transcript>> = BTreeMap::new();
    for t in &transcripts {
        grouped
            .entry(t.header.problem_id.as_str())
            .or_default()
            .push(t);
    }
    let problems: Vec<PrefProblem> = grouped
        .values()
        .filter_map(|ts| PrefProblem::from_transcripts(ts))
        .collect();
    let config = PrefConfig {
        context_sizes: a.context_sizes,
        contexts_per_size: a.contexts_per_size,
        seed: a.seed,
    };
    let dataset = preferences::build_preference_dataset(&problems, &config);
    for (problem, why) in &dataset.skipped {
        log::warn!("{problem}: {why}");
    }
    eprintln!(
        "pairs: parsing={} consistency={} gear={}",
        dataset.counts.parsing, dataset.counts.consistency, dataset.counts.gear
    );
    let pairs = match a.sample {
        Some(total) => preferences::sample_balanced(&dataset.pairs, total, a.seed).data()?,
        None => dataset.pairs,
    };
    let mut bytes = Vec::new();
    preferences::write_pairs(&pairs, a.seed, &mut bytes).data()?;
    write_output(a.out.as_deref(), &bytes)
}

fn curriculum_replay(a: CurriculumArgs) -> CliResult<()> {
    let dec = |name: &str, text: &str| {
        curriculum::parse_decimal(text)
            .ok_or_else(|| anyhow!("--{name}: not a decimal: {text}"))
            .usage()
    };
    let params = CurriculumParams {
        alpha: dec("alpha", &a.alpha)?,
        epsilon: dec("epsilon", &a.epsilon)?,
        m_max: dec("m-max", &a.m_max)?,
        w_min: dec("w-min", &a.w_min)?,
        w_max: dec("w-max", &a.w_max)?,
        interval: a.interval,
    };
    params.validate().usage()?;
    let log = if a.losses.as_os_str() == "-" {
        curriculum::read_loss_log(io::stdin().lock()).data()?
    } else {
        let file = fs::File::open(&a.losses)
            .with_context(|| format!("opening {}", a.losses.display()))
            .data()?;
        curriculum::read_loss_log(BufReader::new(file)).data()?
    };
    let points = curriculum::replay_schedule(&log, &params).data()?;
    a.output
        .emit(&curriculum::trajectory_report(&points, &params))
}

fn report(a: ReportArgs) -> CliResult<()> {
    let transcripts = read_transcripts(&a.transcripts)?;
    let columns = [
        "problem",
        "n",
        "proposer",
        "attempts",
        "good",
        "bad_format",
        "bad_inconsistent",
        "bad_non_novel",
        "stop",
        "gamma",
        "beta",
    ];
    let mut report = Report::new(SCORECARD_SCHEMA, &columns).meta("transcripts", transcripts.len());
    let mut rows: Vec<(String, usize, String, Vec<Cell>)> = Vec::new();
    let mut gammas = Vec::new();
    let mut betas = Vec::new();
    for t in &transcripts {
        let count = |k: VerdictKind| t.attempts.iter().filter(|a| a.verdict.kind() == k).count();
        let preds = t.consistent_predictions();
        let (gamma, beta) = if preds.is_empty() {
            (None, None)
        } else {
            let d = diversity_report(&preds).data()?;
            gammas.push(d.gamma.0.clone());
            betas.push(d.beta.0.clone());
            (Some(d.gamma.0), Some(d.beta.0))
        };
        let stop = match &t.stop {
            Some(s) => serde_json::to_value(s)
                .ok()
                .and_then(|v| v.get("reason").and_then(|r| r.as_str()).map(String::from))
                .unwrap_or_default(),
            None => "unfinished".into(),
        };
        let n = t.header.observations.len();
        rows.push((
            t.header.problem_id.clone(),
            n,
            t.header.proposer.clone(),
            vec![
                Cell::from(t.header.problem_id.as_str()),
                Cell::from(n),
                Cell::from(t.header.proposer.as_str()),
                Cell::from(t.attempts.len()),
                Cell::from(count(VerdictKind::Good)),
                Cell::from(count(VerdictKind::BadFormat)),
                Cell::from(count(VerdictKind::BadInconsistent)),
                Cell::from(count(VerdictKind::BadNonNovel)),
                Cell::from(stop),
                Cell::from(gamma),
                Cell::from(beta),
            ],
        ));
    }
    rows.sort_by(|x, y| (&x.0, x.1, &x.2).cmp(&(&y.0, y.1, &y.2)));
    for (_, _, _, row) in rows {
        report.push(row);
    }
    let mut summary = vec![Cell::from("macro-mean")];
    summary.extend(std::iter::repeat_with(|| Cell::from("")).take(8));
    summary.push(Cell::from(macro_mean(&gammas)));
    summary.push(Cell::from(macro_mean(&betas)));
    report.push(summary);
    a.output.emit(&report)
}
