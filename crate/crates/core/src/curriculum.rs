//! Momentum curriculum over the three preference types.
//!
//! Each probe supplies one loss per type. The scheduler keeps an EWMA of
//! each loss, turns the recent drop into a clipped momentum, and maps
//! momenta to sampling weights around a uniform mixture:
//!
//! ```text
//! E_r <- (1 - α) E_r + α L_r
//! m_r <- clip(E_r(prev) - E_r, 0, m_max)
//! w_r <- clip(3 (ε + m_r) / Σ_s (ε + m_s), w_min, w_max)
//! ```
//!
//! Arithmetic is exact: losses are read as decimal rationals.

use std::io::BufRead;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::preferences::Stage;
use crate::report::{decimal, Cell, Report};

pub const LOSS_LOG_SCHEMA: &str = "gear-losses/1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CurriculumError {
    #[error("probe at step {step} is missing a loss for {stage}")]
    Stale { step: u64, stage: &'static str },
    #[error("probe step {step} does not follow step {previous}")]
    Ordering { step: u64, previous: u64 },
    #[error("loss log line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("loss for {stage} at step {step} is negative")]
    Negative { step: u64, stage: &'static str },
}

/// Parses `12`, `-0.5`, `1.25e-3` and similar into an exact rational.
pub fn parse_decimal(text: &str) -> Option<BigRational> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let all: BigInt = format!("{int_part}{frac_part}0").parse::<BigInt>().ok()? / 10;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut q = if scale >= 0 {
        BigRational::from_integer(all * ten.pow(scale as u32))
    } else {
        BigRational::new(all, ten.pow((-scale) as u32))
    };
    if neg {
        q = -q;
    }
    Some(q)
}

fn dec(text: &str) -> BigRational {
    parse_decimal(text).expect("constant decimal")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumParams {
    pub alpha: BigRational,
    pub epsilon: BigRational,
    pub m_max: BigRational,
    pub w_min: BigRational,
    pub w_max: BigRational,
    /// Training examples between weight updates.
    pub interval: u64,
}

impl Default for CurriculumParams {
    fn default() -> Self {
        CurriculumParams {
            alpha: dec("0.1"),
            epsilon: dec("0.1"),
            m_max: dec("0.03"),
            w_min: dec("0.8"),
            w_max: dec("1.2"),
            interval: 1280,
        }
    }
}

impl CurriculumParams {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let zero = BigRational::zero();
        let bad = |m: &str| Err(CurriculumError::Params(m.to_string()));
        if self.alpha <= zero || self.alpha >= BigRational::one() {
            return bad("alpha must lie strictly between 0 and 1");
        }
        if self.epsilon <= zero {
            return bad("epsilon must be positive");
        }
        if self.m_max <= zero {
            return bad("m_max must be positive");
        }
        if self.w_min <= zero || self.w_min > self.w_max {
            return bad("need 0 < w_min <= w_max");
        }
        if self.interval == 0 {
            return bad("interval must be positive");
        }
        Ok(())
    }
}

/// Per-type quantities, indexed in [`Stage::ALL`] order.
pub type PerType<T> = [T; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumState {
    pub ewma: Option<PerType<BigRational>>,
    pub momentum: PerType<BigRational>,
    pub weights: PerType<BigRational>,
    pub updates: u64,
    pub last_step: Option<u64>,
}

impl Default for CurriculumState {
    fn default() -> Self {
        CurriculumState {
            ewma: None,
            momentum: std::array::from_fn(|_| BigRational::zero()),
            weights: std::array::from_fn(|_| BigRational::one()),
            updates: 0,
            last_step: None,
        }
    }
}

fn clip(x: BigRational, lo: &BigRational, hi: &BigRational) -> BigRational {
    if &x < lo {
        lo.clone()
    } else if &x > hi {
        hi.clone()
    } else {
        x
    }
}

/// Folds one probe into the EWMAs and momenta. The first probe initializes
/// the EWMAs and leaves momenta at zero.
pub fn update_ewma(
    state: &mut CurriculumState,
    losses: &PerType<Option<BigRational>>,
    step: u64,
    params: &CurriculumParams,
) -> Result<(), CurriculumError> {
    if let Some(previous) = state.last_step {
        if step <= previous {
            return Err(CurriculumError::Ordering { step, previous });
        }
    }
    let mut current: Vec<BigRational> = Vec::with_capacity(3);
    for (i, l) in losses.iter().enumerate() {
        let stage = Stage::ALL[i].name();
        let l = l.clone().ok_or(CurriculumError::Stale { step, stage })?;
        if l.is_negative() {
            return Err(CurriculumError::Negative { step, stage });
        }
        current.push(l);
    }
    let one = BigRational::one();
    match &mut state.ewma {
        None => {
            state.ewma = Some(std::array::from_fn(|i| current[i].clone()));
        }
        Some(e) => {
            for i in 0..3 {
                let new = (&one - &params.alpha) * &e[i] + &params.alpha * &current[i];
                state.momentum[i] = clip(&e[i] - &new, &BigRational::zero(), &params.m_max);
                e[i] = new;
            }
        }
    }
    state.updates += 1;
    state.last_step = Some(step);
    Ok(())
}

/// Weights proportional to `ε + m_r`, scaled to mean 1, then clipped.
pub fn compute_weights(state: &CurriculumState, params: &CurriculumParams) -> PerType<BigRational> {
    let raw: Vec<BigRational> = state.momentum.iter().map(|m| &params.epsilon + m).collect();
    let total: BigRational = raw.iter().cloned().sum();
    let three = BigRational::from_integer(BigInt::from(3));
    std::array::from_fn(|i| clip(&raw[i] * &three / &total, &params.w_min, &params.w_max))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub ewma: PerType<BigRational>,
    pub momentum: PerType<BigRational>,
    pub weights: PerType<BigRational>,
}

/// Feeds probes to a curriculum one at a time and tracks examples seen, so
/// a trainer can ask when the next probe is due and read current weights.
#[derive(Debug, Clone)]
pub struct Scheduler {
    params: CurriculumParams,
    state: CurriculumState,
    examples: u64,
    next_update: u64,
}

impl Scheduler {
    pub fn new(params: CurriculumParams) -> Result<Self, CurriculumError> {
        params.validate()?;
        let next_update = params.interval;
        Ok(Scheduler {
            params,
            state: CurriculumState::default(),
            examples: 0,
            next_update,
        })
    }

    pub fn params(&self) -> &CurriculumParams {
        &self.params
    }

    pub fn state(&self) -> &CurriculumState {
        &self.state
    }

    pub fn weights(&self) -> PerType<BigRational> {
        self.state.weights.clone()
    }

    /// Records `n` trained examples; true once an update boundary is reached.
    pub fn advance(&mut self, n: u64) -> bool {
        self.examples += n;
        self.examples >= self.next_update
    }

    pub fn examples(&self) -> u64 {
        self.examples
    }

    /// Applies a probe and returns the new trajectory point.
    pub fn probe(
        &mut self,
        step: u64,
        losses: &PerType<Option<BigRational>>,
    ) -> Result<TrajectoryPoint, CurriculumError> {
        update_ewma(&mut self.state, losses, step, &self.params)?;
        self.state.weights = compute_weights(&self.state, &self.params);
        while self.next_update <= self.examples.max(step) {
            self.next_update += self.params.interval;
        }
        Ok(TrajectoryPoint {
            step,
            ewma: self.state.ewma.clone().expect("set by update"),
            momentum: self.state.momentum.clone(),
            weights: self.state.weights.clone(),
        })
    }
}

/// Reads a loss log: optional `# gear-losses/1` header, `#` comments, and
/// lines `<step> <parsing|consistency|gear> <loss>`.
pub fn read_loss_log<R: BufRead>(
    reader: R,
) -> Result<Vec<(u64, Stage, BigRational)>, CurriculumError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let fail = |message: String| CurriculumError::Format {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| fail(e.to_string()))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        let [step, stage, loss] = fields[..] else {
            return Err(fail(format!("expected 3 fields, found {}", fields.len())));
        };
        let step = step
            .parse::<u64>()
            .map_err(|_| fail(format!("bad step {step}")))?;
        let stage = Stage::from_name(stage).ok_or_else(|| fail(format!("unknown type {stage}")))?;
        let loss = parse_decimal(loss).ok_or_else(|| fail(format!("bad loss {loss}")))?;
        out.push((step, stage, loss));
    }
    Ok(out)
}

/// Replays a loss log: records sharing a step form one probe, and each probe
/// produces one trajectory point.
pub fn replay_schedule(
    log: &[(u64, Stage, BigRational)],
    params: &CurriculumParams,
) -> Result<Vec<TrajectoryPoint>, CurriculumError> {
    let mut scheduler = Scheduler::new(params.clone())?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < log.len() {
        let step = log[i].0;
        let mut losses: PerType<Option<BigRational>> = Default::default();
        while i < log.len() && log[i].0 == step {
            let idx = Stage::ALL
                .iter()
                .position(|s| *s == log[i].1)
                .expect("known stage");
            losses[idx] = Some(log[i].2.clone());
            i += 1;
        }
        out.push(scheduler.probe(step, &losses)?);
    }
    Ok(out)
}

pub fn trajectory_report(points: &[TrajectoryPoint], params: &CurriculumParams) -> Report {
    let mut columns = vec!["step".to_string()];
    for prefix in ["ewma", "momentum", "weight"] {
        for s in Stage::ALL {
            columns.push(format!("{prefix}_{}", s.name()));
        }
    }
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut r = Report::new("gear-curriculum/1", &cols)
        .meta("alpha", decimal(&params.alpha, 6))
        .meta("epsilon", decimal(&params.epsilon, 6))
        .meta("m_max", decimal(&params.m_max, 6))
        .meta("w_min", decimal(&params.w_min, 6))
        .meta("w_max", decimal(&params.w_max, 6))
        .meta("interval", params.interval);
    for p in points {
        let mut row = vec![Cell::Count(p.step)];
        for group in [&p.ewma, &p.momentum, &p.weights] {
            row.extend(group.iter().map(|q| Cell::Ratio(q.clone())));
        }
        r.push(row);
    }
    r
}
