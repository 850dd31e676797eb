//! Two simulation studies over pools of consistent hypotheses.
//!
//! Study 1 hides `m` extra observations and measures how many consistent
//! hypotheses survive them. Study 2 asks whether the GEAR score predicts
//! survival: among pairs ordered by score, how much more often does the
//! higher-scored one pass?

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::executor::{Evaluator, ExecError, PredictionSet};
use crate::metrics::{beta, gamma, generalizability, MetricError};
use crate::protocol::Transcript;
use crate::report::{macro_mean, ratio, Cell, Report};
use crate::samplespace::derived_rng;
use crate::values::{equal_values, ObservationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiversityMetric {
    Gamma,
    Beta,
}

/// `ρ(context ∪ {f}) − ρ(context)`, with γ(∅) = 0 and β = 0 below two sets.
pub fn marginal_gain(
    f: &PredictionSet,
    context: &[&PredictionSet],
    metric: DiversityMetric,
) -> Result<BigRational, MetricError> {
    let mut with: Vec<&PredictionSet> = context.to_vec();
    with.push(f);
    let rho = |sets: &[&PredictionSet]| match metric {
        DiversityMetric::Gamma => gamma(sets),
        DiversityMetric::Beta => beta(sets),
    };
    Ok(rho(&with)? - rho(context)?)
}

/// `⅓(g(f) + Δγ(f) + Δβ(f))`.
pub fn gear_score(
    f: &PredictionSet,
    context: &[&PredictionSet],
) -> Result<BigRational, MetricError> {
    let g = generalizability(f)?;
    let dg = marginal_gain(f, context, DiversityMetric::Gamma)?;
    let db = marginal_gain(f, context, DiversityMetric::Beta)?;
    Ok((g + dg + db) / BigRational::from_integer(BigInt::from(3)))
}

/// One consistent hypothesis and whether it reproduces each held-out pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyCandidate {
    pub id: String,
    pub predictions: PredictionSet,
    pub agrees: Vec<bool>,
}

impl StudyCandidate {
    pub fn passes(&self, hidden: &[usize]) -> bool {
        hidden.iter().all(|&i| self.agrees[i])
    }
}

/// The consistent pool of one problem, with `held_out` pairs outside `O_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyProblem {
    pub dataset: String,
    pub problem_id: String,
    pub n: usize,
    pub held_out: usize,
    pub candidates: Vec<StudyCandidate>,
}

impl StudyProblem {
    /// Evaluates a transcript's consistent hypotheses on every pooled pair
    /// that was not shown to the proposer.
    pub fn from_transcript(
        dataset: &str,
        transcript: &Transcript,
        pooled: &ObservationSet,
        evaluator: &Evaluator,
    ) -> Result<StudyProblem, ExecError> {
        let shown = &transcript.header.observations.pairs;
        let hidden: Vec<_> = pooled.pairs.iter().filter(|p| !shown.contains(p)).collect();
        let inputs: Vec<_> = hidden.iter().map(|p| p.input.clone()).collect();
        let mut candidates = Vec::new();
        for attempt in transcript.consistent() {
            let (Some(h), Some(pred)) = (&attempt.hypothesis, &attempt.predictions) else {
                continue;
            };
            let program = evaluator.load(&h.program)?;
            let outcomes = evaluator.eval_all(&program, &inputs)?;
            let agrees = outcomes
                .iter()
                .zip(&hidden)
                .map(|(o, p)| o.value().is_some_and(|v| equal_values(v, &p.output)))
                .collect();
            candidates.push(StudyCandidate {
                id: h.id.clone(),
                predictions: pred.clone(),
                agrees,
            });
        }
        Ok(StudyProblem {
            dataset: dataset.to_string(),
            problem_id: transcript.header.problem_id.clone(),
            n: transcript.header.observations.len(),
            held_out: hidden.len(),
            candidates,
        })
    }

    /// Hidden sets for one repetition: `O_m` is the first `m` entries of a
    /// seeded shuffle, so larger `m` always extends smaller ones.
    fn hidden_order(&self, seed: u64, repetition: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.held_out).collect();
        let key = format!("hidden/{}/{}/{repetition}", self.dataset, self.problem_id);
        order.shuffle(&mut derived_rng(seed, &key));
        order
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyConfig {
    pub m_values: Vec<usize>,
    pub repetitions: usize,
    pub context_sizes: Vec<usize>,
    pub contexts_per_size: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            m_values: vec![1, 2, 3, 4],
            repetitions: 5,
            context_sizes: vec![0, 1, 2],
            contexts_per_size: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Study1Row {
    pub dataset: String,
    pub n: usize,
    pub m: usize,
    pub problems: usize,
    pub pass_rate: Option<BigRational>,
    pub survivor_gamma: Option<BigRational>,
}

#[derive(Default)]
struct Study1Cell {
    pass_rates: Vec<BigRational>,
    gammas: Vec<BigRational>,
}

/// Dataset, `n` or `m`, and `m` or `c`, depending on the study.
type CellKey = (String, usize, usize);

/// Per-problem pass rate and survivor gamma, absent when not computable.
type ProblemCell = Option<(BigRational, Option<BigRational>)>;

/// Per problem, averages over repetitions; rows then take the unweighted
/// mean over problems.
pub fn run_study1(
    problems: &[StudyProblem],
    config: &StudyConfig,
) -> Result<Vec<Study1Row>, MetricError> {
    let per_problem: Vec<Result<Vec<(CellKey, ProblemCell)>, MetricError>> = problems
        .par_iter()
        .map(|p| {
            let mut out = Vec::new();
            let orders: Vec<Vec<usize>> = (0..config.repetitions.max(1))
                .map(|r| p.hidden_order(config.seed, r))
                .collect();
            for &m in &config.m_values {
                let key = (p.dataset.clone(), p.n, m);
                if m > p.held_out {
                    log::info!(
                        "study 1: {} has {} held-out pairs, needs {m}",
                        p.problem_id,
                        p.held_out
                    );
                    out.push((key, None));
                    continue;
                }
                if p.candidates.is_empty() {
                    out.push((key, None));
                    continue;
                }
                let mut rates = Vec::new();
                let mut gammas = Vec::new();
                for order in &orders {
                    let hidden = &order[..m];
                    let survivors: Vec<&PredictionSet> = p
                        .candidates
                        .iter()
                        .filter(|c| c.passes(hidden))
                        .map(|c| &c.predictions)
                        .collect();
                    rates.push(ratio(survivors.len(), p.candidates.len()));
                    if !survivors.is_empty() {
                        gammas.push(gamma(&survivors)?);
                    }
                }
                let rate = macro_mean(&rates).expect("at least one repetition");
                out.push((key, Some((rate, macro_mean(&gammas)))));
            }
            Ok(out)
        })
        .collect();

    let mut cells: BTreeMap<CellKey, (usize, Study1Cell)> = BTreeMap::new();
    for result in per_problem {
        for (key, value) in result? {
            let entry = cells.entry(key).or_default();
            if let Some((rate, g)) = value {
                entry.0 += 1;
                entry.1.pass_rates.push(rate);
                entry.1.gammas.extend(g);
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(|((dataset, n, m), (problems, cell))| Study1Row {
            dataset,
            n,
            m,
            problems,
            pass_rate: macro_mean(&cell.pass_rates),
            survivor_gamma: macro_mean(&cell.gammas),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub chosen_id: String,
    pub rejected_id: String,
    pub chosen_score: crate::report::Exact,
    pub rejected_score: crate::report::Exact,
    pub chosen_pass: bool,
    pub rejected_pass: bool,
    pub context_ids: Vec<String>,
}

/// Orders every unordered pair of `pool` by score under `context` and
/// records whether each side passes `hidden`. Ties produce no judgment.
pub fn judge_pairs(
    pool: &[&StudyCandidate],
    context: &[&StudyCandidate],
    hidden: &[usize],
) -> Result<Vec<PairJudgment>, MetricError> {
    let ctx: Vec<&PredictionSet> = context.iter().map(|c| &c.predictions).collect();
    let scored: Vec<(BigRational, bool)> = pool
        .iter()
        .map(|c| Ok((gear_score(&c.predictions, &ctx)?, c.passes(hidden))))
        .collect::<Result<_, MetricError>>()?;
    let context_ids: Vec<String> = context.iter().map(|c| c.id.clone()).collect();
    let mut out = Vec::new();
    for a in 0..pool.len() {
        for b in (a + 1)..pool.len() {
            let (hi, lo) = match scored[a].0.cmp(&scored[b].0) {
                std::cmp::Ordering::Greater => (a, b),
                std::cmp::Ordering::Less => (b, a),
                std::cmp::Ordering::Equal => continue,
            };
            out.push(PairJudgment {
                chosen_id: pool[hi].id.clone(),
                rejected_id: pool[lo].id.clone(),
                chosen_score: scored[hi].0.clone().into(),
                rejected_score: scored[lo].0.clone().into(),
                chosen_pass: scored[hi].1,
                rejected_pass: scored[lo].1,
                context_ids: context_ids.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub pairs: usize,
    pub chosen_pass: usize,
    pub rejected_pass: usize,
}

impl PassCounts {
    fn add(&mut self, j: &PairJudgment) {
        self.pairs += 1;
        self.chosen_pass += j.chosen_pass as usize;
        self.rejected_pass += j.rejected_pass as usize;
    }

    fn merge(&mut self, other: PassCounts) {
        self.pairs += other.pairs;
        self.chosen_pass += other.chosen_pass;
        self.rejected_pass += other.rejected_pass;
    }

    /// `Pr(pass | chosen) / Pr(pass | rejected)`; `None` when the rejected
    /// side never passes or there are no pairs.
    pub fn odds_ratio(&self) -> Option<BigRational> {
        if self.pairs == 0 || self.rejected_pass == 0 {
            return None;
        }
        Some(ratio(self.chosen_pass, self.rejected_pass))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Study2Row {
    pub dataset: String,
    pub m: usize,
    /// `None` aggregates over all context sizes.
    pub c: Option<usize>,
    pub counts: PassCounts,
}

impl Study2Row {
    pub fn odds_ratio(&self) -> Option<BigRational> {
        self.counts.odds_ratio()
    }
}

fn study2_problem(
    p: &StudyProblem,
    config: &StudyConfig,
) -> Result<Vec<(CellKey, PassCounts)>, MetricError> {
    let mut out = Vec::new();
    for &m in &config.m_values {
        if m > p.held_out {
            log::info!(
                "study 2: {} has {} held-out pairs, needs {m}",
                p.problem_id,
                p.held_out
            );
            continue;
        }
        for rep in 0..config.repetitions.max(1) {
            let order = p.hidden_order(config.seed, rep);
            let hidden = &order[..m];
            let failing: Vec<usize> = (0..p.candidates.len())
                .filter(|&i| !p.candidates[i].passes(hidden))
                .collect();
            for &c in &config.context_sizes {
                let draws = if c == 0 { 1 } else { config.contexts_per_size };
                for draw in 0..draws {
                    if failing.len() < c {
                        continue;
                    }
                    let key = format!(
                        "context/{}/{}/{m}/{rep}/{c}/{draw}",
                        p.dataset, p.problem_id
                    );
                    let mut chosen: Vec<usize> = failing
                        .choose_multiple(&mut derived_rng(config.seed, &key), c)
                        .copied()
                        .collect();
                    chosen.sort_unstable();
                    let context: Vec<&StudyCandidate> =
                        chosen.iter().map(|&i| &p.candidates[i]).collect();
                    let pool: Vec<&StudyCandidate> = (0..p.candidates.len())
                        .filter(|i| !chosen.contains(i))
                        .map(|i| &p.candidates[i])
                        .collect();
                    let mut counts = PassCounts::default();
                    for j in judge_pairs(&pool, &context, hidden)? {
                        counts.add(&j);
                    }
                    out.push(((p.dataset.clone(), m, c), counts));
                }
            }
        }
    }
    Ok(out)
}

/// Aggregates pass counts over problems, repetitions, contexts and pairs.
/// Contexts are drawn uniformly among candidates failing `O_m`, which is
/// the same as drawing any context and discarding those with a passing
/// member.
pub fn run_study2(
    problems: &[StudyProblem],
    config: &StudyConfig,
) -> Result<Vec<Study2Row>, MetricError> {
    let per_problem: Vec<_> = problems
        .par_iter()
        .map(|p| study2_problem(p, config))
        .collect();
    let mut by_c: BTreeMap<CellKey, PassCounts> = BTreeMap::new();
    let mut by_m: BTreeMap<(String, usize), PassCounts> = BTreeMap::new();
    for result in per_problem {
        for ((dataset, m, c), counts) in result? {
            by_c.entry((dataset.clone(), m, c))
                .or_default()
                .merge(counts);
            by_m.entry((dataset, m)).or_default().merge(counts);
        }
    }
    let mut rows = Vec::new();
    for ((dataset, m), counts) in by_m {
        for (&(ref d, mm, c), &cc) in
            by_c.range((dataset.clone(), m, 0)..=(dataset.clone(), m, usize::MAX))
        {
            debug_assert!(d == &dataset && mm == m);
            rows.push(Study2Row {
                dataset: dataset.clone(),
                m,
                c: Some(c),
                counts: cc,
            });
        }
        rows.push(Study2Row {
            dataset,
            m,
            c: None,
            counts,
        });
    }
    Ok(rows)
}

pub fn study1_report(rows: &[Study1Row], config: &StudyConfig) -> Report {
    let mut r = Report::new(
        "gear-study1/1",
        &[
            "dataset",
            "n",
            "m",
            "problems",
            "pass_rate",
            "survivor_gamma",
        ],
    )
    .meta("seed", config.seed)
    .meta("repetitions", config.repetitions);
    for row in rows {
        r.push(vec![
            row.dataset.as_str().into(),
            row.n.into(),
            row.m.into(),
            row.problems.into(),
            no_data(&row.pass_rate),
            no_data(&row.survivor_gamma),
        ]);
    }
    r
}

fn no_data(q: &Option<BigRational>) -> Cell {
    q.clone()
        .map_or(Cell::Missing("no-data".into()), Cell::Ratio)
}

pub fn study2_report(rows: &[Study2Row], config: &StudyConfig) -> Report {
    let mut r = Report::new(
        "gear-study2/1",
        &[
            "dataset",
            "m",
            "c",
            "pairs",
            "chosen_pass",
            "rejected_pass",
            "odds_ratio",
        ],
    )
    .meta("seed", config.seed)
    .meta("repetitions", config.repetitions)
    .meta("contexts_per_size", config.contexts_per_size);
    for row in rows {
        let or = if row.counts.pairs == 0 {
            Cell::Missing("no-data".into())
        } else {
            row.odds_ratio().into()
        };
        r.push(vec![
            row.dataset.as_str().into(),
            row.m.into(),
            row.c.map_or(Cell::Text("all".into()), Cell::from),
            row.counts.pairs.into(),
            row.counts.chosen_pass.into(),
            row.counts.rejected_pass.into(),
            or,
        ]);
    }
    r
}

/// Survivor gamma never exceeds the gamma of the whole pool.
pub fn survivor_gamma_bound(p: &StudyProblem, hidden: &[usize]) -> Result<bool, MetricError> {
    let all: Vec<&PredictionSet> = p.candidates.iter().map(|c| &c.predictions).collect();
    let survivors: Vec<&PredictionSet> = p
        .candidates
        .iter()
        .filter(|c| c.passes(hidden))
        .map(|c| &c.predictions)
        .collect();
    if survivors.is_empty() {
        return Ok(true);
    }
    Ok(gamma(&survivors)? <= gamma(&all)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::values::Value;

    fn full(id: &str, vals: &[i64]) -> PredictionSet {
        PredictionSet::from_values(id, "s", vals.iter().map(|&v| Some(Value::int(v))))
    }

    fn q(n: usize, d: usize) -> BigRational {
        ratio(n, d)
    }

    #[test]
    fn marginal_gains_on_worked_example() {
        let f1 = full("f1", &[1, 2, 3]);
        let f2 = full("f2", &[1, 2, 2]);
        assert_eq!(
            marginal_gain(&f2, &[&f1], DiversityMetric::Gamma).unwrap(),
            q(1, 3)
        );
        assert_eq!(
            marginal_gain(&f2, &[&f1], DiversityMetric::Beta).unwrap(),
            q(1, 2)
        );
        assert_eq!(
            marginal_gain(&f2, &[], DiversityMetric::Gamma).unwrap(),
            q(1, 1)
        );
        assert_eq!(
            marginal_gain(&f2, &[], DiversityMetric::Beta).unwrap(),
            q(0, 1)
        );
        assert_eq!(gear_score(&f2, &[&f1]).unwrap(), q(11, 18));
    }

    #[test]
    fn duplicate_adds_no_gamma() {
        let f1 = full("f1", &[1, 2, 3]);
        let f2 = full("f2", &[1, 2, 2]);
        let dup = full("d", &[1, 2, 3]);
        assert_eq!(
            marginal_gain(&dup, &[&f1, &f2], DiversityMetric::Gamma).unwrap(),
            q(0, 1)
        );
        // β over {f1,f2} is 1/2; adding a copy of f1 gives (1/2 + 0 + 1/2)/3.
        assert_eq!(
            marginal_gain(&dup, &[&f1, &f2], DiversityMetric::Beta).unwrap(),
            q(1, 3) - q(1, 2)
        );
        assert_eq!(
            gear_score(&dup, &[&f1, &f2]).unwrap(),
            (q(1, 1) + q(1, 3) - q(1, 2)) / q(3, 1)
        );
    }

    fn candidate(id: &str, vals: &[i64], agrees: &[bool]) -> StudyCandidate {
        StudyCandidate {
            id: id.into(),
            predictions: full(id, vals),
            agrees: agrees.to_vec(),
        }
    }

    #[test]
    fn study1_counts_survivors() {
        let p = StudyProblem {
            dataset: "d".into(),
            problem_id: "p".into(),
            n: 2,
            held_out: 2,
            candidates: vec![
                candidate("a", &[1, 2], &[true, true]),
                candidate("b", &[1, 3], &[true, true]),
                candidate("c", &[0, 0], &[false, false]),
            ],
        };
        let config = StudyConfig {
            m_values: vec![0, 2, 3],
            repetitions: 3,
            ..StudyConfig::default()
        };
        let rows = run_study1(&[p], &config).unwrap();
        assert_eq!(rows[0].pass_rate, Some(q(1, 1)));
        assert_eq!(rows[1].pass_rate, Some(q(2, 3)));
        assert_eq!(rows[1].survivor_gamma, Some(q(3, 2)));
        assert_eq!(rows[2].problems, 0);
        assert_eq!(rows[2].pass_rate, None);
    }

    #[test]
    fn ties_are_skipped_and_odds_counted() {
        let a = candidate("a", &[1, 2], &[true]);
        let b = candidate("b", &[1, 2], &[false]);
        let judged = judge_pairs(&[&a, &b], &[], &[0]).unwrap();
        assert!(judged.is_empty());

        let counts = PassCounts {
            pairs: 10,
            chosen_pass: 6,
            rejected_pass: 3,
        };
        assert_eq!(counts.odds_ratio(), Some(q(2, 1)));
        let none = PassCounts {
            pairs: 4,
            chosen_pass: 2,
            rejected_pass: 0,
        };
        assert_eq!(none.odds_ratio(), None);
    }

    #[test]
    fn study2_orients_by_score() {
        // Full coverage beats partial coverage with an empty context.
        let hi = candidate("hi", &[1, 2], &[true]);
        let mut lo = candidate("lo", &[1, 2], &[false]);
        lo.predictions = PredictionSet::from_values("lo", "s", [Some(Value::int(1)), None]);
        let p = StudyProblem {
            dataset: "d".into(),
            problem_id: "p".into(),
            n: 1,
            held_out: 1,
            candidates: vec![hi, lo],
        };
        let config = StudyConfig {
            m_values: vec![1],
            repetitions: 1,
            context_sizes: vec![0],
            ..StudyConfig::default()
        };
        let rows = run_study2(&[p], &config).unwrap();
        let all = rows.iter().find(|r| r.c.is_none()).unwrap();
        assert_eq!(
            all.counts,
            PassCounts {
                pairs: 1,
                chosen_pass: 1,
                rejected_pass: 0
            }
        );
        assert_eq!(all.odds_ratio(), None);
    }

    #[test]
    fn reports_are_deterministic() {
        let rows = vec![Study1Row {
            dataset: "d".into(),
            n: 1,
            m: 1,
            problems: 0,
            pass_rate: None,
            survivor_gamma: None,
        }];
        let config = StudyConfig::default();
        let a = study1_report(&rows, &config).to_string(crate::report::ReportFormat::Table);
        assert!(a.contains("no-data"));
        assert_eq!(
            a,
            study1_report(&rows, &config).to_string(crate::report::ReportFormat::Table)
        );
    }
}
