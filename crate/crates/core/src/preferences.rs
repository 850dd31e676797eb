//! Preference pairs for preference-based training, labeled in three stages:
//! parsable beats unparsable, then consistent beats inconsistent, then the
//! higher GEAR score wins.

use std::collections::BTreeMap;
use std::io::Write;

use num_rational::BigRational;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::PredictionSet;
use crate::metrics::MetricError;
use crate::protocol::{render_init_prompt, render_iter_prompt, Transcript};
use crate::report::Exact;
use crate::samplespace::derived_rng;
use crate::simulation::gear_score;
use crate::values::ObservationSet;

pub const PAIRS_SCHEMA: &str = "gear-pairs/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parsing,
    Consistency,
    Gear,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Parsing, Stage::Consistency, Stage::Gear];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Parsing => "parsing",
            Stage::Consistency => "consistency",
            Stage::Gear => "gear",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// One generated attempt as seen by the pair builder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefCandidate {
    pub id: String,
    pub summary: Option<String>,
    pub reply: String,
    pub parsable: bool,
    pub consistent: bool,
    pub predictions: Option<PredictionSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefProblem {
    pub problem_id: String,
    pub observations: ObservationSet,
    pub candidates: Vec<PrefCandidate>,
}

impl PrefProblem {
    /// Every attempt of every transcript for the same problem, in order.
    pub fn from_transcripts(transcripts: &[&Transcript]) -> Option<PrefProblem> {
        let first = transcripts.first()?;
        let mut candidates = Vec::new();
        for t in transcripts {
            for a in &t.attempts {
                let id = a.hypothesis.as_ref().map_or_else(
                    || format!("{}#{}@{}", t.header.problem_id, a.index, t.header.proposer),
                    |h| format!("{}@{}", h.id, t.header.proposer),
                );
                candidates.push(PrefCandidate {
                    id,
                    summary: a.hypothesis.as_ref().map(|h| h.summary.clone()),
                    reply: a.reply.clone(),
                    parsable: a.verdict.is_parsable(),
                    consistent: a.verdict.is_consistent(),
                    predictions: a.predictions.clone(),
                });
            }
        }
        Some(PrefProblem {
            problem_id: first.header.problem_id.clone(),
            observations: first.header.observations.clone(),
            candidates,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreferenceError {
    #[error("consistent candidate {0} has no prediction set")]
    MissingPredictions(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("stage {stage} has {have} pairs, {need} requested")]
    Insufficient {
        stage: &'static str,
        have: usize,
        need: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    /// 0 when the first candidate is preferred, 1 for the second.
    pub preferred: usize,
    pub stage: Stage,
    pub scores: Option<(BigRational, BigRational)>,
}

/// The first stage that tells `a` and `b` apart, or `None`.
pub fn compare_pair(
    a: &PrefCandidate,
    b: &PrefCandidate,
    context: &[&PredictionSet],
) -> Result<Option<Judgment>, PreferenceError> {
    if a.parsable != b.parsable {
        return Ok(Some(Judgment {
            preferred: if a.parsable { 0 } else { 1 },
            stage: Stage::Parsing,
            scores: None,
        }));
    }
    if !a.parsable {
        return Ok(None);
    }
    if a.consistent != b.consistent {
        return Ok(Some(Judgment {
            preferred: if a.consistent { 0 } else { 1 },
            stage: Stage::Consistency,
            scores: None,
        }));
    }
    if !a.consistent {
        return Ok(None);
    }
    let score = |c: &PrefCandidate| -> Result<BigRational, PreferenceError> {
        let p = c
            .predictions
            .as_ref()
            .ok_or_else(|| PreferenceError::MissingPredictions(c.id.clone()))?;
        Ok(gear_score(p, context)?)
    };
    let (sa, sb) = (score(a)?, score(b)?);
    let preferred = match sa.cmp(&sb) {
        std::cmp::Ordering::Greater => 0,
        std::cmp::Ordering::Less => 1,
        std::cmp::Ordering::Equal => return Ok(None),
    };
    Ok(Some(Judgment {
        preferred,
        stage: Stage::Gear,
        scores: Some((sa, sb)),
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub problem_id: String,
    pub context_index: usize,
    pub context_ids: Vec<String>,
    pub stage: Stage,
    pub preferred_id: String,
    pub rejected_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_score: Option<Exact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_score: Option<Exact>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub parsing: usize,
    pub consistency: usize,
    pub gear: usize,
}

impl StageCounts {
    pub fn total(&self) -> usize {
        self.parsing + self.consistency + self.gear
    }

    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Parsing => self.parsing,
            Stage::Consistency => self.consistency,
            Stage::Gear => self.gear,
        }
    }

    fn bump(&mut self, stage: Stage) {
        match stage {
            Stage::Parsing => self.parsing += 1,
            Stage::Consistency => self.consistency += 1,
            Stage::Gear => self.gear += 1,
        }
    }

    pub fn of(pairs: &[PreferencePair]) -> StageCounts {
        let mut c = StageCounts::default();
        for p in pairs {
            c.bump(p.stage);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefConfig {
    pub context_sizes: Vec<usize>,
    pub contexts_per_size: usize,
    pub seed: u64,
}

impl Default for PrefConfig {
    fn default() -> Self {
        PrefConfig {
            context_sizes: vec![0, 1, 2],
            contexts_per_size: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub counts: StageCounts,
    pub skipped: Vec<(String, String)>,
}

/// Contexts for one problem: the empty context once, then
/// `contexts_per_size` seeded draws of each positive size from the
/// consistent candidates.
fn contexts(problem: &PrefProblem, config: &PrefConfig) -> Vec<Vec<usize>> {
    let consistent: Vec<usize> = (0..problem.candidates.len())
        .filter(|&i| problem.candidates[i].consistent)
        .collect();
    let mut out = Vec::new();
    for &c in &config.context_sizes {
        if c == 0 {
            out.push(Vec::new());
            continue;
        }
        if consistent.len() < c {
            continue;
        }
        for draw in 0..config.contexts_per_size {
            let key = format!("pref-context/{}/{c}/{draw}", problem.problem_id);
            let mut picked: Vec<usize> = consistent
                .choose_multiple(&mut derived_rng(config.seed, &key), c)
                .copied()
                .collect();
            picked.sort_unstable();
            out.push(picked);
        }
    }
    out
}

fn problem_pairs(
    problem: &PrefProblem,
    config: &PrefConfig,
) -> Result<Vec<PreferencePair>, PreferenceError> {
    let mut out = Vec::new();
    for (ci, ctx) in contexts(problem, config).into_iter().enumerate() {
        let ctx_sets: Vec<&PredictionSet> = ctx
            .iter()
            .map(|&i| {
                let c = &problem.candidates[i];
                c.predictions
                    .as_ref()
                    .ok_or_else(|| PreferenceError::MissingPredictions(c.id.clone()))
            })
            .collect::<Result<_, _>>()?;
        let prompt = if ctx.is_empty() {
            render_init_prompt(&problem.observations)
        } else {
            let summaries: Vec<&str> = ctx
                .iter()
                .map(|&i| problem.candidates[i].summary.as_deref().unwrap_or_default())
                .collect();
            render_iter_prompt(&problem.observations, &summaries)
        };
        let context_ids: Vec<String> = ctx
            .iter()
            .map(|&i| problem.candidates[i].id.clone())
            .collect();
        let pool: Vec<&PrefCandidate> = (0..problem.candidates.len())
            .filter(|i| !ctx.contains(i))
            .map(|i| &problem.candidates[i])
            .collect();
        for a in 0..pool.len() {
            for b in (a + 1)..pool.len() {
                let Some(j) = compare_pair(pool[a], pool[b], &ctx_sets)? else {
                    continue;
                };
                let (win, lose) = if j.preferred == 0 {
                    (pool[a], pool[b])
                } else {
                    (pool[b], pool[a])
                };
                let (cs, rs) = match j.scores {
                    Some((sa, sb)) if j.preferred == 0 => (Some(Exact(sa)), Some(Exact(sb))),
                    Some((sa, sb)) => (Some(Exact(sb)), Some(Exact(sa))),
                    None => (None, None),
                };
                out.push(PreferencePair {
                    problem_id: problem.problem_id.clone(),
                    context_index: ci,
                    context_ids: context_ids.clone(),
                    stage: j.stage,
                    preferred_id: win.id.clone(),
                    rejected_id: lose.id.clone(),
                    prompt: prompt.clone(),
                    chosen: win.reply.clone(),
                    rejected: lose.reply.clone(),
                    chosen_score: cs,
                    rejected_score: rs,
                });
            }
        }
    }
    Ok(out)
}

/// Pairs for every problem, ordered by problem id, then context, then pair.
/// Problems with missing prediction sets are skipped and listed.
pub fn build_preference_dataset(
    problems: &[PrefProblem],
    config: &PrefConfig,
) -> PreferenceDataset {
    let mut sorted: Vec<&PrefProblem> = problems.iter().collect();
    sorted.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let results: Vec<_> = sorted
        .par_iter()
        .map(|p| (p, problem_pairs(p, config)))
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in results {
        match r {
            Ok(mut ps) => pairs.append(&mut ps),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.problem_id);
                skipped.push((p.problem_id.clone(), e.to_string()));
            }
        }
    }
    let counts = StageCounts::of(&pairs);
    PreferenceDataset {
        pairs,
        counts,
        skipped,
    }
}

/// Draws `total` pairs split evenly across stages; any remainder goes to
/// the higher-priority stages. Selected pairs keep their stream order.
pub fn sample_balanced(
    pairs: &[PreferencePair],
    total: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>, PreferenceError> {
    let mut by_stage: BTreeMap<Stage, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_stage.entry(p.stage).or_default().push(i);
    }
    let mut chosen = Vec::with_capacity(total);
    for (k, stage) in Stage::ALL.into_iter().enumerate() {
        let need = total / 3 + usize::from(k < total % 3);
        let pool = by_stage.remove(&stage).unwrap_or_default();
        if pool.len() < need {
            return Err(PreferenceError::Insufficient {
                stage: stage.name(),
                have: pool.len(),
                need,
            });
        }
        let mut rng = derived_rng(seed, &format!("balanced/{}", stage.name()));
        chosen.extend(
            index::sample(&mut rng, pool.len(), need)
                .into_iter()
                .map(|j| pool[j]),
        );
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pairs[i].clone()).collect())
}

pub fn write_pairs<W: Write>(
    pairs: &[PreferencePair],
    seed: u64,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "{}",
        serde_json::json!({"schema": PAIRS_SCHEMA, "seed": seed, "pairs": pairs.len()})
    )?;
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
