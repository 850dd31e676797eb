//! Consistency, generalizability, novelty and diversity of hypothesis sets.
//!
//! A prediction set is the set of `(input, output)` pairs where a hypothesis
//! is defined. All metric values are exact rationals.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{Outcome, PredictionSet};
use crate::report::{ratio, Exact};
use crate::values::{equal_values, ObservationSet, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric undefined over an empty sample space")]
    EmptySpace,
    #[error("prediction sets are not aligned: {0}")]
    Alignment(String),
    #[error("gamma {gamma} outside [1, {k}]")]
    Domain { k: usize, gamma: String },
    #[error("bounds need at least two hypotheses, got {0}")]
    TooFew(usize),
}

/// The default non-novelty threshold, 4/5.
pub fn novelty_threshold() -> BigRational {
    ratio(4, 5)
}

fn check_aligned(preds: &[&PredictionSet]) -> Result<usize, MetricError> {
    let Some(first) = preds.first() else {
        return Ok(0);
    };
    for p in &preds[1..] {
        if p.len() != first.len() {
            return Err(MetricError::Alignment(format!(
                "{} has {} outcomes, {} has {}",
                first.hypothesis_id,
                first.len(),
                p.hypothesis_id,
                p.len()
            )));
        }
        if p.space_id != first.space_id {
            return Err(MetricError::Alignment(format!(
                "{} is over space {}, {} over {}",
                first.hypothesis_id, first.space_id, p.hypothesis_id, p.space_id
            )));
        }
    }
    Ok(first.len())
}

/// Indices of observations that `outcomes` fails to reproduce. Outcomes are
/// aligned with `obs.pairs`; anything other than a defined, equal value is a
/// violation.
pub fn check_consistency(outcomes: &[Outcome], obs: &ObservationSet) -> Vec<usize> {
    obs.pairs
        .iter()
        .enumerate()
        .filter(|(i, pair)| match outcomes.get(*i) {
            Some(Outcome::Defined(v)) => !equal_values(v, &pair.output),
            _ => true,
        })
        .map(|(i, _)| i)
        .collect()
}

/// Fraction of the space where the hypothesis is defined.
pub fn generalizability(pred: &PredictionSet) -> Result<BigRational, MetricError> {
    if pred.is_empty() {
        return Err(MetricError::EmptySpace);
    }
    Ok(ratio(pred.defined_count(), pred.len()))
}

/// Average number of distinct defined predictions per input. An empty list
/// has gamma 0.
pub fn gamma(preds: &[&PredictionSet]) -> Result<BigRational, MetricError> {
    let n = check_aligned(preds)?;
    if preds.is_empty() {
        return Ok(BigRational::zero());
    }
    if n == 0 {
        return Err(MetricError::EmptySpace);
    }
    let union: usize = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| distinct_at(preds, i))
        .sum();
    Ok(ratio(union, n))
}

fn distinct_at(preds: &[&PredictionSet], i: usize) -> usize {
    let mut seen: Vec<&Value> = Vec::with_capacity(preds.len());
    for p in preds {
        if let Some(v) = p.value(i) {
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
    }
    seen.len()
}

/// `|P1 ∩ P2|` and `|P1 ∪ P2|` over defined pairs.
pub fn intersection_union(
    a: &PredictionSet,
    b: &PredictionSet,
) -> Result<(usize, usize), MetricError> {
    check_aligned(&[a, b])?;
    let shared = (0..a.len())
        .filter(|&i| matches!((a.value(i), b.value(i)), (Some(x), Some(y)) if x == y))
        .count();
    Ok((shared, a.defined_count() + b.defined_count() - shared))
}

/// `1 − |P1 ∩ P2| / |P1 ∪ P2|`, and 0 when both sets are empty.
pub fn jaccard(a: &PredictionSet, b: &PredictionSet) -> Result<BigRational, MetricError> {
    let (shared, union) = intersection_union(a, b)?;
    if union == 0 {
        return Ok(BigRational::zero());
    }
    Ok(BigRational::one() - ratio(shared, union))
}

/// Symmetric matrix of pairwise Jaccard dissimilarities.
pub fn pairwise_jaccard(preds: &[&PredictionSet]) -> Result<Vec<Vec<BigRational>>, MetricError> {
    check_aligned(preds)?;
    let m = preds.len();
    let upper: Vec<Vec<BigRational>> = (0..m)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..m)
                .map(|j| jaccard(preds[i], preds[j]).expect("aligned above"))
                .collect()
        })
        .collect();
    let mut matrix = vec![vec![BigRational::zero(); m]; m];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, d) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            matrix[j][i] = d.clone();
            matrix[i][j] = d;
        }
    }
    Ok(matrix)
}

fn mean_upper(matrix: &[Vec<BigRational>]) -> BigRational {
    let m = matrix.len();
    if m < 2 {
        return BigRational::zero();
    }
    let mut sum = BigRational::zero();
    for (i, row) in matrix.iter().enumerate() {
        for d in &row[i + 1..] {
            sum += d;
        }
    }
    sum / BigRational::from_integer(BigInt::from(m * (m - 1) / 2))
}

/// Mean pairwise Jaccard dissimilarity; 0 for fewer than two hypotheses.
pub fn beta(preds: &[&PredictionSet]) -> Result<BigRational, MetricError> {
    Ok(mean_upper(&pairwise_jaccard(preds)?))
}

/// Fraction of inputs where `pred` is defined and some prior makes the same
/// prediction. With no priors this is 0.
pub fn novelty_coverage(
    pred: &PredictionSet,
    priors: &[&PredictionSet],
) -> Result<BigRational, MetricError> {
    let mut all = vec![pred];
    all.extend_from_slice(priors);
    check_aligned(&all)?;
    if pred.is_empty() {
        return Err(MetricError::EmptySpace);
    }
    let covered = (0..pred.len())
        .filter(|&i| match pred.value(i) {
            Some(v) => priors.iter().any(|p| p.value(i) == Some(v)),
            None => false,
        })
        .count();
    Ok(ratio(covered, pred.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    Good,
    BadFormat,
    BadInconsistent,
    BadNonNovel,
}

impl VerdictKind {
    pub fn name(self) -> &'static str {
        match self {
            VerdictKind::Good => "good",
            VerdictKind::BadFormat => "bad-format",
            VerdictKind::BadInconsistent => "bad-inconsistent",
            VerdictKind::BadNonNovel => "bad-non-novel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Verdict {
    Good { coverage: Exact },
    BadFormat { message: String },
    BadInconsistent { violations: Vec<usize> },
    BadNonNovel { coverage: Exact },
}

impl Verdict {
    pub fn kind(&self) -> VerdictKind {
        match self {
            Verdict::Good { .. } => VerdictKind::Good,
            Verdict::BadFormat { .. } => VerdictKind::BadFormat,
            Verdict::BadInconsistent { .. } => VerdictKind::BadInconsistent,
            Verdict::BadNonNovel { .. } => VerdictKind::BadNonNovel,
        }
    }

    pub fn is_bad(&self) -> bool {
        self.kind() != VerdictKind::Good
    }

    pub fn is_parsable(&self) -> bool {
        self.kind() != VerdictKind::BadFormat
    }

    /// Parsable and consistent with the observations, novel or not.
    pub fn is_consistent(&self) -> bool {
        matches!(self.kind(), VerdictKind::Good | VerdictKind::BadNonNovel)
    }
}

/// Applies the checks in order: format, then consistency, then novelty.
pub fn classify(
    format_error: Option<&str>,
    violations: &[usize],
    coverage: &BigRational,
    threshold: &BigRational,
) -> Verdict {
    if let Some(message) = format_error {
        return Verdict::BadFormat {
            message: message.to_string(),
        };
    }
    if !violations.is_empty() {
        return Verdict::BadInconsistent {
            violations: violations.to_vec(),
        };
    }
    if coverage >= threshold {
        Verdict::BadNonNovel {
            coverage: Exact(coverage.clone()),
        }
    } else {
        Verdict::Good {
            coverage: Exact(coverage.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub m: usize,
    pub gamma: Exact,
    pub beta: Exact,
    pub pairwise: Vec<Vec<Exact>>,
}

pub fn diversity_report(preds: &[&PredictionSet]) -> Result<DiversityReport, MetricError> {
    let g = gamma(preds)?;
    let matrix = pairwise_jaccard(preds)?;
    let b = mean_upper(&matrix);
    Ok(DiversityReport {
        m: preds.len(),
        gamma: Exact(g),
        beta: Exact(b),
        pairwise: matrix
            .into_iter()
            .map(|row| row.into_iter().map(Exact).collect())
            .collect(),
    })
}

/// Lower and upper bounds on beta implied by gamma for `k` equal-size sets.
pub fn gamma_beta_bounds(
    k: usize,
    gamma: &BigRational,
) -> Result<(BigRational, BigRational), MetricError> {
    if k < 2 {
        return Err(MetricError::TooFew(k));
    }
    let kq = BigRational::from_integer(BigInt::from(k));
    let one = BigRational::one();
    let two = BigRational::from_integer(BigInt::from(2));
    if *gamma < one || *gamma > kq {
        return Err(MetricError::Domain {
            k,
            gamma: crate::report::fraction(gamma),
        });
    }
    let lower = &two * (gamma - &one) / (&kq + gamma - &two);
    let upper = &two * &kq * (gamma - &one) / (&two * &kq * gamma - gamma - &kq);
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIntersection {
    pub i: usize,
    pub j: usize,
    pub t: usize,
}

/// The multiplicity bookkeeping behind the gamma/beta bounds, with each
/// identity recomputed independently and checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundsCertificate {
    pub k: usize,
    pub n: usize,
    pub gamma: Exact,
    pub beta: Exact,
    pub lower: Exact,
    pub upper: Exact,
    pub reuse: Exact,
    pub union: usize,
    pub sum_c: usize,
    pub sum_c_sq: usize,
    pub intersections: Vec<PairIntersection>,
    pub total_intersection: usize,
    pub mean_intersection: Exact,
    pub double_counting_holds: bool,
    pub intersection_identity_holds: bool,
    pub bounds_hold: bool,
}

impl BoundsCertificate {
    pub fn holds(&self) -> bool {
        self.double_counting_holds && self.intersection_identity_holds && self.bounds_hold
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Certificate {
    Applicable(Box<BoundsCertificate>),
    Inapplicable { reason: String },
}

pub fn bounds_certificate(preds: &[&PredictionSet]) -> Result<Certificate, MetricError> {
    let n = check_aligned(preds)?;
    let k = preds.len();
    if k < 2 {
        return Ok(Certificate::Inapplicable {
            reason: format!("needs at least two hypotheses, got {k}"),
        });
    }
    if n == 0 {
        return Err(MetricError::EmptySpace);
    }
    if let Some(p) = preds.iter().find(|p| !p.is_fully_defined()) {
        return Ok(Certificate::Inapplicable {
            reason: format!(
                "{} is defined on {} of {} inputs; the bounds assume equal-size prediction sets",
                p.hypothesis_id,
                p.defined_count(),
                n
            ),
        });
    }

    // Multiplicity of each distinct prediction pair.
    let mut multiplicity: HashMap<(usize, &Value), usize> = HashMap::new();
    for p in preds {
        for i in 0..n {
            *multiplicity
                .entry((i, p.value(i).expect("fully defined")))
                .or_default() += 1;
        }
    }
    let union = multiplicity.len();
    let sum_c: usize = multiplicity.values().sum();
    let sum_c_sq: usize = multiplicity.values().map(|c| c * c).sum();
    let choose2: usize = multiplicity.values().map(|c| c * (c - 1) / 2).sum();

    let mut intersections = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let (t, _) = intersection_union(preds[i], preds[j])?;
            intersections.push(PairIntersection { i, j, t });
        }
    }
    let total_intersection: usize = intersections.iter().map(|p| p.t).sum();

    let g = gamma(preds)?;
    let b = beta(preds)?;
    let (lower, upper) = gamma_beta_bounds(k, &g)?;
    let bounds_hold = lower <= b && b <= upper;
    let reuse = BigRational::from_integer(BigInt::from(k)) / &g;
    Ok(Certificate::Applicable(Box::new(BoundsCertificate {
        k,
        n,
        gamma: Exact(g),
        beta: Exact(b),
        lower: Exact(lower),
        upper: Exact(upper),
        reuse: Exact(reuse),
        union,
        sum_c,
        sum_c_sq,
        mean_intersection: Exact(ratio(total_intersection, k * (k - 1) / 2)),
        intersections,
        total_intersection,
        double_counting_holds: sum_c == k * n,
        intersection_identity_holds: choose2 == total_intersection
            && 2 * choose2 == sum_c_sq - k * n,
        bounds_hold,
    })))
}
