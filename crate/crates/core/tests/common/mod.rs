//! Independent oracles: metrics recomputed by direct set enumeration.

#![allow(dead_code)]

use std::collections::HashSet;

use gear_core::executor::PredictionSet;
use gear_core::values::Value;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fq(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn pset(id: &str, values: &[Option<i64>]) -> PredictionSet {
    PredictionSet::from_values(id, "test-space", values.iter().map(|v| v.map(Value::int)))
}

/// The prediction set as a literal set of `(input index, value)` pairs.
pub fn pairs(p: &PredictionSet) -> HashSet<(usize, String)> {
    (0..p.len())
        .filter_map(|i| p.value(i).map(|v| (i, v.canonical())))
        .collect()
}

pub fn oracle_gamma(sets: &[&PredictionSet]) -> BigRational {
    if sets.is_empty() {
        return BigRational::zero();
    }
    let n = sets[0].len();
    let union: HashSet<(usize, String)> = sets.iter().flat_map(|p| pairs(p)).collect();
    fq(union.len() as i64, n as i64)
}

pub fn oracle_dissimilarity(a: &PredictionSet, b: &PredictionSet) -> BigRational {
    let (pa, pb) = (pairs(a), pairs(b));
    let union = pa.union(&pb).count();
    if union == 0 {
        return BigRational::zero();
    }
    BigRational::one() - fq(pa.intersection(&pb).count() as i64, union as i64)
}

pub fn oracle_beta(sets: &[&PredictionSet]) -> BigRational {
    let m = sets.len();
    if m < 2 {
        return BigRational::zero();
    }
    let mut total = BigRational::zero();
    for i in 0..m {
        for j in (i + 1)..m {
            total += oracle_dissimilarity(sets[i], sets[j]);
        }
    }
    total / fq((m * (m - 1) / 2) as i64, 1)
}

/// `k` sets over `n` inputs with values in `0..alphabet`; each entry is
/// undefined with probability `hole`.
pub fn random_sets(
    rng: &mut ChaCha8Rng,
    k: usize,
    n: usize,
    alphabet: i64,
    hole: f64,
) -> Vec<PredictionSet> {
    (0..k)
        .map(|h| {
            let values: Vec<Option<i64>> = (0..n)
                .map(|_| {
                    if rng.gen_bool(hole) {
                        None
                    } else {
                        Some(rng.gen_range(0..alphabet))
                    }
                })
                .collect();
            pset(&format!("h{h}"), &values)
        })
        .collect()
}
