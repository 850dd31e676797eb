//! Sample spaces: the fixed, seeded probe inputs shared by every hypothesis
//! under comparison.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, created once per
//! build and consumed stratum by stratum in ascending order. Sampling without
//! replacement inside a stratum is the prefix of a sparse Fisher-Yates
//! shuffle over the stratum's index space, so strata of size `100^15` never
//! need to be materialized.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use num_bigint::BigInt;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::values::{parse_value, Entity, ObservationSet, Value, ValueError};

pub const SPACE_SCHEMA: &str = "gear-space/1";

/// Element domain of list-function inputs is `0..LIST_ALPHABET`.
pub const LIST_ALPHABET: u128 = 100;
pub const LIST_MAX_LEN: u32 = 15;
pub const ACRE_MAX_COUNT: u32 = 8;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("requested {requested} observations but the pool holds {available}")]
    Bound { requested: usize, available: usize },
    #[error("pool for problem {0} cannot supply both an on and an off label")]
    Infeasible(String),
    #[error("duplicate input {0} in sample space")]
    Duplicate(String),
    #[error("malformed space file at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid value at line {line}: {source}")]
    Value {
        line: usize,
        #[source]
        source: ValueError,
    },
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceFamily {
    ListFunctions,
    Acre,
    GridCorpus,
}

impl SpaceFamily {
    pub fn name(self) -> &'static str {
        match self {
            SpaceFamily::ListFunctions => "list-functions",
            SpaceFamily::Acre => "acre",
            SpaceFamily::GridCorpus => "grid-corpus",
        }
    }

    pub fn from_name(name: &str) -> Option<SpaceFamily> {
        match name {
            "list-functions" => Some(SpaceFamily::ListFunctions),
            "acre" => Some(SpaceFamily::Acre),
            "grid-corpus" => Some(SpaceFamily::GridCorpus),
            _ => None,
        }
    }
}

impl fmt::Display for SpaceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a space was built. Stratified families carry a per-stratum cap and a
/// seed; corpus spaces carry the number of source files instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceRecipe {
    pub family: SpaceFamily,
    pub cap: Option<u64>,
    pub seed: Option<u64>,
    pub sources: Option<usize>,
}

impl SpaceRecipe {
    fn header(&self, size: usize) -> String {
        let mut header = format!("# {SPACE_SCHEMA} family={}", self.family);
        if let Some(seed) = self.seed {
            header.push_str(&format!(" seed={seed}"));
        }
        if let Some(cap) = self.cap {
            header.push_str(&format!(" cap={cap}"));
        }
        if let Some(sources) = self.sources {
            header.push_str(&format!(" sources={sources}"));
        }
        header.push_str(&format!(" size={size}"));
        header
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSpace {
    pub recipe: SpaceRecipe,
    inputs: Vec<Value>,
}

impl SampleSpace {
    /// Wraps an explicit input list, rejecting duplicates.
    pub fn from_inputs(recipe: SpaceRecipe, inputs: Vec<Value>) -> Result<Self, SpaceError> {
        let mut seen = HashSet::with_capacity(inputs.len());
        for v in &inputs {
            if !seen.insert(v) {
                return Err(SpaceError::Duplicate(v.canonical()));
            }
        }
        Ok(SampleSpace { recipe, inputs })
    }

    /// An ad-hoc space over the given inputs, for tests and small studies.
    pub fn adhoc(inputs: Vec<Value>) -> Result<Self, SpaceError> {
        Self::from_inputs(
            SpaceRecipe {
                family: SpaceFamily::GridCorpus,
                cap: None,
                seed: None,
                sources: Some(0),
            },
            inputs,
        )
    }

    pub fn inputs(&self) -> &[Value] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn index_map(&self) -> HashMap<&Value, usize> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect()
    }

    /// Writes the versioned space file: one header line, then one canonical
    /// input per line, `\n`-terminated.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.recipe.header(self.inputs.len()))?;
        for v in &self.inputs {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        // Writing into a Vec cannot fail.
        let _ = self.write_to(&mut buf);
        buf
    }

    /// First 16 hex digits of the SHA-256 of the space file bytes.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        hex::encode(&digest[..8])
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, SpaceError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.ok_or(SpaceError::Format {
            line: 1,
            message: "empty file".into(),
        })?;
        let recipe_err = |message: &str| SpaceError::Format {
            line: 1,
            message: message.to_string(),
        };
        let mut fields = header.split(' ');
        if fields.next() != Some("#") || fields.next() != Some(SPACE_SCHEMA) {
            return Err(recipe_err("missing gear-space/1 header"));
        }
        let mut family = None;
        let mut recipe = SpaceRecipe {
            family: SpaceFamily::GridCorpus,
            cap: None,
            seed: None,
            sources: None,
        };
        let mut size = None;
        for field in fields {
            let (key, val) = field
                .split_once('=')
                .ok_or_else(|| recipe_err("bad field"))?;
            let num = || val.parse::<u64>().map_err(|_| recipe_err("bad number"));
            match key {
                "family" => family = SpaceFamily::from_name(val),
                "seed" => recipe.seed = Some(num()?),
                "cap" => recipe.cap = Some(num()?),
                "sources" => recipe.sources = Some(num()? as usize),
                "size" => size = Some(num()? as usize),
                _ => return Err(recipe_err("unknown field")),
            }
        }
        recipe.family = family.ok_or_else(|| recipe_err("missing or unknown family"))?;
        let size = size.ok_or_else(|| recipe_err("missing size"))?;
        let mut inputs = Vec::with_capacity(size);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let value = parse_value(&line).map_err(|source| SpaceError::Value {
                line: i + 2,
                source,
            })?;
            inputs.push(value);
        }
        if inputs.len() != size {
            return Err(SpaceError::Format {
                line: inputs.len() + 2,
                message: format!("header declares {size} inputs, found {}", inputs.len()),
            });
        }
        Self::from_inputs(recipe, inputs)
    }
}

/// A generator for one named sub-task of a seeded run: the seed and key are
/// hashed together so sub-tasks draw independent, reproducible streams.
pub fn derived_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Draws `count` distinct indices uniformly from `0..population`, in draw
/// order, using a sparse Fisher-Yates shuffle.
fn sample_without_replacement(rng: &mut ChaCha8Rng, population: u128, count: u128) -> Vec<u128> {
    let count = count.min(population);
    let mut displaced: HashMap<u128, u128> = HashMap::new();
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let j = rng.gen_range(i..population);
        let picked = displaced.get(&j).copied().unwrap_or(j);
        let current = displaced.get(&i).copied().unwrap_or(i);
        displaced.insert(j, current);
        out.push(picked);
    }
    out
}

/// Writes `index` in base `radix` as exactly `digits` digits, most
/// significant first.
fn mixed_digits(mut index: u128, radix: u128, digits: u32) -> Vec<u128> {
    let mut out = vec![0; digits as usize];
    for slot in out.iter_mut().rev() {
        *slot = index % radix;
        index /= radix;
    }
    out
}

fn stratified(
    seed: u64,
    cap: u64,
    radix: u128,
    sampled_strata: std::ops::RangeInclusive<u32>,
    decode: impl Fn(Vec<u128>) -> Value,
) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![decode(Vec::new())];
    inputs.extend((0..radix).map(|d| decode(vec![d])));
    for len in sampled_strata {
        let population = radix.pow(len);
        for index in sample_without_replacement(&mut rng, population, cap as u128) {
            inputs.push(decode(mixed_digits(index, radix, len)));
        }
    }
    inputs
}

/// List-function inputs: the empty list, all 100 singletons, and for each
/// length 2..=15 up to `cap` lists over `0..100` drawn without replacement.
pub fn build_list_function_space(seed: u64, cap: u64) -> SampleSpace {
    let inputs = stratified(seed, cap, LIST_ALPHABET, 2..=LIST_MAX_LEN, |digits| {
        Value::List(
            digits
                .into_iter()
                .map(|d| Value::Int(BigInt::from(d)))
                .collect(),
        )
    });
    SampleSpace::from_inputs(
        SpaceRecipe {
            family: SpaceFamily::ListFunctions,
            cap: Some(cap),
            seed: Some(seed),
            sources: None,
        },
        inputs,
    )
    .expect("strata are disjoint by length and duplicate-free within")
}

/// ACRE inputs: ordered entity lists (repetition allowed). The empty list,
/// all 48 singletons, and up to `cap` lists for each count 2..=8.
pub fn build_acre_space(seed: u64, cap: u64) -> SampleSpace {
    let inputs = stratified(
        seed,
        cap,
        Entity::KINDS as u128,
        2..=ACRE_MAX_COUNT,
        |digits| {
            Value::List(
                digits
                    .into_iter()
                    .map(|d| Value::Entity(Entity::from_index(d as usize).expect("digit below 48")))
                    .collect(),
            )
        },
    );
    SampleSpace::from_inputs(
        SpaceRecipe {
            family: SpaceFamily::Acre,
            cap: Some(cap),
            seed: Some(seed),
            sources: None,
        },
        inputs,
    )
    .expect("strata are disjoint by count and duplicate-free within")
}

/// The first-seen-order union of every input grid in the given problem
/// files, deduplicated by canonical text.
pub fn build_corpus_space<P: AsRef<std::path::Path>>(
    corpus: &[P],
) -> Result<SampleSpace, SpaceError> {
    let problems = crate::ingest::load_corpus(corpus)?;
    let mut seen = HashSet::new();
    let mut inputs = Vec::new();
    for problem in &problems {
        for input in problem.all_inputs() {
            if seen.insert(input.clone()) {
                inputs.push(input.clone());
            }
        }
    }
    SampleSpace::from_inputs(
        SpaceRecipe {
            family: SpaceFamily::GridCorpus,
            cap: None,
            seed: None,
            sources: Some(corpus.len()),
        },
        inputs,
    )
}

/// Extra requirement on a drawn observation sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelConstraint {
    None,
    /// At least one `on` and one `off` output.
    BothOnOff,
}

const MAX_REDRAWS: usize = 100_000;

/// Draws `n` distinct pair indices from the pool, sorted ascending. With
/// [`LabelConstraint::BothOnOff`], draws are repeated from the same seeded
/// stream until the sample holds both labels.
pub fn sample_observation_indices(
    problem: &ObservationSet,
    n: usize,
    seed: u64,
    constraint: LabelConstraint,
) -> Result<Vec<usize>, SpaceError> {
    let available = problem.len();
    if n == 0 || n > available {
        return Err(SpaceError::Bound {
            requested: n,
            available,
        });
    }
    let label = |i: usize| match problem.pairs[i].output {
        Value::Bool(b) => Some(b),
        _ => None,
    };
    if constraint == LabelConstraint::BothOnOff {
        let has = |want: bool| (0..available).any(|i| label(i) == Some(want));
        if n < 2 || !has(true) || !has(false) {
            return Err(SpaceError::Infeasible(problem.problem_id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let mut picked: Vec<usize> =
            sample_without_replacement(&mut rng, available as u128, n as u128)
                .into_iter()
                .map(|i| i as usize)
                .collect();
        picked.sort_unstable();
        let ok = match constraint {
            LabelConstraint::None => true,
            LabelConstraint::BothOnOff => {
                picked.iter().any(|&i| label(i) == Some(true))
                    && picked.iter().any(|&i| label(i) == Some(false))
            }
        };
        if ok {
            return Ok(picked);
        }
    }
    Err(SpaceError::Infeasible(problem.problem_id.clone()))
}

pub fn sample_observations(
    problem: &ObservationSet,
    n: usize,
    seed: u64,
    constraint: LabelConstraint,
) -> Result<ObservationSet, SpaceError> {
    let indices = sample_observation_indices(problem, n, seed, constraint)?;
    Ok(problem.subset(&indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::values::{Observation, Split};

    #[test]
    fn degenerate_caps() {
        assert_eq!(build_list_function_space(42, 0).len(), 101);
        assert_eq!(build_acre_space(7, 1).len(), 1 + 48 + 7);
    }

    #[test]
    fn small_strata_are_exhausted() {
        // 48^2 = 2304 < 5000, so the c=2 stratum is the full cross product.
        let space = build_acre_space(1, 5000);
        let pairs = space
            .inputs()
            .iter()
            .filter(|v| matches!(v, Value::List(items) if items.len() == 2))
            .count();
        assert_eq!(pairs, 48 * 48);
    }

    #[test]
    fn acre_singletons_cover_vocabulary() {
        let space = build_acre_space(7, 3);
        let singles: HashSet<Entity> = space
            .inputs()
            .iter()
            .filter_map(|v| match v {
                Value::List(items) if items.len() == 1 => match items[0] {
                    Value::Entity(e) => Some(e),
                    _ => None,
                },
                _ => None,
            })
            .collect();
        let vocab: HashSet<Entity> = Entity::all().collect();
        assert_eq!(singles, vocab);
    }

    #[test]
    fn space_file_round_trips() {
        let space = build_list_function_space(3, 5);
        let bytes = space.to_bytes();
        assert!(bytes
            .starts_with(b"# gear-space/1 family=list-functions seed=3 cap=5 size=171\n[]\n[0]\n"));
        let back = SampleSpace::read_from(&bytes[..]).unwrap();
        assert_eq!(back, space);
        assert_eq!(back.id(), space.id());
    }

    #[test]
    fn space_file_size_mismatch_is_reported() {
        let text = "# gear-space/1 family=acre seed=1 cap=1 size=3\n[]\n";
        assert!(matches!(
            SampleSpace::read_from(text.as_bytes()),
            Err(SpaceError::Format { .. })
        ));
    }

    #[test]
    fn duplicate_inputs_rejected() {
        assert!(matches!(
            SampleSpace::adhoc(vec![Value::int(1), Value::int(1)]),
            Err(SpaceError::Duplicate(_))
        ));
    }

    #[test]
    fn sparse_shuffle_is_a_permutation_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut all = sample_without_replacement(&mut rng, 50, 50);
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    fn int_pool(n: i64) -> ObservationSet {
        ObservationSet::new(
            "p",
            (0..n).map(|i| Observation::new(Value::int(i), Value::int(i * 2))),
            Split::Pooled,
        )
    }

    #[test]
    fn observation_sampling() {
        let pool = int_pool(10);
        let a = sample_observations(&pool, 4, 3, LabelConstraint::None).unwrap();
        let b = sample_observations(&pool, 4, 3, LabelConstraint::None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let distinct: HashSet<_> = a.pairs.iter().collect();
        assert_eq!(distinct.len(), 4);

        let small = int_pool(3);
        assert_eq!(
            sample_observations(&small, 3, 0, LabelConstraint::None)
                .unwrap()
                .pairs,
            small.pairs
        );
        assert!(matches!(
            sample_observations(&small, 4, 0, LabelConstraint::None),
            Err(SpaceError::Bound {
                requested: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn acre_sampling_needs_both_labels() {
        let on = |i: i64| Observation::new(Value::int_list([i]), Value::Bool(true));
        let all_on = ObservationSet::new("a", (0..5).map(on), Split::Pooled);
        assert!(matches!(
            sample_observations(&all_on, 2, 1, LabelConstraint::BothOnOff),
            Err(SpaceError::Infeasible(_))
        ));

        let mut pairs: Vec<Observation> = (0..9).map(on).collect();
        pairs.push(Observation::new(Value::int_list([99]), Value::Bool(false)));
        let mixed = ObservationSet::new("b", pairs, Split::Pooled);
        for seed in 0..20 {
            let s = sample_observations(&mixed, 2, seed, LabelConstraint::BothOnOff).unwrap();
            assert!(s.pairs.iter().any(|p| p.output == Value::Bool(false)));
            assert!(s.pairs.iter().any(|p| p.output == Value::Bool(true)));
        }
    }
}
