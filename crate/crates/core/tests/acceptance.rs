//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gear_core::curriculum::{read_loss_log, replay_schedule, CurriculumParams, TrajectoryPoint};
use gear_core::executor::{
    compute_prediction_set, Evaluator, ExecLimits, Hypothesis, PredictionSet,
};
use gear_core::metrics::{
    beta, bounds_certificate, classify, gamma, gamma_beta_bounds, generalizability,
    novelty_coverage, novelty_threshold, Certificate, VerdictKind,
};
use gear_core::preferences::{
    build_preference_dataset, PrefCandidate, PrefConfig, PrefProblem, Stage,
};
use gear_core::protocol::{LoopConfig, LoopContext, ScriptedProposer, StopReason};
use gear_core::samplespace::{
    build_acre_space, build_corpus_space, build_list_function_space, SampleSpace,
};
use gear_core::simulation::{
    judge_pairs, run_study1, run_study2, PassCounts, StudyCandidate, StudyConfig, StudyProblem,
};
use gear_core::values::{Observation, ObservationSet, Split, Value};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fq, oracle_beta, oracle_gamma, pairs, pset, random_sets};

enum Status {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn worked_example() -> Check {
    let f1 = pset("f1", &[Some(1), Some(2), Some(3)]);
    let f2 = pset("f2", &[Some(1), Some(2), Some(2)]);
    let sets = [&f1, &f2];
    // Warm the thread pool so the timed run measures the metrics alone.
    let _ = gamma(&sets);
    let start = Instant::now();
    let g1 = generalizability(&f1).map_err(|e| e.to_string())?;
    let g2 = generalizability(&f2).map_err(|e| e.to_string())?;
    let gm = gamma(&sets).map_err(|e| e.to_string())?;
    let bt = beta(&sets).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(g1.is_one() && g2.is_one(), || format!("G = {g1}, {g2}"))?;
    ensure(gm == fq(4, 3), || format!("gamma = {gm}"))?;
    ensure(bt == fq(1, 2), || format!("beta = {bt}"))?;
    ensure(
        gm == oracle_gamma(&sets) && bt == oracle_beta(&sets),
        || "oracle mismatch".into(),
    )?;
    ensure(elapsed < Duration::from_millis(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("G=1,1 gamma=4/3 beta=1/2 in {elapsed:?}"))
}

fn corpus_count(var: &str) -> Option<Result<usize, String>> {
    let raw = std::env::var(var).ok().filter(|v| !v.is_empty())?;
    let paths: Vec<PathBuf> = std::env::split_paths(&raw).collect();
    Some(
        build_corpus_space(&paths)
            .map(|s| s.len())
            .map_err(|e| e.to_string()),
    )
}

fn space_cardinalities() -> Result<Status, String> {
    let lf = build_list_function_space(7, 1000);
    let acre = build_acre_space(7, 1000);
    ensure(lf.len() == 14_101, || {
        format!("list-functions size {}", lf.len())
    })?;
    ensure(acre.len() == 7_049, || format!("acre size {}", acre.len()))?;
    ensure(
        lf.to_bytes() == build_list_function_space(7, 1000).to_bytes(),
        || "list-functions rebuild differs".into(),
    )?;
    ensure(
        acre.to_bytes() == build_acre_space(7, 1000).to_bytes(),
        || "acre rebuild differs".into(),
    )?;
    ensure(
        lf.to_bytes() != build_list_function_space(8, 1000).to_bytes(),
        || "seed has no effect".into(),
    )?;
    let reread = SampleSpace::read_from(&lf.to_bytes()[..]).map_err(|e| e.to_string())?;
    ensure(reread == lf, || "file round trip differs".into())?;
    let base = "sizes 14101/7049, byte-identical rebuilds";
    let mut corpus = Vec::new();
    for (var, want) in [("GEAR_MINI_ARC", 767), ("GEAR_ARC2025", 4_826)] {
        match corpus_count(var) {
            None => corpus.push(None),
            Some(Ok(n)) if n == want => corpus.push(Some(format!("{var}={n}"))),
            Some(Ok(n)) => return Err(format!("{var}: {n} distinct grids, expected {want}")),
            Some(Err(e)) => return Err(format!("{var}: {e}")),
        }
    }
    if corpus.iter().all(Option::is_some) {
        let found: Vec<String> = corpus.into_iter().flatten().collect();
        Ok(Status::Pass(format!("{base}; corpus {}", found.join(" "))))
    } else {
        Ok(Status::Skip(format!(
            "{base}; corpus dedup SKIPPED (set GEAR_MINI_ARC and GEAR_ARC2025 to the corpus directories)"
        )))
    }
}

fn appendix_d() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD);
    let mut instances = 0;
    let mut check = |sets: &[PredictionSet]| -> Result<(), String> {
        let refs: Vec<&PredictionSet> = sets.iter().collect();
        let k = refs.len();
        let n = refs[0].len();
        let mut multiplicity = std::collections::HashMap::new();
        for p in &refs {
            for pair in pairs(p) {
                *multiplicity.entry(pair).or_insert(0usize) += 1;
            }
        }
        let sum_c: usize = multiplicity.values().sum();
        let choose2: usize = multiplicity.values().map(|c| c * (c - 1) / 2).sum();
        let mut total_i = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                total_i += pairs(refs[i]).intersection(&pairs(refs[j])).count();
            }
        }
        let g = oracle_gamma(&refs);
        let b = oracle_beta(&refs);
        let kq = fq(k as i64, 1);
        let two = fq(2, 1);
        let lower = &two * (&g - BigRational::one()) / (&kq + &g - &two);
        let upper = &two * &kq * (&g - BigRational::one()) / (&two * &kq * &g - &g - &kq);
        ensure(sum_c == k * n, || {
            format!("sum c = {sum_c}, k|S| = {}", k * n)
        })?;
        ensure(choose2 == total_i, || {
            format!("I = {total_i}, sum C(c,2) = {choose2}")
        })?;
        ensure(lower <= b && b <= upper, || {
            format!("k={k} gamma={g} beta={b} outside [{lower}, {upper}]")
        })?;
        let Certificate::Applicable(cert) = bounds_certificate(&refs).map_err(|e| e.to_string())?
        else {
            return Err("certificate inapplicable on a fully defined instance".into());
        };
        ensure(cert.holds(), || "certificate reports a violation".into())?;
        ensure(cert.gamma.0 == g && cert.beta.0 == b, || {
            "certificate metrics differ from oracle".into()
        })?;
        ensure(cert.lower.0 == lower && cert.upper.0 == upper, || {
            "certificate bounds differ".into()
        })?;
        instances += 1;
        Ok(())
    };
    for _ in 0..10_000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=8);
        let alphabet = rng.gen_range(1..=(k as i64 + 1));
        check(&random_sets(&mut rng, k, n, alphabet, 0.0))?;
    }
    let mut extremes = 0;
    for k in 2..=6usize {
        for n in 1..=8usize {
            let same: Vec<PredictionSet> = (0..k)
                .map(|h| pset(&format!("s{h}"), &vec![Some(0); n]))
                .collect();
            let apart: Vec<PredictionSet> = (0..k)
                .map(|h| pset(&format!("d{h}"), &vec![Some(h as i64); n]))
                .collect();
            check(&same)?;
            check(&apart)?;
            for (sets, g, b) in [
                (&same, fq(1, 1), BigRational::zero()),
                (&apart, fq(k as i64, 1), BigRational::one()),
            ] {
                let refs: Vec<&PredictionSet> = sets.iter().collect();
                let (lo, hi) = gamma_beta_bounds(k, &g).map_err(|e| e.to_string())?;
                ensure(gamma(&refs).unwrap() == g, || {
                    format!("extreme gamma at k={k}")
                })?;
                ensure(beta(&refs).unwrap() == b && lo == b && hi == b, || {
                    format!("bounds not tight at k={k}, gamma={g}")
                })?;
                extremes += 1;
            }
        }
    }
    Ok(format!(
        "{instances} instances, {extremes} tight extremes, identities and envelope exact in {:?}",
        start.elapsed()
    ))
}

fn metric_ranges() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
    let mut checked = 0;
    for k in 0..=4usize {
        for n in 1..=5usize {
            for trial in 0..400 {
                let hole = if trial % 2 == 0 { 0.0 } else { 0.3 };
                let alphabet = rng.gen_range(1..=4);
                let sets = random_sets(&mut rng, k, n, alphabet, hole);
                let refs: Vec<&PredictionSet> = sets.iter().collect();
                let g = gamma(&refs).map_err(|e| e.to_string())?;
                let b = beta(&refs).map_err(|e| e.to_string())?;
                ensure(g == oracle_gamma(&refs), || {
                    format!("gamma {g} vs oracle at k={k} n={n}")
                })?;
                ensure(b == oracle_beta(&refs), || {
                    format!("beta {b} vs oracle at k={k} n={n}")
                })?;
                let m = fq(k as i64, 1);
                let full = refs.iter().all(|p| p.is_fully_defined());
                let floor = if full && k > 0 {
                    BigRational::one()
                } else {
                    BigRational::zero()
                };
                ensure(g >= floor && g <= m, || {
                    format!("gamma {g} outside range at k={k}")
                })?;
                ensure(b >= BigRational::zero() && b <= BigRational::one(), || {
                    format!("beta {b} outside [0,1]")
                })?;
                ensure(k >= 2 || b.is_zero(), || format!("beta {b} with m={k}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} instances match enumeration oracle, ranges hold in {:?}",
        start.elapsed()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Planned {
    Good,
    Unparsable,
    BadSyntax,
    Inconsistent,
    Duplicate,
}

fn stopping_rule() -> Check {
    let obs = ObservationSet::new(
        "stop",
        [Observation::new(Value::int_list([0]), Value::int_list([0]))],
        Split::Pooled,
    );
    let space = SampleSpace::adhoc((1..=10).map(|i| Value::int_list([i])).collect())
        .map_err(|e| e.to_string())?;
    let evaluator = Evaluator::new(ExecLimits::default(), 2);
    let ctx = LoopContext {
        evaluator: &evaluator,
        space: &space,
        config: LoopConfig::default(),
    };
    let reply = |s: &str, src: &str| format!("({s:?}, {src:?})");
    let good_src = |k: usize| format!("if contains(x, 0) then [0] else [last(x) + {}]", 1000 + k);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5709);
    for seq in 0..100 {
        let mut replies = Vec::new();
        let mut expected = Vec::new();
        let mut goods = 0usize;
        for _ in 0..12 {
            let mut plan = match rng.gen_range(0..9) {
                0..=3 => Planned::Good,
                4 => Planned::Unparsable,
                5 => Planned::BadSyntax,
                6 => Planned::Inconsistent,
                _ => Planned::Duplicate,
            };
            if plan == Planned::Duplicate && goods == 0 {
                plan = Planned::Good;
            }
            let (text, kind) = match plan {
                Planned::Good => {
                    goods += 1;
                    (
                        reply(&format!("shift {goods}"), &good_src(goods)),
                        VerdictKind::Good,
                    )
                }
                Planned::Unparsable => ("I think it adds one.".to_string(), VerdictKind::BadFormat),
                Planned::BadSyntax => (reply("broken", "[last(x) +"), VerdictKind::BadFormat),
                Planned::Inconsistent => (reply("constant", "[1]"), VerdictKind::BadInconsistent),
                Planned::Duplicate => {
                    let k = rng.gen_range(1..=goods);
                    (reply("again", &good_src(k)), VerdictKind::BadNonNovel)
                }
            };
            replies.push(text);
            expected.push(kind);
        }
        let third_bad = expected
            .iter()
            .enumerate()
            .filter(|(_, k)| **k != VerdictKind::Good)
            .nth(2)
            .map(|(i, _)| i);
        let (want_len, want_stop) = match third_bad {
            Some(i) => (i + 1, StopReason::ThreeBad),
            None => (expected.len(), StopReason::ProposerExhausted),
        };
        let mut proposer = ScriptedProposer::new(replies);
        let mut sink = Vec::new();
        let t = ctx
            .run(&obs, &mut proposer, &mut sink)
            .map_err(|e| e.to_string())?;
        let got: Vec<VerdictKind> = t.attempts.iter().map(|a| a.verdict.kind()).collect();
        ensure(got == expected[..want_len], || {
            format!(
                "sequence {seq}: verdicts {got:?} vs {:?}",
                &expected[..want_len]
            )
        })?;
        ensure(t.stop.as_ref() == Some(&want_stop), || {
            format!("sequence {seq}: stop {:?}", t.stop)
        })?;
    }

    let threshold = novelty_threshold();
    let prior = pset("prior", &(0..10).map(Some).collect::<Vec<_>>());
    for (agree, want) in [
        (8, VerdictKind::BadNonNovel),
        (7, VerdictKind::Good),
        (10, VerdictKind::BadNonNovel),
        (0, VerdictKind::Good),
    ] {
        let cand = pset(
            "cand",
            &(0..10)
                .map(|i| Some(if i < agree { i } else { -1 - i }))
                .collect::<Vec<_>>(),
        );
        let cov = novelty_coverage(&cand, &[&prior]).map_err(|e| e.to_string())?;
        ensure(cov == fq(agree, 10), || {
            format!("coverage {cov} for {agree}/10")
        })?;
        let kind = classify(None, &[], &cov, &threshold).kind();
        ensure(kind == want, || {
            format!("cov {agree}/10 classified {kind:?}")
        })?;
    }
    for (cut, want) in [(8, VerdictKind::BadNonNovel), (7, VerdictKind::Good)] {
        let replies = vec![
            reply("identity", "[last(x)]"),
            reply(
                "mostly identity",
                &format!("if last(x) <= {cut} then [last(x)] else [0 - last(x)]"),
            ),
        ];
        let t = ctx
            .run(&obs, &mut ScriptedProposer::new(replies), &mut Vec::new())
            .map_err(|e| e.to_string())?;
        let kind = t.attempts[1].verdict.kind();
        ensure(kind == want, || {
            format!("loop boundary {cut}/10 gave {kind:?}")
        })?;
    }
    Ok("100 sequences stop at the third bad verdict; cov 8/10 bad, 7/10 good".into())
}

fn candidate(id: &str, values: &[Option<i64>], agrees: Vec<bool>) -> StudyCandidate {
    StudyCandidate {
        id: id.into(),
        predictions: pset(id, values),
        agrees,
    }
}

fn study_problem(id: &str, held_out: usize, candidates: Vec<StudyCandidate>) -> StudyProblem {
    StudyProblem {
        dataset: "synthetic".into(),
        problem_id: id.into(),
        n: 3,
        held_out,
        candidates,
    }
}

fn oracle_score(f: &PredictionSet, ctx: &[&PredictionSet]) -> BigRational {
    let mut with = ctx.to_vec();
    with.push(f);
    let g = fq(f.defined_count() as i64, f.len() as i64);
    (g + oracle_gamma(&with) - oracle_gamma(ctx) + oracle_beta(&with) - oracle_beta(ctx)) / fq(3, 1)
}

fn simulation() -> Check {
    // Study 1: every candidate agrees on all held-out pairs or on none, so
    // pass rates do not depend on which pairs are hidden.
    let all = |h: usize| vec![true; h];
    let none = |h: usize| vec![false; h];
    let p1 = study_problem(
        "a",
        4,
        vec![
            candidate("a1", &[Some(1), Some(2), Some(3)], all(4)),
            candidate("a2", &[Some(1), Some(5), None], all(4)),
            candidate("a3", &[Some(9), Some(9), Some(9)], none(4)),
            candidate("a4", &[Some(1), Some(2), Some(3)], none(4)),
        ],
    );
    let p2 = study_problem(
        "b",
        4,
        vec![
            candidate("b1", &[Some(0), None, None], all(4)),
            candidate("b2", &[Some(1), Some(1), Some(1)], none(4)),
            candidate(
                "b3",
                &[Some(2), Some(2), Some(2)],
                vec![false, true, true, true],
            ),
        ],
    );
    let p3 = study_problem(
        "c",
        2,
        vec![candidate("c1", &[Some(0), Some(0), Some(0)], all(2))],
    );
    let config = StudyConfig {
        m_values: vec![1, 2, 3, 4],
        repetitions: 5,
        ..StudyConfig::default()
    };
    let g_a = oracle_gamma(&[&p1.candidates[0].predictions, &p1.candidates[1].predictions]);
    let g_b = oracle_gamma(&[&p2.candidates[0].predictions]);
    let g_c = fq(1, 1);
    // `c` has two held-out pairs, so it only counts for m <= 2.
    let rows = run_study1(&[p1.clone(), p3.clone()], &config).map_err(|e| e.to_string())?;
    ensure(rows.len() == 4, || format!("{} study 1 rows", rows.len()))?;
    for row in &rows {
        let (problems, rate, g) = if row.m <= 2 {
            (
                2,
                (fq(1, 2) + fq(1, 1)) / fq(2, 1),
                (&g_a + &g_c) / fq(2, 1),
            )
        } else {
            (1, fq(1, 2), g_a.clone())
        };
        ensure(row.problems == problems, || {
            format!("m={} counted {} problems", row.m, row.problems)
        })?;
        ensure(row.pass_rate == Some(rate), || {
            format!("m={} pass rate {:?}", row.m, row.pass_rate)
        })?;
        ensure(row.survivor_gamma == Some(g), || {
            format!("m={} survivor gamma {:?}", row.m, row.survivor_gamma)
        })?;
    }
    // `b3` misses only the first held-out pair, which every size-4 hidden set contains.
    let rows = run_study1(
        std::slice::from_ref(&p2),
        &StudyConfig {
            m_values: vec![4],
            ..config.clone()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(
        rows.len() == 1
            && rows[0].pass_rate == Some(fq(1, 3))
            && rows[0].survivor_gamma == Some(g_b),
        || format!("m=4 partial agreement row {rows:?}"),
    )?;

    // Study 2: five candidates with coverage 1/5..5/5 and empty context, so
    // the score order is the coverage order; candidates 5, 4 and 2 pass.
    let passing = [5usize, 4, 2];
    let ladder: Vec<StudyCandidate> = (1..=5usize)
        .map(|r| {
            let values: Vec<Option<i64>> = (0..5).map(|i| (i < r).then_some(r as i64)).collect();
            candidate(&format!("r{r}"), &values, vec![passing.contains(&r); 3])
        })
        .collect();
    let s2 = StudyConfig {
        m_values: vec![1],
        repetitions: 1,
        context_sizes: vec![0],
        ..StudyConfig::default()
    };
    let rows = run_study2(&[study_problem("ladder", 3, ladder)], &s2).map_err(|e| e.to_string())?;
    let want = PassCounts {
        pairs: 10,
        chosen_pass: 8,
        rejected_pass: 4,
    };
    ensure(
        rows.len() == 2 && rows.iter().all(|r| r.counts == want),
        || format!("ladder rows {rows:?}"),
    )?;
    ensure(rows[0].odds_ratio() == Some(fq(2, 1)), || {
        "ladder OR is not 2".into()
    })?;
    let literal = PassCounts {
        pairs: 10,
        chosen_pass: 6,
        rejected_pass: 3,
    };
    ensure(literal.odds_ratio() == Some(fq(2, 1)), || {
        "6/10 vs 3/10 is not 2".into()
    })?;

    // Pair judgments against the counting oracle on random pools.
    let mut rng = ChaCha8Rng::seed_from_u64(0x57);
    let mut judged = 0;
    for _ in 0..300 {
        let k = rng.gen_range(2..=6);
        let held = rng.gen_range(1..=4);
        let sets = random_sets(&mut rng, k, 5, 3, 0.3);
        let cands: Vec<StudyCandidate> = sets
            .into_iter()
            .enumerate()
            .map(|(i, p)| StudyCandidate {
                id: format!("x{i}"),
                predictions: p,
                agrees: (0..held).map(|_| rng.gen_bool(0.7)).collect(),
            })
            .collect();
        let m = rng.gen_range(1..=held);
        let mut order: Vec<usize> = (0..held).collect();
        order.shuffle(&mut rng);
        let hidden = &order[..m];
        let c = rng.gen_range(0..k.min(3));
        let mut idx: Vec<usize> = (0..k).collect();
        idx.shuffle(&mut rng);
        let (ctx_idx, pool_idx) = idx.split_at(c);
        let context: Vec<&StudyCandidate> = ctx_idx.iter().map(|&i| &cands[i]).collect();
        let pool: Vec<&StudyCandidate> = pool_idx.iter().map(|&i| &cands[i]).collect();
        let ctx_sets: Vec<&PredictionSet> = context.iter().map(|c| &c.predictions).collect();
        let mut oracle = PassCounts::default();
        for a in 0..pool.len() {
            for b in (a + 1)..pool.len() {
                let (sa, sb) = (
                    oracle_score(&pool[a].predictions, &ctx_sets),
                    oracle_score(&pool[b].predictions, &ctx_sets),
                );
                if sa == sb {
                    continue;
                }
                let (hi, lo) = if sa > sb { (a, b) } else { (b, a) };
                let pass = |x: &StudyCandidate| hidden.iter().all(|&h| x.agrees[h]);
                oracle.pairs += 1;
                oracle.chosen_pass += pass(pool[hi]) as usize;
                oracle.rejected_pass += pass(pool[lo]) as usize;
            }
        }
        let got = judge_pairs(&pool, &context, hidden).map_err(|e| e.to_string())?;
        let mut counts = PassCounts::default();
        for j in &got {
            counts.pairs += 1;
            counts.chosen_pass += j.chosen_pass as usize;
            counts.rejected_pass += j.rejected_pass as usize;
            ensure(j.chosen_score.0 > j.rejected_score.0, || {
                "pair not oriented by score".into()
            })?;
        }
        ensure(counts == oracle, || {
            format!("counts {counts:?} vs oracle {oracle:?}")
        })?;
        judged += 1;
    }

    // Pass rates never rise with m.
    let mut monotone = 0;
    for case in 0..200 {
        let held = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=5);
        let cands: Vec<StudyCandidate> = random_sets(&mut rng, k, 4, 3, 0.2)
            .into_iter()
            .enumerate()
            .map(|(i, p)| StudyCandidate {
                id: format!("y{i}"),
                predictions: p,
                agrees: (0..held).map(|_| rng.gen_bool(0.8)).collect(),
            })
            .collect();
        let config = StudyConfig {
            m_values: (1..=held).collect(),
            repetitions: 3,
            seed: case,
            ..StudyConfig::default()
        };
        let rows = run_study1(
            &[study_problem(&format!("mono{case}"), held, cands)],
            &config,
        )
        .map_err(|e| e.to_string())?;
        let rates: Vec<BigRational> = rows.iter().map(|r| r.pass_rate.clone().unwrap()).collect();
        ensure(rates.windows(2).all(|w| w[0] >= w[1]), || {
            format!("case {case}: rates {rates:?} rise")
        })?;
        monotone += 1;
    }
    Ok(format!(
        "study 1 hand counts exact; ladder OR=2 (8/10 vs 4/10); {judged} pools match counting oracle; {monotone} monotone cases"
    ))
}

fn pref_candidate(
    id: &str,
    parsable: bool,
    consistent: bool,
    values: Option<&[Option<i64>]>,
) -> PrefCandidate {
    PrefCandidate {
        id: id.into(),
        summary: parsable.then(|| format!("summary of {id}")),
        reply: format!("reply {id}"),
        parsable,
        consistent,
        predictions: values.map(|v| pset(id, v)),
    }
}

fn pref_obs(id: &str) -> ObservationSet {
    ObservationSet::new(
        id,
        [Observation::new(Value::int_list([1]), Value::int_list([1]))],
        Split::Pooled,
    )
}

fn preferences() -> Check {
    let problem = PrefProblem {
        problem_id: "four".into(),
        observations: pref_obs("four"),
        candidates: vec![
            pref_candidate("good-wide", true, true, Some(&[Some(1), Some(2), Some(3)])),
            pref_candidate("good-narrow", true, true, Some(&[Some(1), None, None])),
            pref_candidate("inconsistent", true, false, None),
            pref_candidate("unparsable", false, false, None),
        ],
    };
    let config = PrefConfig {
        context_sizes: vec![0],
        contexts_per_size: 1,
        seed: 0,
    };
    let ds = build_preference_dataset(&[problem], &config);
    let of = |s: Stage| ds.pairs.iter().filter(|p| p.stage == s).collect::<Vec<_>>();
    let (parsing, consistency, gear) =
        (of(Stage::Parsing), of(Stage::Consistency), of(Stage::Gear));
    ensure(
        parsing.len() == 3 && parsing.iter().all(|p| p.rejected_id == "unparsable"),
        || format!("parsing pairs {parsing:?}"),
    )?;
    ensure(
        consistency.len() == 2
            && consistency
                .iter()
                .all(|p| p.rejected_id == "inconsistent" && p.preferred_id.starts_with("good")),
        || format!("consistency pairs {consistency:?}"),
    )?;
    ensure(
        gear.len() == 1
            && gear[0].preferred_id == "good-wide"
            && gear[0].rejected_id == "good-narrow",
        || format!("gear pairs {gear:?}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x9E);
    let mut problems = Vec::new();
    for i in 0..1000 {
        let k = rng.gen_range(1..=6);
        let sets = random_sets(&mut rng, k, 4, 3, 0.25);
        let candidates: Vec<PrefCandidate> = sets
            .into_iter()
            .enumerate()
            .map(|(j, p)| {
                let parsable = rng.gen_bool(0.75);
                let consistent = parsable && rng.gen_bool(0.6);
                PrefCandidate {
                    id: format!("q{i}-{j}"),
                    summary: parsable.then(|| format!("s{j}")),
                    reply: format!("r{j}"),
                    parsable,
                    consistent,
                    predictions: consistent.then_some(p),
                }
            })
            .collect();
        problems.push(PrefProblem {
            problem_id: format!("q{i:04}"),
            observations: pref_obs(&format!("q{i:04}")),
            candidates,
        });
    }
    let config = PrefConfig {
        context_sizes: vec![0, 1, 2],
        contexts_per_size: 2,
        seed: 3,
    };
    let ds = build_preference_dataset(&problems, &config);
    ensure(ds.skipped.is_empty(), || {
        format!("skipped {:?}", ds.skipped)
    })?;
    let by_id: std::collections::HashMap<&str, &PrefCandidate> = problems
        .iter()
        .flat_map(|p| p.candidates.iter().map(|c| (c.id.as_str(), c)))
        .collect();
    let mut seen: HashSet<(String, usize, String, String)> = HashSet::new();
    for pair in &ds.pairs {
        let (w, l) = (
            by_id[pair.preferred_id.as_str()],
            by_id[pair.rejected_id.as_str()],
        );
        let ctx: Vec<&PredictionSet> = pair
            .context_ids
            .iter()
            .map(|id| by_id[id.as_str()].predictions.as_ref().unwrap())
            .collect();
        let ok = match pair.stage {
            Stage::Parsing => w.parsable && !l.parsable,
            Stage::Consistency => w.parsable && l.parsable && w.consistent && !l.consistent,
            Stage::Gear => {
                w.consistent
                    && l.consistent
                    && oracle_score(w.predictions.as_ref().unwrap(), &ctx)
                        > oracle_score(l.predictions.as_ref().unwrap(), &ctx)
            }
        };
        ensure(ok, || {
            format!(
                "stage priority violated in {} ({:?})",
                pair.problem_id, pair.stage
            )
        })?;
        let key = (
            pair.problem_id.clone(),
            pair.context_index,
            pair.preferred_id.clone(),
            pair.rejected_id.clone(),
        );
        ensure(seen.insert(key), || "duplicate pair".into())?;
    }
    for p in &problems {
        let c = &p.candidates;
        let count = |f: &dyn Fn(&PrefCandidate) -> bool| c.iter().filter(|x| f(x)).count();
        let parsable = count(&|x| x.parsable);
        let consistent = count(&|x| x.consistent);
        let want_parsing = parsable * (c.len() - parsable);
        let want_consistency = consistent * (parsable - consistent);
        let got = |s: Stage| {
            ds.pairs
                .iter()
                .filter(|x| x.problem_id == p.problem_id && x.context_index == 0 && x.stage == s)
                .count()
        };
        ensure(
            got(Stage::Parsing) == want_parsing && got(Stage::Consistency) == want_consistency,
            || format!("{}: empty-context stage counts", p.problem_id),
        )?;
    }
    Ok(format!(
        "4-attempt problem gives 3/2/1 oriented pairs; {} pairs over 1000 random problems respect stage priority",
        ds.pairs.len()
    ))
}

fn oracle_recurrence(
    log: &[(u64, [BigRational; 3])],
    p: &CurriculumParams,
) -> Vec<[[BigRational; 3]; 3]> {
    let mut out = Vec::new();
    let mut e: Option<[BigRational; 3]> = None;
    for (_, losses) in log {
        let (new_e, m): ([BigRational; 3], [BigRational; 3]) = match &e {
            None => (losses.clone(), Default::default()),
            Some(prev) => {
                let ne: [BigRational; 3] = std::array::from_fn(|r| {
                    (BigRational::one() - &p.alpha) * &prev[r] + &p.alpha * &losses[r]
                });
                let m = std::array::from_fn(|r| {
                    let d = &prev[r] - &ne[r];
                    d.max(BigRational::zero()).min(p.m_max.clone())
                });
                (ne, m)
            }
        };
        let raw: Vec<BigRational> = m.iter().map(|x| &p.epsilon + x).collect();
        let total: BigRational = raw.iter().cloned().sum();
        let w = std::array::from_fn(|r| {
            (&raw[r] * fq(3, 1) / &total)
                .max(p.w_min.clone())
                .min(p.w_max.clone())
        });
        out.push([new_e.clone(), m, w]);
        e = Some(new_e);
    }
    out
}

fn as_rows(points: &[TrajectoryPoint]) -> Vec<[[BigRational; 3]; 3]> {
    points
        .iter()
        .map(|t| [t.ewma.clone(), t.momentum.clone(), t.weights.clone()])
        .collect()
}

fn curriculum() -> Check {
    let start = Instant::now();
    let params = CurriculumParams::default();
    let text = "# gear-losses/1\n1 parsing 1.0\n1 consistency 1.0\n1 gear 1.0\n\
                2 parsing 0.5\n2 consistency 1.0\n2 gear 1.0\n\
                3 parsing 0.5\n3 consistency 1.0\n3 gear 1.0\n\
                4 parsing 2.0\n4 consistency 1.0\n4 gear 1.0\n";
    let log = read_loss_log(text.as_bytes()).map_err(|e| e.to_string())?;
    let points = replay_schedule(&log, &params).map_err(|e| e.to_string())?;
    let one = fq(1, 1);
    let want_e = [fq(1, 1), fq(95, 100), fq(905, 1000), fq(10145, 10000)];
    let want_m = [fq(0, 1), fq(3, 100), fq(3, 100), fq(0, 1)];
    ensure(points.len() == 4, || format!("{} points", points.len()))?;
    for (i, t) in points.iter().enumerate() {
        ensure(
            t.ewma[0] == want_e[i] && t.ewma[1] == one && t.ewma[2] == one,
            || format!("step {} ewma {:?}", t.step, t.ewma),
        )?;
        ensure(
            t.momentum[0] == want_m[i] && t.momentum[1].is_zero(),
            || format!("step {} momentum", t.step),
        )?;
    }
    ensure(
        points[1].weights == [fq(13, 11), fq(10, 11), fq(10, 11)],
        || format!("weights {:?}", points[1].weights),
    )?;
    ensure(
        points[0].weights == [one.clone(), one.clone(), one.clone()]
            && points[3].weights == points[0].weights,
        || "zero momentum is not uniform".into(),
    )?;
    ensure(
        points == replay_schedule(&log, &params).map_err(|e| e.to_string())?,
        || "replay differs".into(),
    )?;

    let capped = CurriculumParams {
        m_max: fq(1, 1),
        ..CurriculumParams::default()
    };
    let log2 = read_loss_log(
        "1 parsing 10\n1 consistency 1\n1 gear 1\n2 parsing 5\n2 consistency 1\n2 gear 1\n"
            .as_bytes(),
    )
    .map_err(|e| e.to_string())?;
    let w = &replay_schedule(&log2, &capped).map_err(|e| e.to_string())?[1].weights;
    ensure(*w == [fq(6, 5), fq(4, 5), fq(4, 5)], || {
        format!("dominant weights {w:?}")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || {
        format!("hand logs took {elapsed:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    for trial in 0..200 {
        let steps = rng.gen_range(1..=20);
        let log: Vec<(u64, [BigRational; 3])> = (0..steps)
            .map(|s| {
                (
                    s as u64 * 1280,
                    std::array::from_fn(|_| fq(rng.gen_range(1..=3000), 1000)),
                )
            })
            .collect();
        let text: String = log
            .iter()
            .flat_map(|(s, l)| {
                ["parsing", "consistency", "gear"]
                    .iter()
                    .zip(l)
                    .map(move |(name, v)| format!("{s} {name} {}\n", decimal_text(v)))
            })
            .collect();
        let parsed = read_loss_log(text.as_bytes()).map_err(|e| e.to_string())?;
        let got = as_rows(&replay_schedule(&parsed, &params).map_err(|e| e.to_string())?);
        ensure(got == oracle_recurrence(&log, &params), || {
            format!("trial {trial} diverges from recurrence")
        })?;
        for row in &got {
            ensure(
                row[2]
                    .iter()
                    .all(|w| *w >= params.w_min && *w <= params.w_max),
                || "weight out of band".into(),
            )?;
            ensure(
                row[1]
                    .iter()
                    .all(|m| *m >= BigRational::zero() && *m <= params.m_max),
                || "momentum out of range".into(),
            )?;
        }
    }
    Ok(format!(
        "E 1->0.95, m capped at 0.03, hand logs replayed in {elapsed:?}; 200 random logs match the recurrence"
    ))
}

fn decimal_text(q: &BigRational) -> String {
    gear_core::report::decimal(q, 3)
}

fn throughput() -> Check {
    let space = build_list_function_space(0, 1000);
    let templates = [
        "[last(x) + K]",
        "map(\\e -> e * K % 97, x)",
        "filter(\\e -> e % K == 0, x)",
        "take(K % 7, sort(x))",
        "if len(x) > K % 15 then [x[K % 15]] else undefined",
        "[fold(+, K, x)]",
        "append(reverse(x), K)",
        "[count_if(\\e -> e > K, x)]",
        "drop(K % 5, unique(x))",
        "map(\\e -> if e > K then e - K else K - e, x)",
    ];
    let hypotheses: Vec<Hypothesis> = (0..100)
        .map(|i| {
            let src =
                templates[i % templates.len()].replace('K', &(i / templates.len() + 2).to_string());
            Hypothesis::dsl(format!("h{i:03}"), format!("template {i}"), src)
        })
        .collect();
    let threads = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .max(2);
    let run = |threads: usize| -> Result<(Vec<u8>, Duration), String> {
        let evaluator = Evaluator::new(ExecLimits::default(), threads);
        let start = Instant::now();
        let mut bytes = Vec::new();
        for h in &hypotheses {
            let p = compute_prediction_set(&evaluator, h, &space)
                .map_err(|e| format!("{}: {e}", h.id))?;
            serde_json::to_writer(&mut bytes, &p).map_err(|e| e.to_string())?;
            bytes.push(b'\n');
        }
        Ok((bytes, start.elapsed()))
    };
    let (one, t1) = run(1)?;
    let (many, tn) = run(threads)?;
    ensure(one == many, || {
        "prediction sets differ between 1 and N threads".into()
    })?;
    let budget = Duration::from_secs(120);
    ensure(tn < budget && t1 < budget, || {
        format!("1 thread {t1:?}, {threads} threads {tn:?}")
    })?;
    Ok(format!(
        "100 hypotheses x {} inputs: 1 thread {t1:.2?}, {threads} threads {tn:.2?}, byte-identical",
        space.len()
    ))
}

type Criterion = (&'static str, Box<dyn Fn() -> Result<Status, String>>);

fn main() {
    let checks: Vec<Criterion> = vec![
        (
            "worked-example",
            Box::new(|| worked_example().map(Status::Pass)),
        ),
        ("sample-space-cardinalities", Box::new(space_cardinalities)),
        (
            "appendix-d-bounds",
            Box::new(|| appendix_d().map(Status::Pass)),
        ),
        (
            "metric-ranges",
            Box::new(|| metric_ranges().map(Status::Pass)),
        ),
        (
            "stopping-rule",
            Box::new(|| stopping_rule().map(Status::Pass)),
        ),
        (
            "simulation-procedures",
            Box::new(|| simulation().map(Status::Pass)),
        ),
        (
            "preference-stages",
            Box::new(|| preferences().map(Status::Pass)),
        ),
        (
            "curriculum-recurrence",
            Box::new(|| curriculum().map(Status::Pass)),
        ),
        (
            "throughput-determinism",
            Box::new(|| throughput().map(Status::Pass)),
        ),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let status = check().unwrap_or_else(Status::Fail);
        match status {
            Status::Pass(detail) => println!("PASS {name}: {detail}"),
            Status::Skip(detail) => println!("PASS {name}: {detail}"),
            Status::Fail(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
