//! Acceptance suite: one PASS/FAIL line per criterion, each under its
//! runtime budget. Runs entirely against the table-driven fake runner.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use blockforge::campaign::{cmd_fuzz, similarity_table};
use blockforge::derivation::{expected_node_count, prune_level, EquivalenceClassKey, RangeClass};
use blockforge::kb::{evaluate_constraint, load_knowledge_base, ApiSpec, Dtype, ParameterSpec};
use blockforge::literal::Literal;
use blockforge::oracle::CandidateType;
use blockforge::similarity::{
    align, cosine_similarity, embed_definition, functional_similarity, parameter_list_wcr, roulette_select, BagOfWords,
    EmbeddingVector, Vocabulary,
};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<(), String>;

/// Name, check and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn params(dtypes: &[Dtype]) -> Vec<ParameterSpec> {
    dtypes.iter().enumerate().map(|(i, d)| ParameterSpec::new(format!("p{i}"), *d)).collect()
}

fn similarity_math() -> Check {
    let v = |x: &[f64]| EmbeddingVector(x.to_vec());
    for (a, b) in [(vec![1.0, 0.0], vec![1.0, 0.0]), (vec![1.0, 0.0], vec![0.0, 1.0]), (vec![1.0, 0.0], vec![1.0, 1.0])] {
        let got = cosine_similarity(&v(&a), &v(&b)).map_err(|e| e.to_string())?;
        ensure!(close(got, naive_cosine(&a, &b)), "cosine {a:?}·{b:?} = {got}");
    }
    ensure!(close(cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 1.0 / 2f64.sqrt()), "cosine 1/sqrt2");

    use Dtype::{Float, Int, String as Str};
    let wcr = |r: &[Dtype], h: &[Dtype]| parameter_list_wcr(&params(r), &params(h)).unwrap();
    ensure!(close(wcr(&[Int, Int, Str], &[Int, Int, Str]), 1.0), "identical lists");
    ensure!(close(wcr(&[Int, Int, Str], &[]), 0.0), "total deletion");
    ensure!(close(wcr(&[Int, Int, Str], &[Int, Float, Str]), 2.0 / 3.0), "one substitution");

    let alphabet = [Int, Float, Str];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..2000 {
        let r: Vec<Dtype> = (0..rng.gen_range(1..=6)).map(|_| alphabet[rng.gen_range(0..3)]).collect();
        let h: Vec<Dtype> = (0..rng.gen_range(0..=6)).map(|_| alphabet[rng.gen_range(0..3)]).collect();
        let (cost, matches) = brute_force_alignment(&r, &h);
        let a = align(&r, &h);
        ensure!(a.cost() == cost && a.correct == matches, "alignment of {r:?} / {h:?}: {a:?} vs ({cost}, {matches})");
        ensure!(close(wcr(&r, &h), matches as f64 / r.len() as f64), "wcr of {r:?} / {h:?}");
    }

    let vocab = Vocabulary::from_tokens(["alpha", "beta"]);
    let embedder = BagOfWords { vocabulary: vocab.clone() };
    ensure!(embed_definition("alpha", &vocab).0 == vec![1.0, 0.0], "embedding");
    let mut a1 = ApiSpec::new("m.A", "alpha");
    a1.parameters = params(&[Int, Int, Str]);
    let mut a2 = ApiSpec::new("m.B", "alpha beta");
    a2.parameters = params(&[Int, Float, Str]);
    let expected = (1.0 / 2f64.sqrt() + 2.0 / 3.0) / 2.0;
    let got = functional_similarity(&a1, &a2, &embedder).unwrap();
    ensure!(close(got, expected) && format!("{got:.5}") == "0.68689", "functional similarity {got}");

    for dir in ["tf_kb", "torch_kb", "mock/kb"] {
        let kb = load_knowledge_base(&fixture(dir)).map_err(|e| e.to_string())?;
        let embedder = BagOfWords { vocabulary: Vocabulary::from_kb(&kb) };
        for api in kb.iter() {
            let s = functional_similarity(api, api, &embedder).map_err(|e| e.to_string())?;
            ensure!(close(s, 1.0), "self-similarity of {} is {s}", api.name);
        }
    }
    Ok(())
}

fn kb_fidelity() -> Check {
    let kb = load_knowledge_base(&fixture("tf_kb")).map_err(|e| e.to_string())?;
    let lstm = kb.get("tf.keras.layers.LSTM").ok_or("LSTM missing")?;
    let sim = lstm.similarity.as_ref().ok_or("no similarity list")?;
    ensure!(sim[0].0 == "tf.keras.layers.LSTMCell", "first entry {}", sim[0].0);
    ensure!(sim[0].1 == 0.7150709480047226, "score {} is not exact", sim[0].1);
    let table = similarity_table(&kb).map_err(|e| e.to_string())?;
    ensure!(table.score("tf.keras.layers.LSTM", "tf.keras.layers.LSTMCell") == Some(0.7150709480047226), "table score");
    let act = lstm.parameter("activation").ok_or("activation missing")?;
    ensure!(
        act.enum_values == Some(vec![Literal::Str("tanh".into()), Literal::None]),
        "activation enum {:?}",
        act.enum_values
    );
    let c = lstm.constraints.first().ok_or("no constraint")?;
    ensure!(c.param_a == "unit_forget_bias" && c.param_b == "bias_initializer", "constraint parameters");
    let env = |flag: bool, init: &str| {
        HashMap::from([
            ("unit_forget_bias".to_string(), Literal::Bool(flag)),
            ("bias_initializer".to_string(), Literal::Str(init.into())),
        ])
    };
    for (flag, init, holds) in [(true, "zeros", true), (true, "ones", false), (false, "ones", true), (false, "zeros", true)] {
        let got = evaluate_constraint(c, &env(flag, init)).map_err(|e| e.to_string())?;
        ensure!(got == holds, "constraint at ({flag}, {init}) gave {got}");
    }
    Ok(())
}

fn tree_counting() -> Check {
    for ((n, m), want) in [((1, 3), 4), ((2, 2), 7), ((3, 3), 40), ((4, 3), 85)] {
        ensure!(expected_node_count(n as u64, m as u32) == want, "formula for ({n}, {m})");
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = counting_campaign(dir.path(), n, m);
        cmd_fuzz(&cfg).map_err(|e| e.to_string())?;
        let tree = std::fs::read_to_string(cfg.out_dir.join("seed/tree.jsonl")).map_err(|e| e.to_string())?;
        ensure!(!tree.contains("\"negative\""), "negative nodes present for ({n}, {m})");
        let got = positive_non_identity_nodes(&tree);
        ensure!(got as u64 == want, "({n}, {m}): {got} positive nodes, expected {want}");
    }
    Ok(())
}

fn pruning() -> Check {
    let mut runner = TestRunner::new(Config { cases: 100, failure_persistence: None, ..Config::default() });
    let strategy = (prop::collection::vec((0usize..3, 1usize..30), 1..12), 0usize..5, any::<u64>());
    runner
        .run(&strategy, |(classes, identities, seed)| {
            let mut map: BTreeMap<EquivalenceClassKey, Vec<String>> = BTreeMap::new();
            for (i, (kind, size)) in classes.iter().enumerate() {
                let key = match kind {
                    0 => EquivalenceClassKey::Replacement { api: format!("api{i}") },
                    1 => EquivalenceClassKey::Boolean { api: "x".into(), parameter: format!("p{i}"), value: i % 2 == 0 },
                    _ => EquivalenceClassKey::Numeric {
                        api: "x".into(),
                        parameter: format!("p{i}"),
                        range: RangeClass::InLegalRange,
                    },
                };
                map.insert(key, (0..*size).map(|j| format!("c{i}-{j}")).collect());
            }
            if identities > 0 {
                map.insert(EquivalenceClassKey::Identity, (0..identities).map(|j| format!("id-{j}")).collect());
            }
            let kept = prune_level(&map, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut seen = std::collections::BTreeSet::new();
            for id in &kept {
                prop_assert!(seen.insert(id.clone()), "duplicate survivor {}", id);
            }
            for (key, members) in &map {
                let kept_here = members.iter().filter(|m| seen.contains(*m)).count();
                let want = if *key == EquivalenceClassKey::Identity {
                    members.len()
                } else {
                    ((members.len() as f64 * 0.5).ceil() as usize).max(1)
                };
                prop_assert_eq!(kept_here, want, "class {:?} of size {}", key, members.len());
            }
            let total: usize = map.values().map(Vec::len).sum();
            prop_assert!(kept.iter().all(|k| map.values().any(|m| m.contains(k))) && kept.len() <= total);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn inconsistent_nodes(tree_jsonl: &str) -> usize {
    tree_jsonl
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["parent"].is_string())
        .filter(|v| {
            let ok = v["observed"]["kind"] == "success";
            (v["expected"] == "positive") != ok
        })
        .count()
}

fn injected_bugs() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = mock_campaign(dir.path());
    let out = cmd_fuzz(&cfg).map_err(|e| e.to_string())?;
    let tree = std::fs::read_to_string(dir.path().join("seed/tree.jsonl")).map_err(|e| e.to_string())?;
    let expected = [
        (CandidateType::BouBug, "mocklib.LeakyReLU", "LeakyReLU("),
        (CandidateType::ImpBug, "mocklib.Conv2d", "padding_mode='circular'"),
        (CandidateType::PerBug, "mocklib.LSTM", "LSTM("),
    ];
    ensure!(out.reports.len() == 3, "{} reports instead of 3", out.reports.len());
    for (ty, api, marker) in expected {
        let r = out.reports.iter().find(|r| r.candidate_type == ty).ok_or(format!("no {ty:?} report"))?;
        ensure!(r.api == api, "{ty:?} report is for {}", r.api);
        let node = tree
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
            .find(|v| v["id"] == r.node_id.as_str())
            .ok_or(format!("report node {} not in tree", r.node_id))?;
        ensure!(node["inserted_line"] == r.trigger.line, "trigger line differs from the inserted line");
        let file = dir.path().join("seed/tests").join(format!("{}.py", r.node_id.replace('/', "_")));
        let source = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
        let line = source.lines().nth(r.trigger.line - 1).ok_or("trigger line out of range")?;
        ensure!(line.trim() == r.trigger.code && line.contains(marker), "{ty:?} localized to `{line}`");
        if ty == CandidateType::BouBug {
            ensure!(line.contains(&format!("alpha={}", r.trigger.value)), "BouBug value {} not on `{line}`", r.trigger.value);
        }
    }
    let violations = inconsistent_nodes(&tree);
    ensure!(out.stats.total.violations == violations, "{} violations reported, {violations} in the tree", out.stats.total.violations);
    let members: usize = out.reports.iter().map(|r| r.occurrences()).sum();
    ensure!(members == violations, "reports cover {members} nodes, {violations} are inconsistent");
    Ok(())
}

fn roulette_statistics() -> Check {
    let two = vec![("A".to_string(), 0.6), ("B".to_string(), 0.4)];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let hits = (0..n).filter(|_| roulette_select(&two, &mut rng).unwrap() == "A").count();
    let p = hits as f64 / n as f64;
    ensure!((p - 0.6).abs() <= 0.015, "P(A) = {p}");

    let scores = [0.9, 0.6, 0.45, 0.3, 0.15];
    let five: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, s)| (format!("c{i}"), *s)).collect();
    let total: f64 = scores.iter().sum();
    let draws = 20_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        let pick = roulette_select(&five, &mut rng).unwrap();
        counts[pick[1..].parse::<usize>().unwrap()] += 1;
    }
    let stat: f64 = scores
        .iter()
        .zip(counts)
        .map(|(s, c)| {
            let e = draws as f64 * s / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(4.0).unwrap().cdf(stat);
    ensure!(p_value > 0.01, "chi-square {stat:.3}, p = {p_value:.4}");
    Ok(())
}

fn read_pair(dir: &Path, seed: &str) -> (Vec<u8>, Vec<u8>) {
    (std::fs::read(dir.join(seed).join("tree.jsonl")).unwrap(), std::fs::read(dir.join("reports.jsonl")).unwrap())
}

fn determinism() -> Check {
    for (label, seed) in [("mock", "seed"), ("lenet", "lenet")] {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let cfg = if label == "mock" { mock_campaign(dir.path()) } else { lenet_campaign(dir.path(), 2) };
            cmd_fuzz(&cfg).map_err(|e| e.to_string())?;
            outputs.push(read_pair(dir.path(), seed));
        }
        ensure!(!outputs[0].0.is_empty(), "{label}: empty tree");
        ensure!(outputs[0].0 == outputs[1].0, "{label}: tree JSONL differs between runs");
        ensure!(outputs[0].1 == outputs[1].1, "{label}: report JSONL differs between runs");
    }
    Ok(())
}

fn main() -> ExitCode {
    let checks: [Criterion; 7] = [
        ("similarity-math", similarity_math, 1),
        ("kb-fidelity", kb_fidelity, 1),
        ("tree-counting", tree_counting, 10),
        ("pruning", pruning, 5),
        ("oracle-injected-bugs", injected_bugs, 30),
        ("roulette-statistics", roulette_statistics, 5),
        ("determinism", determinism, 30),
    ];
    let mut failed = 0;
    for (name, check, budget) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|_| {
            if elapsed > Duration::from_secs(budget) {
                Err(format!("took {elapsed:.2?}, budget {budget}s"))
            } else {
                Ok(())
            }
        });
        match result {
            Ok(()) => println!("PASS {name} ({:.0?})", elapsed),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({:.0?}): {e}", elapsed);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
