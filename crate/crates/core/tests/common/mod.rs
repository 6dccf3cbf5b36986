#![allow(dead_code)]

use std::path::{Path, PathBuf};

use blockforge::campaign::{CampaignConfig, OperatorWeights, SeedEntry};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Exhaustive alignment search: every interleaving of match/substitute,
/// delete and insert steps. Returns (cost, matches) of the minimal-cost
/// alignment with the most matches.
pub fn brute_force_alignment<T: PartialEq>(r: &[T], h: &[T]) -> (usize, usize) {
    fn go<T: PartialEq>(r: &[T], h: &[T], cost: usize, matches: usize, best: &mut Option<(usize, usize)>) {
        if r.is_empty() && h.is_empty() {
            let better = match best {
                None => true,
                Some((c, m)) => cost < *c || (cost == *c && matches > *m),
            };
            if better {
                *best = Some((cost, matches));
            }
            return;
        }
        if !r.is_empty() && !h.is_empty() {
            let same = r[0] == h[0];
            go(&r[1..], &h[1..], cost + usize::from(!same), matches + usize::from(same), best);
        }
        if !r.is_empty() {
            go(&r[1..], h, cost + 1, matches, best);
        }
        if !h.is_empty() {
            go(r, &h[1..], cost + 1, matches, best);
        }
    }
    let mut best = None;
    go(r, h, 0, 0, &mut best);
    best.expect("at least one alignment")
}

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

const COUNTING_KB: [(&str, &str); 3] = [
    (
        "mocklib.Input",
        "name: mocklib.Input\ndefinition: Model input.\nParameters:\n  - features:\n      dtype: int\n",
    ),
    (
        "mocklib.Toggle",
        "name: mocklib.Toggle\ndefinition: Passes features through, optionally gated.\nParameters:\n  - gate:\n      default: true\n      dtype: bool\n",
    ),
    (
        "mocklib.Output",
        "name: mocklib.Output\ndefinition: Class scores.\nParameters:\n  - classes:\n      dtype: int\n",
    ),
];

/// A campaign over `m` hidden layers whose only mutable parameter is a
/// boolean (randomizable, never boundable) against an all-success runner.
pub fn counting_campaign(dir: &Path, n: usize, m: usize) -> CampaignConfig {
    let kb = dir.join("kb");
    std::fs::create_dir_all(&kb).unwrap();
    for (name, yaml) in COUNTING_KB {
        std::fs::write(kb.join(format!("{name}.yaml")), yaml).unwrap();
    }
    let mut seed = String::from("import mocklib as ml\n\nx = ml.Input(4)\n");
    for _ in 0..m {
        seed.push_str("x = ml.Toggle(gate=True)(x)\n");
    }
    seed.push_str("y = ml.Output(2)(x)\nml.fit(x, y, epochs=1)\n");
    let seed_path = dir.join("seed.py");
    std::fs::write(&seed_path, seed).unwrap();
    let runner = dir.join("runner.json");
    std::fs::write(&runner, "{}").unwrap();
    CampaignConfig {
        kb_dir: kb,
        times_mt: n,
        prune_ratio: 1.0,
        rng_seed: 3,
        out_dir: dir.join("out"),
        scripted_runner: Some(runner),
        operators: OperatorWeights { ar_weight: 0.0 },
        seeds: vec![SeedEntry { path: seed_path, manifest: None, style: None }],
        ..CampaignConfig::default()
    }
}

/// Positive nodes of a persisted tree whose path has no identity edge.
/// Identity ids are bare block ids (no dot); the root counts.
pub fn positive_non_identity_nodes(tree_jsonl: &str) -> usize {
    tree_jsonl
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["expected"] == "positive")
        .filter(|v| {
            let id = v["id"].as_str().unwrap();
            id == "root" || id.split('/').all(|seg| seg.contains('.'))
        })
        .count()
}

pub fn mock_campaign(out_dir: &Path) -> CampaignConfig {
    let mut cfg = CampaignConfig::load(&fixture("mock/campaign.toml")).unwrap();
    cfg.out_dir = out_dir.to_path_buf();
    cfg
}

pub fn lenet_campaign(out_dir: &Path, times_mt: usize) -> CampaignConfig {
    let mut cfg = CampaignConfig::load(&fixture("seeds/lenet_campaign.toml")).unwrap();
    cfg.out_dir = out_dir.to_path_buf();
    cfg.times_mt = times_mt;
    cfg
}
