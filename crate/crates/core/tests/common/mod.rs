//! Oracles and builders shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use convsdg::datamodel::{Qrels, QrelsSource, RankedRun};
use convsdg::evaluation::{evaluate_run, Metric};
use convsdg::fixture::{FixturePaths, FixtureSpec, SyntheticFixture};
use convsdg::pipeline::PipelineConfig;
use convsdg::training::contrastive_loss;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

#[derive(Deserialize)]
struct Expected {
    per_query: BTreeMap<String, BTreeMap<String, f64>>,
    mean: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct RawInstance {
    qrels: BTreeMap<String, BTreeMap<String, u32>>,
    run: BTreeMap<String, BTreeMap<String, f64>>,
    level1: Expected,
    level2: Expected,
}

#[derive(Deserialize)]
struct RawOracle {
    instances: Vec<RawInstance>,
    ndcg_example: f64,
}

pub struct TrecInstance {
    pub run: RankedRun,
    pub qrels: Qrels,
    level1: Expected,
    level2: Expected,
}

/// Frozen `pytrec_eval` output on 50 random (run, qrels) pairs.
pub fn trec_oracle() -> (Vec<TrecInstance>, f64) {
    let text = std::fs::read_to_string(data_dir().join("trec_oracle.json")).unwrap();
    let raw: RawOracle = serde_json::from_str(&text).unwrap();
    let instances = raw
        .instances
        .into_iter()
        .map(|r| {
            let mut qrels = Qrels::new(QrelsSource::Manual);
            for (q, docs) in &r.qrels {
                for (d, g) in docs {
                    qrels.insert(q, d, *g).unwrap();
                }
            }
            let mut run = RankedRun::new("oracle");
            for (q, docs) in r.run {
                run.insert_scored(q, docs);
            }
            TrecInstance {
                run,
                qrels,
                level1: r.level1,
                level2: r.level2,
            }
        })
        .collect();
    (instances, raw.ndcg_example)
}

const METRIC_NAMES: [(&str, &str); 3] = [("mrr", "recip_rank"), ("ndcg@3", "ndcg_cut_3"), ("recall@100", "recall_100")];

/// Largest absolute deviation from the oracle over per-query values and
/// means, at relevance levels 1 and 2. NDCG uses graded gains and is only
/// compared at level 1.
pub fn trec_max_error(inst: &TrecInstance) -> f64 {
    let metrics: Vec<Metric> = METRIC_NAMES.iter().map(|(m, _)| m.parse().unwrap()).collect();
    let mut worst: f64 = 0.0;
    for (level, expected) in [(1, &inst.level1), (2, &inst.level2)] {
        let eval = evaluate_run(&inst.run, &inst.qrels, &metrics, level);
        assert_eq!(eval.per_query.len(), expected.per_query.len());
        for (i, (ours, theirs)) in METRIC_NAMES.iter().enumerate() {
            if level == 2 && *ours == "ndcg@3" {
                continue;
            }
            for (qid, row) in &eval.per_query {
                worst = worst.max((row[i] - expected.per_query[qid][*theirs]).abs());
            }
            worst = worst.max((eval.means[i] - expected.mean[*theirs]).abs());
        }
    }
    worst
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Relative error between the analytic loss gradient and central finite
/// differences, `|g - g_fd| / max(|g|, |g_fd|)`, on one random instance.
pub fn gradient_rel_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..=32);
    let n_neg = rng.random_range(1..=8);
    let q = gaussian_vec(&mut rng, dim, 1.0);
    let pos = gaussian_vec(&mut rng, dim, 1.0);
    let negs: Vec<Vec<f64>> = (0..n_neg).map(|_| gaussian_vec(&mut rng, dim, 1.0)).collect();
    let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
    let (_, grad) = contrastive_loss(&q, &pos, &neg_refs).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..dim)
        .map(|j| {
            let mut up = q.clone();
            let mut down = q.clone();
            up[j] += h;
            down[j] -= h;
            let lu = contrastive_loss(&up, &pos, &neg_refs).unwrap().0;
            let ld = contrastive_loss(&down, &pos, &neg_refs).unwrap().0;
            (lu - ld) / (2.0 * h)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&grad).max(norm(&fd)).max(1e-12)
}

/// Dot-product ranking by sorting every row: score descending, pid ascending.
pub fn brute_force_ranking(query: &[f64], pids: &[String], rows: &[Vec<f64>], k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = pids
        .iter()
        .zip(rows)
        .map(|(p, r)| (p.clone(), query.iter().zip(r).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Textbook BM25 over whitespace/punctuation tokens, computed from scratch.
pub fn naive_bm25(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> HashMap<String, f64> {
    let tok = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    };
    let tokenized: Vec<Vec<String>> = docs.iter().map(|(_, t)| tok(t)).collect();
    let n = docs.len() as f64;
    let avgdl = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms = tok(query);
    terms.sort();
    terms.dedup();
    let mut out = HashMap::new();
    for ((pid, _), toks) in docs.iter().zip(&tokenized) {
        let mut score = 0.0;
        for t in &terms {
            let df = tokenized.iter().filter(|d| d.contains(t)).count() as f64;
            if df == 0.0 {
                continue;
            }
            let tf = toks.iter().filter(|x| *x == t).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avgdl));
        }
        if score > 0.0 {
            out.insert(pid.clone(), score);
        }
    }
    out
}

/// Writes the default synthetic fixture under `dir/data` and returns its
/// config with the workspace at `dir/<workspace>`.
pub fn fixture_config(dir: &Path, workspace: &str) -> (FixturePaths, PipelineConfig) {
    let data = dir.join("data");
    let paths = if data.join("config.toml").is_file() {
        FixturePaths {
            collection: data.join("collection.tsv"),
            topics: data.join("topics.jsonl"),
            train_sessions: data.join("train_sessions.jsonl"),
            train_qrels: data.join("train_qrels.txt"),
            eval_sessions: data.join("eval_sessions.jsonl"),
            eval_qrels: data.join("eval_qrels.txt"),
            config: data.join("config.toml"),
        }
    } else {
        SyntheticFixture::generate(&FixtureSpec::default())
            .unwrap()
            .write(&data)
            .unwrap()
    };
    let mut cfg = PipelineConfig::load(&paths.config).unwrap();
    cfg.workspace = dir.join(workspace);
    (paths, cfg)
}

/// Manually annotated sessions with exactly `total_turns` turns, every turn
/// judged (including some grade-0 judgments).
pub fn annotated_sessions(total_turns: usize, seed: u64) -> (Vec<convsdg::datamodel::ConversationSession>, Qrels) {
    use convsdg::datamodel::{ConversationSession, Provenance, TopicDescription};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = ["glacier melt", "jazz history", "solar panels", "ant colonies", "roman roads", "coffee roasting"];
    let mut sessions = Vec::new();
    let mut qrels = Qrels::new(QrelsSource::Manual);
    let mut left = total_turns;
    let mut s = 0;
    while left > 0 {
        let n = rng.random_range(3..=12).min(left);
        left -= n;
        let subject = subjects[s % subjects.len()];
        let sid = format!("m{s:03}");
        let turns: Vec<(String, Option<String>)> = (0..n)
            .map(|i| (format!("what is the role of {subject} in case {i}"), None))
            .collect();
        let session = ConversationSession::new(
            sid,
            TopicDescription {
                topic_id: format!("t{s}"),
                title: String::new(),
                description: format!("Information about {subject}."),
            },
            Provenance::Manual,
            turns,
        )
        .unwrap();
        for turn in &session.turns {
            for _ in 0..rng.random_range(1..5) {
                let pid = format!("p{}", rng.random_range(0..500));
                if qrels.grade(&turn.turn_id, &pid).is_none() {
                    qrels.insert(&turn.turn_id, &pid, rng.random_range(0..4)).unwrap();
                }
            }
        }
        sessions.push(session);
        s += 1;
    }
    (sessions, qrels)
}

/// Counts how often each 3-subset of 5 candidates is drawn over `draws`
/// turns, and returns the largest deviation from the mean in standard
/// deviations of a Binomial(draws, 1/10).
pub fn subset_uniformity_sigma(draws: usize, seed: u64) -> (usize, f64) {
    use convsdg::supervision::sample_pseudo_positives;
    let candidates: Vec<String> = (1..=5).map(|i| format!("d{i}")).collect();
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    for i in 0..draws {
        let picked = sample_pseudo_positives(&candidates, 3, seed, &format!("turn_{i}"));
        assert_eq!(picked.len(), 3);
        *counts.entry(picked).or_default() += 1;
    }
    let expected = draws as f64 / 10.0;
    let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
    let worst = counts
        .values()
        .map(|&c| (c as f64 - expected).abs() / sigma)
        .fold(0.0, f64::max);
    (counts.len(), worst)
}
