//! TREC-style effectiveness metrics and paired significance testing.
//!
//! Metrics read only the run's rank order and the judgments; scores are
//! ignored. NDCG uses linear gains and a `log2(rank + 1)` discount, as
//! `trec_eval`'s `ndcg_cut` does.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datamodel::{Qrels, RankedRun};
use crate::{Error, Result};

pub fn reciprocal_rank(ranked: &[&str], judged: &HashMap<String, u32>, rel_threshold: u32) -> f64 {
    reciprocal_rank_at(ranked, judged, rel_threshold, usize::MAX)
}

fn reciprocal_rank_at(ranked: &[&str], judged: &HashMap<String, u32>, rel_threshold: u32, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|pid| judged.get(*pid).is_some_and(|&g| g >= rel_threshold))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn ndcg_at_k(ranked: &[&str], judged: &HashMap<String, u32>, k: usize) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, pid)| judged.get(*pid).copied().unwrap_or(0) as f64 / discount(i))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 / discount(i))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

pub fn recall_at_k(ranked: &[&str], judged: &HashMap<String, u32>, k: usize, rel_threshold: u32) -> f64 {
    let relevant = judged.values().filter(|&&g| g >= rel_threshold).count();
    if relevant == 0 {
        return 0.0;
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|pid| judged.get(**pid).is_some_and(|&g| g >= rel_threshold))
        .count();
    found as f64 / relevant as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Reciprocal rank, optionally cut at a depth.
    Mrr(Option<usize>),
    Ndcg(usize),
    Recall(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr(None) => write!(f, "mrr"),
            Metric::Mrr(Some(k)) => write!(f, "mrr@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let unknown = || Error::UnknownMetric(s.to_string());
        let (name, depth) = match s.split_once('@') {
            Some((n, d)) => {
                let d: usize = d.parse().map_err(|_| unknown())?;
                if d == 0 {
                    return Err(unknown());
                }
                (n, Some(d))
            }
            None => (s, None),
        };
        match (name, depth) {
            ("mrr", d) => Ok(Metric::Mrr(d)),
            ("ndcg", Some(k)) => Ok(Metric::Ndcg(k)),
            ("recall", Some(k)) => Ok(Metric::Recall(k)),
            _ => Err(unknown()),
        }
    }
}

pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

impl Metric {
    pub fn compute(self, ranked: &[&str], judged: &HashMap<String, u32>, rel_threshold: u32) -> f64 {
        match self {
            Metric::Mrr(k) => reciprocal_rank_at(ranked, judged, rel_threshold, k.unwrap_or(usize::MAX)),
            Metric::Ndcg(k) => ndcg_at_k(ranked, judged, k),
            Metric::Recall(k) => recall_at_k(ranked, judged, k, rel_threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub metrics: Vec<String>,
    /// `query_id -> one value per metric`
    pub per_query: BTreeMap<String, Vec<f64>>,
    pub means: Vec<f64>,
}

impl Evaluation {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().position(|m| m == metric).map(|i| self.means[i])
    }

    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let i = self.metrics.iter().position(|m| m == metric)?;
        Some(self.per_query.values().map(|row| row[i]).collect())
    }
}

/// Macro averages over the queries present in `qrels`; judged queries missing
/// from the run score zero and unjudged run queries are ignored.
pub fn evaluate_run(run: &RankedRun, qrels: &Qrels, metrics: &[Metric], rel_threshold: u32) -> Evaluation {
    let mut per_query = BTreeMap::new();
    for (qid, judged) in qrels.by_query() {
        let ranked = run.ranked_pids(&qid);
        let row = metrics
            .iter()
            .map(|m| m.compute(&ranked, &judged, rel_threshold))
            .collect();
        per_query.insert(qid, row);
    }
    let n = per_query.len();
    let means = (0..metrics.len())
        .map(|i| {
            if n == 0 {
                0.0
            } else {
                per_query.values().map(|r: &Vec<f64>| r[i]).sum::<f64>() / n as f64
            }
        })
        .collect();
    Evaluation {
        metrics: metrics.iter().map(Metric::to_string).collect(),
        per_query,
        means,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired Student t-test on `a - b`.
///
/// With zero variance in the differences: `p = 1` if their mean is zero,
/// otherwise `p = 0` (and `t` is infinite).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Precondition("paired t-test needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = diffs.iter().map(|d| d.abs()).fold(0.0, f64::max).max(1.0);
    if var.sqrt() <= 1e-12 * scale {
        return Ok(if mean.abs() <= 1e-12 * scale {
            TTest { t: 0.0, p: 1.0 }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, p: 0.0 }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p })
}
