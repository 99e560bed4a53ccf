use std::collections::HashMap;

use super::{top_k, Retriever, ScoredPassage};
use crate::datamodel::PassageCollection;
use crate::text::tokenize;
use crate::{Error, Result};

/// Lucene-style defaults used on CAsT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

fn idf(n: f64, df: f64) -> f64 {
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn term_weight(idf: f64, tf: f64, dl: f64, avgdl: f64, p: Bm25Params) -> f64 {
    let norm = if avgdl > 0.0 { dl / avgdl } else { 1.0 };
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm))
}

/// Scores one passage by rescanning its text. Repeated query terms count
/// once per occurrence.
pub fn bm25_score(
    query_terms: &[String],
    pid: &str,
    collection: &PassageCollection,
    params: Bm25Params,
) -> Result<f64> {
    let passage = collection
        .get(pid)
        .ok_or_else(|| Error::UnknownPid(pid.to_string()))?;
    let stats = collection.stats();
    let tokens = tokenize(&passage.text);
    let dl = tokens.len() as f64;
    let mut score = 0.0;
    for term in query_terms {
        let tf = tokens.iter().filter(|t| *t == term).count() as f64;
        if tf == 0.0 {
            continue;
        }
        let df = stats.df.get(term).copied().unwrap_or(0) as f64;
        score += term_weight(idf(stats.doc_count as f64, df), tf, dl, stats.avg_doc_len, params);
    }
    Ok(score)
}

/// Inverted index over a collection.
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    pids: Vec<String>,
    doc_len: Vec<u32>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    avg_doc_len: f64,
    params: Bm25Params,
}

impl LexicalIndex {
    pub fn new(collection: &PassageCollection) -> Self {
        Self::with_params(collection, Bm25Params::default())
    }

    pub fn with_params(collection: &PassageCollection, params: Bm25Params) -> Self {
        let mut pids = Vec::with_capacity(collection.len());
        let mut doc_len = Vec::with_capacity(collection.len());
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (doc, passage) in collection.iter().enumerate() {
            let tokens = tokenize(&passage.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc as u32, count));
            }
            pids.push(passage.pid.clone());
            doc_len.push(tokens.len() as u32);
        }
        Self {
            pids,
            doc_len,
            postings,
            avg_doc_len: collection.stats().avg_doc_len,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.pids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pids.is_empty()
    }
}

/// Top-`k` passages sharing at least one term with the query.
pub fn lexical_search(query: &str, index: &LexicalIndex, k: usize) -> Result<Vec<ScoredPassage>> {
    if k == 0 {
        return Err(Error::Precondition("k must be >= 1".into()));
    }
    let terms = tokenize(query);
    if terms.is_empty() {
        return Err(Error::Precondition(format!("query `{query}` has no tokens")));
    }
    let n = index.pids.len() as f64;
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for term in &terms {
        let Some(list) = index.postings.get(term) else { continue };
        let w = idf(n, list.len() as f64);
        for &(doc, tf) in list {
            *acc.entry(doc).or_default() += term_weight(
                w,
                tf as f64,
                index.doc_len[doc as usize] as f64,
                index.avg_doc_len,
                index.params,
            );
        }
    }
    let hits = acc
        .into_iter()
        .map(|(doc, score)| ScoredPassage {
            pid: index.pids[doc as usize].clone(),
            score,
        })
        .collect();
    Ok(top_k(hits, k))
}

impl Retriever for LexicalIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        lexical_search(query, self, k)
    }
}
