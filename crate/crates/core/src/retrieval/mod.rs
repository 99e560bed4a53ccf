//! Lexical (BM25) and dense (dot-product) retrieval.

mod ann;
mod bm25;
mod dense;
mod encoder;

pub use ann::{IvfIndex, IvfParams};
pub use bm25::{bm25_score, lexical_search, Bm25Params, LexicalIndex};
pub use dense::{build_dense_index, dense_search, DenseIndex, DenseRetriever, SearchMode};
pub use encoder::{
    encode, Encoder, EncoderRole, DEFAULT_DIM, DEFAULT_HASH_WIDTH, PASSAGE_MAX_LEN, QUERY_MAX_LEN,
    SESSION_MAX_LEN,
};

use crate::datamodel::rank_order;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPassage {
    pub pid: String,
    pub score: f64,
}

/// Anything that turns a query string into a ranked list.
pub trait Retriever: Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>>;
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Keeps the best `k` by the global order (descending score, ascending pid).
pub(crate) fn top_k(mut hits: Vec<ScoredPassage>, k: usize) -> Vec<ScoredPassage> {
    let cmp = |a: &ScoredPassage, b: &ScoredPassage| rank_order(a.score, &a.pid, b.score, &b.pid);
    if hits.len() > k && k > 0 {
        hits.select_nth_unstable_by(k - 1, cmp);
        hits.truncate(k);
    }
    hits.sort_by(cmp);
    hits.truncate(k);
    hits
}
