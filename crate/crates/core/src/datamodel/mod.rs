//! Core types plus line-oriented readers and writers.
//!
//! Formats:
//! - collection: `pid<TAB>text` per line
//! - qrels: `query_id 0 pid grade`
//! - run: `query_id Q0 pid rank score tag`
//! - sessions: one JSON object per line
//!
//! Readers reject anything that violates a type invariant; nothing is
//! silently repaired.

mod collection;
mod qrels;
mod run;
mod session;

use std::cmp::Ordering;

pub use collection::{load_collection, CollectionFormat, CollectionStats, Passage, PassageCollection};
pub use qrels::{read_qrels, read_qrels_with_source, write_qrels, Qrels, QrelsSource};
pub use run::{read_run, write_run, RankedRun, RunEntry};
pub use session::{
    read_sessions, write_sessions, ConversationSession, Provenance, QueryTurn, TopicDescription,
};

/// Reformulated query plus its positive and negative passages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query_id: String,
    pub reformulated_query: String,
    pub positive_pids: Vec<String>,
    pub negative_pids: Vec<String>,
}

impl TrainingExample {
    pub fn new(
        query_id: impl Into<String>,
        reformulated_query: impl Into<String>,
        positive_pids: Vec<String>,
    ) -> crate::Result<Self> {
        let query_id = query_id.into();
        if positive_pids.is_empty() {
            return Err(crate::Error::Invalid(format!(
                "training example `{query_id}` has no positive passage"
            )));
        }
        Ok(Self {
            query_id,
            reformulated_query: reformulated_query.into(),
            positive_pids,
            negative_pids: Vec::new(),
        })
    }
}

/// Global ranking order: descending score, then ascending pid.
pub fn rank_order(a_score: f64, a_pid: &str, b_score: f64, b_pid: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_pid.cmp(b_pid))
}
