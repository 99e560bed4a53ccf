//! Query-level augmentation: each annotated turn is paraphrased `t` times and
//! every paraphrase inherits the turn's relevance judgments.
//!
//! Rewrites live in [`QueryTurn::rewrites`](crate::datamodel::QueryTurn) of a
//! `query_augmented` session. Rewrite `i` of turn `Q` is the sample `Q#a<i>`;
//! its context is the session's other turns at their original text.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ConversationSession, Provenance, Qrels, QrelsSource};
use crate::llm::{generate, render_rewrite_prompt, GenerationParams, TextGenerator, PARSE_RETRY_BUDGET};
use crate::text::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Rewrites per annotated turn.
    pub t: usize,
    pub params: GenerationParams,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            t: 2,
            params: GenerationParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RewriteReport {
    /// Rewrites identical to the input query.
    pub degenerate: usize,
    /// Rewrites replaced by the original after the retry budget ran out.
    pub substituted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentReport {
    pub augmented_turns: usize,
    pub samples: usize,
    pub skipped_turns: Vec<String>,
    pub degenerate: usize,
    pub substituted: usize,
}

pub fn augmented_query_id(turn_id: &str, index: usize) -> String {
    format!("{turn_id}#a{index}")
}

/// Query ids of the training samples a session list contributes: turn ids for
/// manual and generated sessions, `Q#a<i>` ids for augmented ones.
pub fn sample_ids(sessions: &[ConversationSession]) -> Vec<String> {
    let mut ids = Vec::new();
    for session in sessions {
        for turn in &session.turns {
            if session.provenance == Provenance::QueryAugmented {
                ids.extend((1..=turn.rewrites.len()).map(|i| augmented_query_id(&turn.turn_id, i)));
            } else {
                ids.push(turn.turn_id.clone());
            }
        }
    }
    ids
}

fn clean_completion(raw: &str) -> String {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    line.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim().to_string()
}

fn same_query(a: &str, b: &str) -> bool {
    tokenize(a) == tokenize(b)
}

/// Produces exactly `t` non-empty rewrites of `query`.
pub fn rewrite_turn(
    query: &str,
    t: usize,
    backend: &dyn TextGenerator,
    params: &GenerationParams,
) -> Result<(Vec<String>, RewriteReport)> {
    if t == 0 {
        return Err(Error::Precondition("t must be >= 1".into()));
    }
    if query.trim().is_empty() {
        return Err(Error::Precondition("query must be non-empty".into()));
    }
    let prompt = render_rewrite_prompt(query);
    let mut report = RewriteReport::default();
    let mut rewrites = Vec::with_capacity(t);
    for i in 1..=t {
        let base = params.reseeded(i as u64 * 1_000);
        let mut rewrite = None;
        for attempt in 0..=PARSE_RETRY_BUDGET {
            match generate(&prompt, &base.reseeded(attempt as u64), backend) {
                Ok(raw) => {
                    let text = clean_completion(&raw);
                    if !text.is_empty() {
                        rewrite = Some(text);
                        break;
                    }
                }
                Err(e @ Error::Precondition(_)) => return Err(e),
                Err(e) => log::warn!("rewrite {i} of `{query}`: attempt {} failed: {e}", attempt + 1),
            }
        }
        let rewrite = rewrite.unwrap_or_else(|| {
            log::warn!("rewrite {i} of `{query}`: substituting the original query");
            report.substituted += 1;
            query.to_string()
        });
        if same_query(&rewrite, query) {
            report.degenerate += 1;
        }
        rewrites.push(rewrite);
    }
    Ok((rewrites, report))
}

/// Rewrites every annotated turn `cfg.t` times and propagates its judgments
/// to each `Q#a<i>`. Turns without judgments are skipped with a warning and
/// sessions without any annotated turn are dropped.
pub fn augment_dataset(
    sessions: &[ConversationSession],
    qrels: &Qrels,
    cfg: &AugmentationConfig,
    backend: &dyn TextGenerator,
) -> Result<(Vec<ConversationSession>, Qrels, AugmentReport)> {
    if cfg.t == 0 {
        return Err(Error::Precondition("t must be >= 1".into()));
    }
    if qrels.source != QrelsSource::Manual {
        return Err(Error::Precondition("query augmentation expects manual qrels".into()));
    }
    let mut report = AugmentReport::default();
    let jobs: Vec<(usize, usize)> = sessions
        .iter()
        .enumerate()
        .flat_map(|(s, session)| (0..session.turns.len()).map(move |t| (s, t)))
        .filter(|&(s, t)| {
            let turn = &sessions[s].turns[t];
            let annotated = qrels.contains_query(&turn.turn_id);
            if !annotated {
                log::warn!("turn `{}` has no judgments; not augmented", turn.turn_id);
            }
            annotated
        })
        .collect();
    let rewritten: Vec<Result<(Vec<String>, RewriteReport)>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let turn = &sessions[s].turns[t];
            let params = cfg.params.reseeded(fnv_of(&turn.turn_id));
            rewrite_turn(&turn.query, cfg.t, backend, &params)
        })
        .collect();

    let mut out_sessions: Vec<ConversationSession> = Vec::new();
    let mut out_qrels = Qrels::new(QrelsSource::Manual);
    let mut results = jobs.iter().zip(rewritten).peekable();
    for (s, session) in sessions.iter().enumerate() {
        let mut augmented = session.clone();
        augmented.provenance = Provenance::QueryAugmented;
        let mut any = false;
        for (t, turn) in augmented.turns.iter_mut().enumerate() {
            turn.rewrites.clear();
            if results.peek().is_some_and(|(&(js, jt), _)| js == s && jt == t) {
                let (_, result) = results.next().expect("peeked");
                let (rewrites, rw_report) = result?;
                report.degenerate += rw_report.degenerate;
                report.substituted += rw_report.substituted;
                let grades = qrels.for_query(&turn.turn_id);
                for i in 1..=rewrites.len() {
                    let qid = augmented_query_id(&turn.turn_id, i);
                    let mut pids: Vec<_> = grades.iter().collect();
                    pids.sort();
                    for (pid, grade) in pids {
                        out_qrels.insert(&qid, pid, *grade)?;
                    }
                }
                report.samples += rewrites.len();
                report.augmented_turns += 1;
                turn.rewrites = rewrites;
                any = true;
            } else {
                report.skipped_turns.push(turn.turn_id.clone());
            }
        }
        if any {
            out_sessions.push(augmented);
        }
    }
    Ok((out_sessions, out_qrels, report))
}

fn fnv_of(s: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(s.as_bytes());
    h.finish()
}

/// Concatenates two datasets, originals first. Sample ids and qrels keys must
/// not collide.
pub fn merge_datasets(
    original: (&[ConversationSession], &Qrels),
    augmented: (&[ConversationSession], &Qrels),
) -> Result<(Vec<ConversationSession>, Qrels)> {
    let mut seen: HashSet<String> = HashSet::new();
    for id in sample_ids(original.0).into_iter().chain(sample_ids(augmented.0)) {
        if !seen.insert(id.clone()) {
            return Err(Error::Invalid(format!("query id `{id}` occurs in both datasets")));
        }
    }
    let mut qrels = original.1.clone();
    for (q, p, g) in augmented.1.iter() {
        qrels
            .insert(q, p, g)
            .map_err(|_| Error::Invalid(format!("qrels key ({q}, {p}) occurs in both datasets")))?;
    }
    let sessions = original.0.iter().chain(augmented.0).cloned().collect();
    Ok((sessions, qrels))
}
