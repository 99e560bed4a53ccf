//! Dialogue-level generation: one LLM call writes a whole session for a topic.

use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{ConversationSession, TopicDescription};
use crate::llm::{generate, parse_session, render_dialogue_prompt, GenerationParams, TextGenerator, PARSE_RETRY_BUDGET};
use crate::{Error, Result};

/// Turns per generated session when none is configured.
pub const DEFAULT_TURNS: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerationReport {
    pub requested: usize,
    pub produced: usize,
    pub failed: usize,
    pub failed_sessions: Vec<String>,
}

/// Renames a session, rewriting its turn ids to match.
pub(crate) fn with_session_id(mut session: ConversationSession, session_id: String) -> ConversationSession {
    for turn in &mut session.turns {
        turn.turn_id = format!("{session_id}_{}", turn.ordinal);
    }
    session.session_id = session_id;
    session
}

fn generate_nth(
    topic: &TopicDescription,
    index: usize,
    n_turns: usize,
    backend: &dyn TextGenerator,
    params: &GenerationParams,
) -> Result<ConversationSession> {
    if n_turns == 0 {
        return Err(Error::Precondition("n_turns must be >= 1".into()));
    }
    topic.validate()?;
    let prompt = render_dialogue_prompt(topic, n_turns);
    let base = params.reseeded(index as u64 * 1_000);
    for attempt in 0..=PARSE_RETRY_BUDGET {
        let attempt_params = base.reseeded(attempt as u64);
        let outcome = generate(&prompt, &attempt_params, backend)
            .and_then(|raw| parse_session(&raw, topic, n_turns).map_err(Error::from));
        match outcome {
            Ok(session) => {
                return Ok(with_session_id(session, format!("{}-g{index}", topic.topic_id)));
            }
            Err(e @ Error::Precondition(_)) => return Err(e),
            Err(e) => log::warn!(
                "topic `{}` session {index}: attempt {} failed: {e}",
                topic.topic_id,
                attempt + 1
            ),
        }
    }
    log::warn!("topic `{}` session {index}: giving up", topic.topic_id);
    Err(Error::GenerationFailed(topic.topic_id.clone()))
}

/// Generates one session (`<topic_id>-g1`) with the regeneration budget.
pub fn generate_dialogue_session(
    topic: &TopicDescription,
    n_turns: usize,
    backend: &dyn TextGenerator,
    params: &GenerationParams,
) -> Result<ConversationSession> {
    generate_nth(topic, 1, n_turns, backend, params)
}

/// Generates `sessions_per_topic` sessions per topic, named `<topic_id>-g<k>`.
///
/// Failures are skipped and counted. Output order follows input order.
pub fn generate_session_corpus(
    topics: &[TopicDescription],
    sessions_per_topic: usize,
    n_turns: usize,
    backend: &dyn TextGenerator,
    params: &GenerationParams,
) -> Result<(Vec<ConversationSession>, GenerationReport)> {
    if topics.is_empty() {
        return Err(Error::Precondition("no topics given".into()));
    }
    if n_turns == 0 {
        return Err(Error::Precondition("n_turns must be >= 1".into()));
    }
    let jobs: Vec<(&TopicDescription, usize)> = topics
        .iter()
        .flat_map(|t| (1..=sessions_per_topic).map(move |k| (t, k)))
        .collect();
    let results: Vec<(String, Result<ConversationSession>)> = jobs
        .par_iter()
        .map(|&(topic, k)| {
            (
                format!("{}-g{k}", topic.topic_id),
                generate_nth(topic, k, n_turns, backend, params),
            )
        })
        .collect();
    let mut report = GenerationReport {
        requested: jobs.len(),
        ..Default::default()
    };
    let mut sessions = Vec::new();
    for (id, result) in results {
        match result {
            Ok(s) => sessions.push(s),
            Err(Error::GenerationFailed(_)) => report.failed_sessions.push(id),
            Err(e) => return Err(e),
        }
    }
    report.produced = sessions.len();
    report.failed = report.failed_sessions.len();
    Ok((sessions, report))
}
