use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicDescription {
    pub topic_id: String,
    #[serde(default)]
    pub title: String,
    pub description: String,
}

impl TopicDescription {
    pub fn validate(&self) -> Result<()> {
        if self.description.trim().is_empty() {
            return Err(Error::Invalid(format!(
                "topic `{}` has an empty description",
                self.topic_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    DialogueGenerated,
    QueryAugmented,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTurn {
    /// `<session_id>_<ordinal>`
    pub turn_id: String,
    pub ordinal: usize,
    pub query: String,
    pub answer: Option<String>,
    pub rewrites: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationSession {
    pub session_id: String,
    pub topic: TopicDescription,
    pub turns: Vec<QueryTurn>,
    pub provenance: Provenance,
}

impl ConversationSession {
    /// Builds a session from `(query, answer)` pairs numbered from 1.
    pub fn new(
        session_id: impl Into<String>,
        topic: TopicDescription,
        provenance: Provenance,
        turns: impl IntoIterator<Item = (String, Option<String>)>,
    ) -> Result<Self> {
        let session_id = session_id.into();
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(i, (query, answer))| QueryTurn {
                turn_id: turn_id(&session_id, i + 1),
                ordinal: i + 1,
                query,
                answer,
                rewrites: Vec::new(),
            })
            .collect();
        let session = Self {
            session_id,
            topic,
            turns,
            provenance,
        };
        session.validate()?;
        Ok(session)
    }

    pub fn validate(&self) -> Result<()> {
        let sid = &self.session_id;
        if sid.is_empty() {
            return Err(Error::Invalid("empty session id".into()));
        }
        self.topic.validate()?;
        if self.turns.is_empty() {
            return Err(Error::Invalid(format!("session `{sid}` has no turns")));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.ordinal != i + 1 {
                return Err(Error::Invalid(format!(
                    "session `{sid}`: turn ordinals must be 1..n contiguous, found {} at position {}",
                    turn.ordinal,
                    i + 1
                )));
            }
            if turn.turn_id != turn_id(sid, turn.ordinal) {
                return Err(Error::Invalid(format!(
                    "session `{sid}`: turn id `{}` does not match ordinal {}",
                    turn.turn_id, turn.ordinal
                )));
            }
            if turn.query.trim().is_empty() {
                return Err(Error::Invalid(format!("turn `{}` has an empty query", turn.turn_id)));
            }
        }
        Ok(())
    }
}

pub fn turn_id(session_id: &str, ordinal: usize) -> String {
    format!("{session_id}_{ordinal}")
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    ordinal: usize,
    query: String,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    rewrites: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    provenance: Provenance,
    topic: TopicDescription,
    turns: Vec<TurnRecord>,
}

impl SessionRecord {
    fn from_session(s: &ConversationSession) -> Self {
        Self {
            session_id: s.session_id.clone(),
            provenance: s.provenance,
            topic: s.topic.clone(),
            turns: s
                .turns
                .iter()
                .map(|t| TurnRecord {
                    ordinal: t.ordinal,
                    query: t.query.clone(),
                    answer: t.answer.clone(),
                    rewrites: t.rewrites.clone(),
                })
                .collect(),
        }
    }

    fn into_session(self) -> Result<ConversationSession> {
        let session_id = self.session_id;
        let turns = self
            .turns
            .into_iter()
            .map(|t| QueryTurn {
                turn_id: turn_id(&session_id, t.ordinal),
                ordinal: t.ordinal,
                query: t.query,
                answer: t.answer,
                rewrites: t.rewrites,
            })
            .collect();
        let session = ConversationSession {
            session_id,
            topic: self.topic,
            turns,
            provenance: self.provenance,
        };
        session.validate()?;
        Ok(session)
    }
}

pub fn read_sessions(path: impl AsRef<Path>) -> Result<Vec<ConversationSession>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sessions = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
        let session = record
            .into_session()
            .map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn write_sessions(sessions: &[ConversationSession], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for session in sessions {
        session.validate()?;
        serde_json::to_writer(&mut buf, &SessionRecord::from_session(session))
            .map_err(|e| Error::Invalid(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
