use std::collections::BTreeMap;

use thiserror::Error;

use crate::datamodel::{ConversationSession, Provenance, TopicDescription};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no Q<i>:/A<i>: markers found in completion")]
    NoMarkers,
    #[error("missing marker `{0}`")]
    MissingMarker(String),
    #[error("expected {expected} turns, found {found}")]
    TooFewTurns { expected: usize, found: usize },
    #[error("turn {0} has empty query text")]
    EmptyQuery(usize),
    #[error("turn {0} has empty answer text")]
    EmptyAnswer(usize),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Query,
    Answer,
}

/// Strips list bullets, emphasis and leading whitespace.
fn strip_decoration(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        for prefix in ["- ", "* ", "• ", "**", "__", "> "] {
            if let Some(rest) = s.strip_prefix(prefix) {
                s = rest.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

/// Recognises `Q3:` / `a 3 :` style markers and returns the remaining text.
fn marker(line: &str) -> Option<(Role, usize, &str)> {
    let s = strip_decoration(line);
    let mut chars = s.char_indices();
    let (_, first) = chars.next()?;
    let role = match first.to_ascii_lowercase() {
        'q' => Role::Query,
        'a' => Role::Answer,
        _ => return None,
    };
    let rest = s[first.len_utf8()..].trim_start();
    let digits_end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    if digits_end == 0 {
        return None;
    }
    let ordinal: usize = rest[..digits_end].parse().ok()?;
    let rest = rest[digits_end..].trim_start();
    let rest = rest.trim_start_matches(['*', '_']).trim_start();
    let rest = rest.strip_prefix(':')?;
    let rest = rest.trim_start_matches(['*', '_']);
    Some((role, ordinal, rest.trim()))
}

/// Extracts a dialogue session from a `Q<i>:`/`A<i>:` transcript.
///
/// Lines without a marker continue the previous query or answer. Turns past
/// `expected_turns` are ignored.
pub fn parse_session(
    raw: &str,
    topic: &TopicDescription,
    expected_turns: usize,
) -> Result<ConversationSession, ParseError> {
    let mut turns: BTreeMap<usize, (Option<String>, Option<String>)> = BTreeMap::new();
    let mut current: Option<(Role, usize)> = None;
    for line in raw.lines() {
        if let Some((role, ordinal, text)) = marker(line) {
            let slot = turns.entry(ordinal).or_default();
            let field = match role {
                Role::Query => &mut slot.0,
                Role::Answer => &mut slot.1,
            };
            // A repeated marker keeps the first occurrence.
            if field.is_none() {
                *field = Some(text.to_string());
                current = Some((role, ordinal));
            } else {
                current = None;
            }
        } else if let Some((role, ordinal)) = current {
            let text = strip_decoration(line).trim();
            if text.is_empty() {
                continue;
            }
            let slot = turns.get_mut(&ordinal).expect("current turn exists");
            let field = match role {
                Role::Query => &mut slot.0,
                Role::Answer => &mut slot.1,
            };
            let f = field.as_mut().expect("current field exists");
            if !f.is_empty() {
                f.push(' ');
            }
            f.push_str(text);
        }
    }
    if turns.is_empty() {
        return Err(ParseError::NoMarkers);
    }
    let expected = expected_turns.max(1);
    let mut pairs = Vec::with_capacity(expected);
    for ordinal in 1..=expected {
        let Some((query, answer)) = turns.get(&ordinal) else {
            let found = (1..).take_while(|i| turns.contains_key(i)).count();
            return Err(ParseError::TooFewTurns { expected, found });
        };
        let query = query
            .as_deref()
            .ok_or_else(|| ParseError::MissingMarker(format!("Q{ordinal}")))?;
        let answer = answer
            .as_deref()
            .ok_or_else(|| ParseError::MissingMarker(format!("A{ordinal}")))?;
        if query.trim().is_empty() {
            return Err(ParseError::EmptyQuery(ordinal));
        }
        if answer.trim().is_empty() {
            return Err(ParseError::EmptyAnswer(ordinal));
        }
        pairs.push((query.trim().to_string(), Some(answer.trim().to_string())));
    }
    let session_id = format!("{}-g", topic.topic_id);
    ConversationSession::new(session_id, topic.clone(), Provenance::DialogueGenerated, pairs)
        .map_err(|_| ParseError::EmptyQuery(0))
}
