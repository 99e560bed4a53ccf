//! Offline backend that answers both prompt templates deterministically.
//!
//! Dialogue prompts yield a `Q<i>:`/`A<i>:` transcript built from the topic's
//! own content words; turns after the first lean on "it"/"they" so that
//! context-dependent queries show up. Rewrite prompts yield a paraphrase of
//! the input query. Any other prompt is echoed back.

use std::fmt::Write as _;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::prompts::{QUERY_MARKER, TOPIC_MARKER, TURNS_MARKER};
use super::{GenerationParams, TextGenerator};
use crate::text::tokenize;
use crate::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how",
    "in", "into", "is", "it", "its", "of", "on", "or", "s", "that", "the", "their", "them",
    "they", "this", "to", "was", "what", "when", "where", "which", "who", "why", "with",
    "description", "title", "about", "information", "find", "looking", "user", "wants",
];

const FIRST_QUERIES: &[&str] = &[
    "what is {0} {1}",
    "tell me about {0} and {1}",
    "what should i know about {0} {1}",
    "how does {0} relate to {1}",
];

const FOLLOW_UP_QUERIES: &[&str] = &[
    "how is it connected to {0}",
    "what about its {0}",
    "do they involve {0} or {1}",
    "why does it matter for {0}",
    "what role do they play in {0}",
    "is it linked to {0}",
    "what else about {0}",
    "how do they affect {0} and {1}",
];

const ANSWERS: &[&str] = &[
    "{0} is closely tied to {1} and {2}.",
    "It mainly concerns {0}, {1} and {2}.",
    "Studies of {0} point to {1}, often together with {2}.",
    "Yes, {0} and {1} are both part of it, as is {2}.",
];

const REWRITE_FRAMES: &[&str] = &[
    "could you tell me {q}",
    "i would like to know {q}",
    "please explain {q}",
    "{q} explained",
    "looking for information on {q}",
    "help me understand {q}",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("what", "which"),
    ("how", "in what way"),
    ("about", "regarding"),
    ("tell", "inform"),
    ("know", "learn"),
    ("is", "happens to be"),
];

fn seed_for(prompt: &str, params: &GenerationParams) -> u64 {
    let mut h = FnvHasher::default();
    h.write(prompt.as_bytes());
    h.finish() ^ params.seed.unwrap_or(0)
}

fn fill(template: &str, words: &[&str]) -> String {
    let mut out = template.to_string();
    for (i, w) in words.iter().enumerate() {
        out = out.replace(&format!("{{{i}}}"), w);
    }
    out
}

fn content_words(text: &str) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for token in tokenize(text) {
        if !STOPWORDS.contains(&token.as_str()) && !words.contains(&token) {
            words.push(token);
        }
    }
    if words.is_empty() {
        words = tokenize(text);
    }
    if words.is_empty() {
        words.push("topic".into());
    }
    words
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String], n: usize) -> Vec<&'a str> {
    (0..n)
        .map(|_| words[rng.random_range(0..words.len())].as_str())
        .collect()
}

fn dialogue(topic: &str, n_turns: usize, rng: &mut ChaCha8Rng) -> String {
    let words = content_words(topic);
    let mut out = String::new();
    for i in 1..=n_turns {
        let frames = if i == 1 { FIRST_QUERIES } else { FOLLOW_UP_QUERIES };
        let frame = frames.choose(rng).expect("non-empty");
        let query = fill(frame, &pick(rng, &words, 2));
        let answer = fill(ANSWERS.choose(rng).expect("non-empty"), &pick(rng, &words, 3));
        let _ = writeln!(out, "Q{i}: {query}?");
        let _ = writeln!(out, "A{i}: {answer}");
    }
    out
}

fn paraphrase(query: &str, rng: &mut ChaCha8Rng) -> String {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return query.to_string();
    }
    let swapped: Vec<String> = tokens
        .iter()
        .map(|t| match SYNONYMS.iter().find(|(from, _)| from == t) {
            Some((_, to)) if rng.random_bool(0.5) => (*to).to_string(),
            _ => t.clone(),
        })
        .collect();
    let frame = REWRITE_FRAMES.choose(rng).expect("non-empty");
    frame.replace("{q}", &swapped.join(" "))
}

fn section_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    prompt.find(marker).map(|i| &prompt[i + marker.len()..])
}

impl TextGenerator for MockBackend {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(prompt, params));
        if let Some(topic) = section_after(prompt, TOPIC_MARKER) {
            let n_turns = section_after(prompt, TURNS_MARKER)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|n| n.parse::<usize>().ok())
                .unwrap_or(1)
                .max(1);
            return Ok(dialogue(topic, n_turns, &mut rng));
        }
        if let Some(query) = section_after(prompt, QUERY_MARKER) {
            return Ok(paraphrase(query.trim(), &mut rng));
        }
        Ok(prompt.to_string())
    }
}
