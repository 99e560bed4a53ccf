//! Seeded synthetic corpus for desk-scale runs.
//!
//! Every topic owns a private vocabulary of pseudo-words; passages mix a
//! handful of their topic's words into text drawn from a shared,
//! Zipf-weighted background vocabulary that also contains the function words
//! queries are made of. Manual sessions ask about topic words wrapped in
//! those function words, so raw term overlap is a noisy relevance signal.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::datamodel::{
    write_qrels, write_sessions, ConversationSession, Passage, PassageCollection, Provenance, Qrels,
    QrelsSource, TopicDescription,
};
use crate::{Error, Result};

const BACKGROUND: &[&str] = &[
    "the", "of", "and", "to", "is", "in", "what", "it", "about", "how", "does", "they", "that",
    "for", "on", "are", "with", "as", "this", "be", "their", "more", "me", "tell", "can", "from",
    "or", "by", "its", "also", "which", "some", "people", "many", "other", "time", "used", "new",
    "known", "often", "part", "may", "such", "first", "most", "year", "way", "work", "number",
    "found", "world", "called", "area", "form", "because", "each", "between", "well", "during",
    "example",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "zi", "pa", "do", "gu", "fe", "bri", "cho",
    "dra", "ex", "fli", "gor", "hal", "ino", "jul", "kes", "lum", "mor", "nix", "ost", "pry",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub topics: usize,
    pub passages_per_topic: usize,
    pub topic_vocab: usize,
    pub topic_words_per_passage: usize,
    pub background_words_per_passage: usize,
    pub train_sessions_per_topic: usize,
    pub eval_sessions_per_topic: usize,
    pub turns_per_session: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            topics: 20,
            passages_per_topic: 50,
            topic_vocab: 24,
            topic_words_per_passage: 6,
            background_words_per_passage: 34,
            train_sessions_per_topic: 2,
            eval_sessions_per_topic: 2,
            turns_per_session: 4,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub collection: PassageCollection,
    pub topics: Vec<TopicDescription>,
    /// Manually annotated sessions used as original training data.
    pub train_sessions: Vec<ConversationSession>,
    pub train_qrels: Qrels,
    /// Held-out sessions for evaluation.
    pub eval_sessions: Vec<ConversationSession>,
    pub eval_qrels: Qrels,
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub collection: PathBuf,
    pub topics: PathBuf,
    pub train_sessions: PathBuf,
    pub train_qrels: PathBuf,
    pub eval_sessions: PathBuf,
    pub eval_qrels: PathBuf,
    pub config: PathBuf,
}

/// Pipeline config for the fixture with the mock backend. The training
/// section is tuned for the hashed encoder, which needs a far larger step
/// than a pretrained transformer.
pub const FIXTURE_CONFIG: &str = r#"# Desk-scale run over the synthetic fixture with the offline mock backend.
scenario = "dialogue_unsupervised"
seed = 42
workspace = "workspace"

[data]
collection = "collection.tsv"
topics = "topics.jsonl"
train_sessions = "train_sessions.jsonl"
train_qrels = "train_qrels.txt"
eval_sessions = "eval_sessions.jsonl"
eval_qrels = "eval_qrels.txt"

[backend]
kind = "mock"

[generation]
sessions_per_topic = 5
turns = 8

[supervision]
retriever = "bm25"
top_k = 5
m = 3
form = "qat"

[augmentation]
t = 2

[training]
batch_size = 16
epochs = 10
learning_rate = 0.1

[retrieval]
mode = "exact"
k = 100

[evaluation]
metrics = ["mrr", "ndcg@3", "recall@100"]
"#;

fn pseudo_words(count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words: Vec<String> = Vec::with_capacity(count);
    while words.len() < count {
        let n = rng.random_range(2..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if !words.contains(&w) && !BACKGROUND.contains(&w.as_str()) {
            words.push(w);
        }
    }
    words
}

const FIRST_TURN: &[&str] = &["what is the {w} of the {v}", "tell me about the {w} and {v}", "what are {w} and how does {v} work"];
const LATER_TURN: &[&str] = &[
    "what about the {w} of it",
    "how does it affect the {w}",
    "and what is their {w}",
    "tell me more about how they use {w}",
    "is it known for the {w}",
];

impl SyntheticFixture {
    pub fn generate(spec: &FixtureSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let vocab = pseudo_words(spec.topics * spec.topic_vocab, &mut rng);
        let zipf = Zipf::new(BACKGROUND.len() as f64, 1.0).expect("valid zipf");

        let mut passages = Vec::with_capacity(spec.topics * spec.passages_per_topic);
        let mut topic_passages: Vec<Vec<(String, Vec<String>)>> = Vec::new();
        let mut topics = Vec::with_capacity(spec.topics);
        for t in 0..spec.topics {
            let words = &vocab[t * spec.topic_vocab..(t + 1) * spec.topic_vocab];
            let mut own = Vec::new();
            for k in 0..spec.passages_per_topic {
                let mut tokens: Vec<String> = words
                    .choose_multiple(&mut rng, spec.topic_words_per_passage)
                    .cloned()
                    .collect();
                let topical = tokens.clone();
                for _ in 0..spec.background_words_per_passage {
                    let r = zipf.sample(&mut rng) as usize - 1;
                    tokens.push(BACKGROUND[r.min(BACKGROUND.len() - 1)].to_string());
                }
                tokens.shuffle(&mut rng);
                let pid = format!("P{t:02}{k:03}");
                passages.push(Passage { pid: pid.clone(), text: tokens.join(" ") });
                own.push((pid, topical));
            }
            topic_passages.push(own);
            let described: Vec<&str> = words[..8].iter().map(String::as_str).collect();
            topics.push(TopicDescription {
                topic_id: format!("T{t:02}"),
                title: format!("{} {}", described[0], described[1]),
                description: format!(
                    "The user wants to learn about {} and {}, including {}, {} and {}, and how they relate to {}, {} and {}.",
                    described[0], described[1], described[2], described[3], described[4],
                    described[5], described[6], described[7]
                ),
            });
        }
        let collection = PassageCollection::from_passages(passages)?;

        let mut make_sessions = |prefix: &str, per_topic: usize| -> Result<(Vec<ConversationSession>, Qrels)> {
            let mut sessions = Vec::new();
            let mut qrels = Qrels::new(QrelsSource::Manual);
            for (t, topic) in topics.iter().enumerate() {
                let words = &vocab[t * spec.topic_vocab..(t + 1) * spec.topic_vocab];
                for s in 0..per_topic {
                    let sid = format!("{prefix}{t:02}-{s}");
                    let mut turns = Vec::new();
                    for i in 0..spec.turns_per_session {
                        let w = words[..12].choose(&mut rng).expect("vocab").clone();
                        let v = words[..12].choose(&mut rng).expect("vocab").clone();
                        let frame = if i == 0 { FIRST_TURN } else { LATER_TURN }.choose(&mut rng).expect("frames");
                        turns.push((frame.replace("{w}", &w).replace("{v}", &v), w));
                    }
                    for (i, (_, w)) in turns.iter().enumerate() {
                        let qid = format!("{sid}_{}", i + 1);
                        for (pid, topical) in &topic_passages[t] {
                            let grade = if topical.contains(w) { 2 } else { 1 };
                            qrels.insert(&qid, pid, grade)?;
                        }
                    }
                    sessions.push(ConversationSession::new(
                        sid,
                        topic.clone(),
                        Provenance::Manual,
                        turns.into_iter().map(|(q, _)| (q, None)),
                    )?);
                }
            }
            Ok((sessions, qrels))
        };
        let (train_sessions, train_qrels) = make_sessions("train", spec.train_sessions_per_topic)?;
        let (eval_sessions, eval_qrels) = make_sessions("eval", spec.eval_sessions_per_topic)?;
        Ok(Self {
            collection,
            topics,
            train_sessions,
            train_qrels,
            eval_sessions,
            eval_qrels,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<FixturePaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = FixturePaths {
            collection: dir.join("collection.tsv"),
            topics: dir.join("topics.jsonl"),
            train_sessions: dir.join("train_sessions.jsonl"),
            train_qrels: dir.join("train_qrels.txt"),
            eval_sessions: dir.join("eval_sessions.jsonl"),
            eval_qrels: dir.join("eval_qrels.txt"),
            config: dir.join("config.toml"),
        };
        let tsv: String = self
            .collection
            .iter()
            .map(|p| format!("{}\t{}\n", p.pid, p.text))
            .collect();
        fs::write(&paths.collection, tsv).map_err(|e| Error::io(&paths.collection, e))?;
        write_topics(&self.topics, &paths.topics)?;
        write_sessions(&self.train_sessions, &paths.train_sessions)?;
        write_qrels(&self.train_qrels, &paths.train_qrels)?;
        write_sessions(&self.eval_sessions, &paths.eval_sessions)?;
        write_qrels(&self.eval_qrels, &paths.eval_qrels)?;
        fs::write(&paths.config, FIXTURE_CONFIG).map_err(|e| Error::io(&paths.config, e))?;
        Ok(paths)
    }
}

/// Topics file: one `{"topic_id", "title", "description"}` object per line.
pub fn write_topics(topics: &[TopicDescription], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in topics {
        out.push_str(&serde_json::to_string(t).map_err(|e| Error::Invalid(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_topics(path: impl AsRef<Path>) -> Result<Vec<TopicDescription>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut topics = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let topic: TopicDescription =
            serde_json::from_str(line).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        topic.validate().map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        topics.push(topic);
    }
    Ok(topics)
}
