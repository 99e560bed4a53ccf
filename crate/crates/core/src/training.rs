//! Query-encoder fine-tuning with an in-batch contrastive objective.
//!
//! The query is the concatenation of all turns so far; its score against a
//! passage is the dot product of the two embeddings. Only the query encoder
//! moves; the passage encoder is borrowed immutably throughout.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ConversationSession, PassageCollection, Provenance, Qrels, TrainingExample};
use crate::query_aug::augmented_query_id;
use crate::retrieval::{dot, encode, Encoder, EncoderRole, SESSION_MAX_LEN};
use crate::text::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    InBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub negatives: NegativeSampling,
    pub max_concat_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 5,
            learning_rate: 1e-5,
            seed: 0,
            negatives: NegativeSampling::InBatch,
            max_concat_len: SESSION_MAX_LEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Precondition("in-batch negatives need batch_size >= 2".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Precondition("learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Joins queries with single spaces, dropping whole turns from the front
/// until at most `max_len` tokens remain. The last query is only cut (from
/// its front) when it alone is too long.
pub fn reformulate(queries: &[&str], max_len: usize) -> String {
    let Some((current, history)) = queries.split_last() else {
        return String::new();
    };
    let counts: Vec<usize> = history.iter().map(|q| tokenize(q).len()).collect();
    let current_len = tokenize(current).len();
    if current_len > max_len {
        let words: Vec<&str> = current.split_whitespace().collect();
        let mut start = 0;
        while start < words.len() && tokenize(&words[start..].join(" ")).len() > max_len {
            start += 1;
        }
        return words[start..].join(" ");
    }
    let mut total: usize = counts.iter().sum::<usize>() + current_len;
    let mut first = 0;
    while total > max_len {
        total -= counts[first];
        first += 1;
    }
    history[first..]
        .iter()
        .chain(std::iter::once(current))
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `q_1 ... q_{n-1} q_n` for turn `n` (1-based).
pub fn reformulate_query(session: &ConversationSession, n: usize, max_concat_len: usize) -> Result<String> {
    if n == 0 || n > session.turns.len() {
        return Err(Error::Precondition(format!(
            "turn {n} outside 1..={}",
            session.turns.len()
        )));
    }
    let queries: Vec<&str> = session.turns[..n].iter().map(|t| t.query.as_str()).collect();
    Ok(reformulate(&queries, max_concat_len))
}

/// Reformulated queries of every sample in `sessions`, keyed by query id.
/// Augmented sessions contribute one query per rewrite, with the rewrite in
/// place of the original turn and the history left untouched.
pub fn sample_queries(sessions: &[ConversationSession], max_concat_len: usize) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for session in sessions {
        for (i, turn) in session.turns.iter().enumerate() {
            let history: Vec<&str> = session.turns[..i].iter().map(|t| t.query.as_str()).collect();
            if session.provenance == Provenance::QueryAugmented {
                for (r, rewrite) in turn.rewrites.iter().enumerate() {
                    let mut qs = history.clone();
                    qs.push(rewrite);
                    out.push((augmented_query_id(&turn.turn_id, r + 1), reformulate(&qs, max_concat_len)));
                }
            } else {
                let mut qs = history;
                qs.push(&turn.query);
                out.push((turn.turn_id.clone(), reformulate(&qs, max_concat_len)));
            }
        }
    }
    out
}

/// One example per sample with at least one judgment of grade >= 1.
pub fn examples_from_sessions(
    sessions: &[ConversationSession],
    qrels: &Qrels,
    max_concat_len: usize,
) -> Vec<TrainingExample> {
    sample_queries(sessions, max_concat_len)
        .into_iter()
        .filter_map(|(qid, query)| {
            let mut positives: Vec<String> = qrels
                .for_query(&qid)
                .into_iter()
                .filter(|(_, g)| *g >= 1)
                .map(|(p, _)| p)
                .collect();
            positives.sort();
            TrainingExample::new(qid, query, positives).ok()
        })
        .collect()
}

/// Negative log-likelihood of the positive under a softmax over dot-product
/// scores, and its gradient with respect to `q`.
pub fn contrastive_loss(q: &[f64], positive: &[f64], negatives: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    if negatives.is_empty() {
        return Err(Error::Precondition("contrastive loss needs at least one negative".into()));
    }
    let dim = q.len();
    for v in std::iter::once(positive).chain(negatives.iter().copied()) {
        if v.len() != dim {
            return Err(Error::DimMismatch { expected: dim, actual: v.len() });
        }
    }
    let scores: Vec<f64> = std::iter::once(dot(q, positive))
        .chain(negatives.iter().map(|n| dot(q, n)))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + z.ln();
    let loss = log_z - scores[0];

    let mut grad: Vec<f64> = positive.iter().map(|p| -p).collect();
    for (j, v) in std::iter::once(positive).chain(negatives.iter().copied()).enumerate() {
        let w = (scores[j] - log_z).exp();
        for (g, x) in grad.iter_mut().zip(v) {
            *g += w * x;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    /// Index into the example list.
    pub example: usize,
    pub positive: String,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchReport {
    pub batches: usize,
    pub items: usize,
    pub dropped_items: usize,
    /// In-batch negatives removed because they are positives of the item's own query.
    pub collisions: usize,
}

/// Shuffles `(example, positive)` pairs with `cfg.seed` and cuts them into
/// batches; each item's negatives are the other items' positives. A trailing
/// singleton batch is dropped.
pub fn make_batches(examples: &[TrainingExample], cfg: &TrainConfig) -> Result<(Vec<Vec<BatchItem>>, BatchReport)> {
    cfg.validate()?;
    let mut pairs: Vec<(usize, String)> = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.positive_pids.is_empty() {
            return Err(Error::Invalid(format!("example `{}` has no positive", ex.query_id)));
        }
        pairs.extend(ex.positive_pids.iter().map(|p| (i, p.clone())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pairs.shuffle(&mut rng);

    let mut report = BatchReport::default();
    let mut batches = Vec::new();
    for chunk in pairs.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            log::warn!("dropping a batch of {} item(s): no negatives possible", chunk.len());
            report.dropped_items += chunk.len();
            continue;
        }
        let mut batch = Vec::with_capacity(chunk.len());
        for (i, (ex, pos)) in chunk.iter().enumerate() {
            let own: HashSet<&str> = examples[*ex].positive_pids.iter().map(String::as_str).collect();
            let mut seen = HashSet::new();
            let mut negatives = Vec::with_capacity(chunk.len() - 1);
            for (j, (_, other)) in chunk.iter().enumerate() {
                if i == j {
                    continue;
                }
                if own.contains(other.as_str()) || !seen.insert(other.as_str()) {
                    report.collisions += 1;
                    continue;
                }
                negatives.push(other.clone());
            }
            batch.push(BatchItem {
                example: *ex,
                positive: pos.clone(),
                negatives,
            });
        }
        report.items += batch.len();
        batches.push(batch);
    }
    report.batches = batches.len();
    Ok((batches, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingReport {
    pub epoch_losses: Vec<f64>,
    pub batches: BatchReport,
    /// Items skipped because every negative collided.
    pub skipped_items: usize,
}

/// Fine-tunes a copy of `query_encoder` with plain SGD. The batch sequence is
/// fixed by `cfg.seed` and replayed every epoch.
pub fn train(
    examples: &[TrainingExample],
    collection: &PassageCollection,
    query_encoder: &Encoder,
    passage_encoder: &Encoder,
    cfg: &TrainConfig,
) -> Result<(Encoder, TrainingReport)> {
    cfg.validate()?;
    if query_encoder.role != EncoderRole::Query || passage_encoder.role != EncoderRole::Passage {
        return Err(Error::Precondition("encoder roles must be (query, passage)".into()));
    }
    if query_encoder.dim() != passage_encoder.dim() {
        return Err(Error::DimMismatch {
            expected: passage_encoder.dim(),
            actual: query_encoder.dim(),
        });
    }
    let (batches, batch_report) = make_batches(examples, cfg)?;

    let mut passage_vecs: HashMap<&str, Vec<f64>> = HashMap::new();
    for ex in examples {
        for pid in &ex.positive_pids {
            if !passage_vecs.contains_key(pid.as_str()) {
                let passage = collection.get(pid).ok_or_else(|| Error::UnknownPid(pid.clone()))?;
                passage_vecs.insert(pid.as_str(), encode(&passage.text, passage_encoder));
            }
        }
    }
    let mut encoder = query_encoder.clone();
    let features: Vec<Vec<(usize, f64)>> = examples
        .iter()
        .map(|ex| encoder.features(&ex.reformulated_query))
        .collect();

    let mut report = TrainingReport {
        batches: batch_report,
        ..Default::default()
    };
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        let mut skipped = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut used = 0usize;
            let mut per_item = Vec::with_capacity(batch.len());
            for item in batch {
                if item.negatives.is_empty() {
                    skipped += 1;
                    continue;
                }
                let feats = &features[item.example];
                let q = encoder.project(feats);
                let pos = &passage_vecs[item.positive.as_str()];
                let negs: Vec<&[f64]> = item
                    .negatives
                    .iter()
                    .map(|p| passage_vecs[p.as_str()].as_slice())
                    .collect();
                let (loss, grad_q) = contrastive_loss(&q, pos, &negs)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b,
                        detail: format!(
                            "query `{}`, |q|={:.3e}, positive `{}`",
                            examples[item.example].query_id,
                            dot(&q, &q).sqrt(),
                            item.positive
                        ),
                    });
                }
                loss_sum += loss;
                used += 1;
                per_item.push((feats, grad_q));
            }
            counted += used;
            if used == 0 {
                continue;
            }
            let scale = 1.0 / used as f64;
            for (feats, grad_q) in per_item {
                for &(bucket, count) in feats {
                    let g = grads.entry(bucket).or_insert_with(|| vec![0.0; grad_q.len()]);
                    for (gi, x) in g.iter_mut().zip(&grad_q) {
                        *gi += scale * count * x;
                    }
                }
            }
            if cfg.learning_rate > 0.0 {
                for (bucket, g) in grads {
                    for (w, gi) in encoder.row_mut(bucket).iter_mut().zip(g) {
                        *w -= cfg.learning_rate * gi;
                    }
                }
            }
        }
        let mean = if counted == 0 { 0.0 } else { loss_sum / counted as f64 };
        log::info!("epoch {epoch}: mean loss {mean:.6} over {counted} item(s)");
        report.epoch_losses.push(mean);
        report.skipped_items = skipped;
    }
    Ok((encoder, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Passage, TopicDescription};

    fn throat() -> ConversationSession {
        ConversationSession::new(
            "s",
            TopicDescription { topic_id: "t".into(), title: String::new(), description: "d".into() },
            Provenance::Manual,
            ["what is throat cancer", "is it treatable", "what are symptoms"]
                .map(|q| (q.to_string(), None)),
        )
        .unwrap()
    }

    #[test]
    fn first_turn_is_itself() {
        assert_eq!(reformulate_query(&throat(), 1, 512).unwrap(), "what is throat cancer");
    }

    #[test]
    fn concatenates_history() {
        assert_eq!(
            reformulate_query(&throat(), 3, 512).unwrap(),
            "what is throat cancer is it treatable what are symptoms"
        );
    }

    #[test]
    fn drops_earliest_turn_when_over_budget() {
        assert_eq!(reformulate_query(&throat(), 3, 8).unwrap(), "is it treatable what are symptoms");
        assert_eq!(reformulate_query(&throat(), 3, 3).unwrap(), "what are symptoms");
        assert_eq!(reformulate_query(&throat(), 3, 2).unwrap(), "are symptoms");
        assert!(reformulate_query(&throat(), 4, 8).is_err());
    }

    #[test]
    fn symmetric_losses() {
        let q = [1.0, 0.5];
        let p = [0.2, 0.4];
        let (l, _) = contrastive_loss(&q, &p, &[&p]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let (l, _) = contrastive_loss(&q, &p, &[&p, &p, &p]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_negative_unit_margin() {
        let (l, _) = contrastive_loss(&[1.0], &[1.0], &[&[0.0]]).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn no_negatives_is_an_error() {
        assert!(contrastive_loss(&[1.0], &[1.0], &[]).is_err());
    }

    #[test]
    fn stable_for_huge_scores() {
        let (l, g) = contrastive_loss(&[1000.0], &[1.0], &[&[2.0]]).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    fn examples(n: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| TrainingExample::new(format!("q{i}"), format!("query {i}"), vec![format!("p{i}")]).unwrap())
            .collect()
    }

    #[test]
    fn in_batch_negatives() {
        let cfg = TrainConfig { seed: 4, ..Default::default() };
        let (batches, report) = make_batches(&examples(16), &cfg).unwrap();
        assert_eq!(batches.len(), 1);
        assert!(batches[0].iter().all(|it| it.negatives.len() == 15));
        assert_eq!(report.collisions, 0);
        assert_eq!(make_batches(&examples(16), &cfg).unwrap().0, batches);
    }

    #[test]
    fn trailing_singleton_dropped() {
        let cfg = TrainConfig::default();
        let (batches, report) = make_batches(&examples(17), &cfg).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 16);
        assert_eq!(report.dropped_items, 1);
    }

    #[test]
    fn shared_positives_are_counted_not_used() {
        let mut ex = examples(3);
        ex[1].positive_pids = vec!["p0".into()];
        let (batches, report) = make_batches(&ex, &TrainConfig::default()).unwrap();
        let item0 = batches[0].iter().find(|b| b.example == 0).unwrap();
        assert!(!item0.negatives.contains(&"p0".to_string()));
        assert_eq!(item0.negatives, vec!["p2".to_string()]);
        // item 2 sees `p0` twice and keeps it once
        let item2 = batches[0].iter().find(|b| b.example == 2).unwrap();
        assert_eq!(item2.negatives, vec!["p0".to_string()]);
        assert_eq!(report.collisions, 3);
    }

    #[test]
    fn batch_size_one_rejected() {
        let cfg = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(make_batches(&examples(4), &cfg).is_err());
    }

    fn tiny_corpus() -> (PassageCollection, Vec<TrainingExample>) {
        let topics = ["ocean whale reef", "desert cactus sand", "forest moss fern", "city train bus"];
        let passages: Vec<Passage> = topics
            .iter()
            .enumerate()
            .flat_map(|(t, words)| {
                (0..3).map(move |k| Passage { pid: format!("t{t}p{k}"), text: format!("{words} the of {k}") })
            })
            .collect();
        let examples = topics
            .iter()
            .enumerate()
            .flat_map(|(t, words)| {
                let w: Vec<&str> = words.split(' ').collect();
                (0..3).map(move |k| {
                    TrainingExample::new(format!("q{t}_{k}"), format!("tell me about {}", w[k]), vec![format!("t{t}p{k}")]).unwrap()
                })
            })
            .collect();
        (PassageCollection::from_passages(passages).unwrap(), examples)
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let (c, ex) = tiny_corpus();
        let p = Encoder::random(EncoderRole::Passage, 8, 1024, 384, 1);
        let q = p.with_role(EncoderRole::Query, 512);
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 4, ..Default::default() };
        let (trained, report) = train(&ex, &c, &q, &p, &cfg).unwrap();
        assert_eq!(trained.weights(), q.weights());
        assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seeded_training_is_bit_identical_and_improves() {
        let (c, ex) = tiny_corpus();
        let p = Encoder::random(EncoderRole::Passage, 8, 1024, 384, 1);
        let q = p.with_role(EncoderRole::Query, 512);
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 4, epochs: 5, seed: 3, ..Default::default() };
        let (a, ra) = train(&ex, &c, &q, &p, &cfg).unwrap();
        let (b, _) = train(&ex, &c, &q, &p, &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert!(ra.epoch_losses[4] < ra.epoch_losses[0], "{:?}", ra.epoch_losses);
    }

    #[test]
    fn augmented_samples_keep_original_history() {
        let mut s = throat();
        s.provenance = Provenance::QueryAugmented;
        s.turns[1].rewrites = vec!["can it be cured".into()];
        let qs = sample_queries(&[s], 512);
        assert_eq!(qs, vec![("s_2#a1".to_string(), "what is throat cancer can it be cured".to_string())]);
    }
}
