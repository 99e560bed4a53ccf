//! Pseudo-relevance labels for generated sessions.
//!
//! Each turn is turned into a context-aware query (one of four forms),
//! retrieved with an off-the-shelf retriever, and `m` of the top `top_k`
//! results are drawn uniformly at random as grade-1 positives.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use fnv::FnvHasher;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ConversationSession, Qrels, QrelsSource};
use crate::retrieval::Retriever;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryForm {
    /// current query + its answer
    #[serde(rename = "qa")]
    QPlusA,
    /// current query + answer + topic
    #[serde(rename = "qat")]
    QPlusAPlusTopic,
    /// all queries so far + topic
    #[serde(rename = "cqt")]
    ConvQPlusTopic,
    /// all queries and answers so far + topic
    #[serde(rename = "cqat")]
    ConvQConvAPlusTopic,
}

impl QueryForm {
    pub const ALL: [QueryForm; 4] = [
        QueryForm::QPlusA,
        QueryForm::QPlusAPlusTopic,
        QueryForm::ConvQPlusTopic,
        QueryForm::ConvQConvAPlusTopic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryForm::QPlusA => "qa",
            QueryForm::QPlusAPlusTopic => "qat",
            QueryForm::ConvQPlusTopic => "cqt",
            QueryForm::ConvQConvAPlusTopic => "cqat",
        }
    }
}

impl fmt::Display for QueryForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryForm::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown query form `{s}` (qa|qat|cqt|cqat)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrfConfig {
    pub top_k: usize,
    pub m: usize,
    pub seed: u64,
    pub form: QueryForm,
}

impl Default for PrfConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            m: 3,
            seed: 0,
            form: QueryForm::QPlusAPlusTopic,
        }
    }
}

impl PrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.top_k {
            return Err(Error::Precondition(format!(
                "need 1 <= m <= top_k, got m={} top_k={}",
                self.m, self.top_k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrfReport {
    pub labeled_turns: usize,
    pub skipped_turns: Vec<String>,
}

/// Builds the retrieval query for turn `turn_index` (1-based).
pub fn build_query_form(
    session: &ConversationSession,
    turn_index: usize,
    form: QueryForm,
) -> Result<String> {
    if turn_index == 0 || turn_index > session.turns.len() {
        return Err(Error::Precondition(format!(
            "turn index {turn_index} outside 1..={}",
            session.turns.len()
        )));
    }
    let answer = |i: usize| -> Result<&str> {
        let turn = &session.turns[i];
        turn.answer
            .as_deref()
            .filter(|a| !a.trim().is_empty())
            .ok_or_else(|| {
                Error::Invalid(format!("query form {form} needs an answer for `{}`", turn.turn_id))
            })
    };
    let current = turn_index - 1;
    let topic = session.topic.description.as_str();
    let mut parts: Vec<&str> = Vec::new();
    match form {
        QueryForm::QPlusA => {
            parts.push(&session.turns[current].query);
            parts.push(answer(current)?);
        }
        QueryForm::QPlusAPlusTopic => {
            parts.push(&session.turns[current].query);
            parts.push(answer(current)?);
            parts.push(topic);
        }
        QueryForm::ConvQPlusTopic => {
            parts.extend(session.turns[..=current].iter().map(|t| t.query.as_str()));
            parts.push(topic);
        }
        QueryForm::ConvQConvAPlusTopic => {
            for i in 0..=current {
                parts.push(&session.turns[i].query);
                parts.push(answer(i)?);
            }
            parts.push(topic);
        }
    }
    Ok(parts.join(" "))
}

fn turn_rng(seed: u64, turn_id: &str) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write(turn_id.as_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Draws `m` distinct pids uniformly without replacement using the turn's own
/// RNG stream; returns all of them when fewer than `m` are given.
pub fn sample_pseudo_positives(candidates: &[String], m: usize, seed: u64, turn_id: &str) -> Vec<String> {
    if candidates.len() <= m {
        return candidates.to_vec();
    }
    let mut rng = turn_rng(seed, turn_id);
    let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), m).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| candidates[i].clone()).collect()
}

pub fn assign_pseudo_labels(
    sessions: &[ConversationSession],
    retriever: &dyn Retriever,
    cfg: &PrfConfig,
) -> Result<(Qrels, PrfReport)> {
    cfg.validate()?;
    let jobs: Vec<(&ConversationSession, usize)> = sessions
        .iter()
        .flat_map(|s| (1..=s.turns.len()).map(move |i| (s, i)))
        .collect();
    let labels: Vec<Result<(String, Vec<String>)>> = jobs
        .par_iter()
        .map(|&(session, i)| {
            let turn_id = session.turns[i - 1].turn_id.clone();
            let query = build_query_form(session, i, cfg.form)?;
            let hits = retriever.retrieve(&query, cfg.top_k)?;
            let pids: Vec<String> = hits.into_iter().map(|h| h.pid).collect();
            let picked = sample_pseudo_positives(&pids, cfg.m, cfg.seed, &turn_id);
            Ok((turn_id, picked))
        })
        .collect();
    let mut qrels = Qrels::new(QrelsSource::Pseudo);
    let mut report = PrfReport::default();
    for label in labels {
        let (turn_id, picked) = label?;
        if picked.is_empty() {
            log::warn!("turn `{turn_id}`: retrieval returned nothing; no pseudo label");
            report.skipped_turns.push(turn_id);
            continue;
        }
        for pid in &picked {
            qrels.insert(&turn_id, pid, 1)?;
        }
        report.labeled_turns += 1;
    }
    Ok((qrels, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Provenance, TopicDescription};
    use crate::retrieval::ScoredPassage;

    fn whales() -> ConversationSession {
        ConversationSession::new(
            "s",
            TopicDescription { topic_id: "t".into(), title: String::new(), description: "ocean life".into() },
            Provenance::DialogueGenerated,
            [
                ("what are whales".to_string(), Some("mammals".to_string())),
                ("do they sing".to_string(), Some("yes loudly".to_string())),
            ],
        )
        .unwrap()
    }

    #[test]
    fn forms_concatenate_in_fixed_order() {
        let s = whales();
        assert_eq!(build_query_form(&s, 1, QueryForm::QPlusAPlusTopic).unwrap(), "what are whales mammals ocean life");
        assert_eq!(build_query_form(&s, 1, QueryForm::ConvQPlusTopic).unwrap(), "what are whales ocean life");
        assert_eq!(build_query_form(&s, 2, QueryForm::QPlusA).unwrap(), "do they sing yes loudly");
        assert_eq!(
            build_query_form(&s, 2, QueryForm::ConvQConvAPlusTopic).unwrap(),
            "what are whales mammals do they sing yes loudly ocean life"
        );
        assert_eq!(build_query_form(&s, 2, QueryForm::ConvQPlusTopic).unwrap(), "what are whales do they sing ocean life");
    }

    #[test]
    fn answer_required_for_answer_forms() {
        let mut s = whales();
        s.turns[0].answer = None;
        assert!(build_query_form(&s, 1, QueryForm::QPlusA).is_err());
        assert!(build_query_form(&s, 2, QueryForm::ConvQConvAPlusTopic).is_err());
        assert!(build_query_form(&s, 2, QueryForm::QPlusAPlusTopic).is_ok());
        assert!(build_query_form(&s, 3, QueryForm::ConvQPlusTopic).is_err());
    }

    struct Fixed(Vec<&'static str>);
    impl Retriever for Fixed {
        fn retrieve(&self, _: &str, k: usize) -> Result<Vec<ScoredPassage>> {
            Ok(self.0.iter().take(k).enumerate().map(|(i, p)| ScoredPassage { pid: p.to_string(), score: -(i as f64) }).collect())
        }
    }

    #[test]
    fn three_of_five_is_a_stable_subset() {
        let r = Fixed(vec!["d1", "d2", "d3", "d4", "d5", "d6"]);
        let cfg = PrfConfig { seed: 9, ..Default::default() };
        let (a, report) = assign_pseudo_labels(&[whales()], &r, &cfg).unwrap();
        let (b, _) = assign_pseudo_labels(&[whales()], &r, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(report.labeled_turns, 2);
        for qid in ["s_1", "s_2"] {
            let pos = a.for_query(qid);
            assert_eq!(pos.len(), 3);
            assert!(pos.keys().all(|p| ["d1", "d2", "d3", "d4", "d5"].contains(&p.as_str())));
            assert!(pos.values().all(|&g| g == 1));
        }
        assert_eq!(a.source, QrelsSource::Pseudo);
    }

    #[test]
    fn short_lists_are_taken_whole_and_empty_ones_skipped() {
        let (q, _) = assign_pseudo_labels(&[whales()], &Fixed(vec!["a", "b"]), &PrfConfig::default()).unwrap();
        assert_eq!(q.for_query("s_1").len(), 2);
        let (q, report) = assign_pseudo_labels(&[whales()], &Fixed(vec![]), &PrfConfig::default()).unwrap();
        assert!(q.is_empty());
        assert_eq!(report.skipped_turns, vec!["s_1", "s_2"]);
    }

    #[test]
    fn bad_m_rejected() {
        let cfg = PrfConfig { m: 6, ..Default::default() };
        assert!(assign_pseudo_labels(&[whales()], &Fixed(vec![]), &cfg).is_err());
    }

    #[test]
    fn order_independent() {
        let mut other = whales();
        other.session_id = "z".into();
        for t in &mut other.turns {
            t.turn_id = t.turn_id.replacen('s', "z", 1);
        }
        let r = Fixed(vec!["d1", "d2", "d3", "d4", "d5"]);
        let cfg = PrfConfig { seed: 1, ..Default::default() };
        let (a, _) = assign_pseudo_labels(&[whales(), other.clone()], &r, &cfg).unwrap();
        let (b, _) = assign_pseudo_labels(&[other, whales()], &r, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn form_names_parse() {
        for f in QueryForm::ALL {
            assert_eq!(f.as_str().parse::<QueryForm>().unwrap(), f);
        }
        assert!("bogus".parse::<QueryForm>().is_err());
    }
}
