use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::rank_order;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub pid: String,
    pub rank: usize,
    pub score: f64,
}

/// Per-query ranked lists with TREC run semantics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedRun {
    pub tag: String,
    pub queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RankedRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    /// Sorts `(pid, score)` pairs by the global tie-break and assigns ranks from 1.
    pub fn insert_scored(
        &mut self,
        query_id: impl Into<String>,
        scored: impl IntoIterator<Item = (String, f64)>,
    ) {
        let mut scored: Vec<(String, f64)> = scored.into_iter().collect();
        scored.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (pid, score))| RunEntry {
                pid,
                rank: i + 1,
                score,
            })
            .collect();
        self.queries.insert(query_id.into(), entries);
    }

    pub fn ranked_pids(&self, query_id: &str) -> Vec<&str> {
        self.queries
            .get(query_id)
            .map(|entries| entries.iter().map(|e| e.pid.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        for (qid, entries) in &self.queries {
            let mut seen = HashSet::new();
            for (i, entry) in entries.iter().enumerate() {
                if entry.rank != i + 1 {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: ranks must be contiguous from 1, found {} at position {}",
                        entry.rank,
                        i + 1
                    )));
                }
                if !entry.score.is_finite() {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: non-finite score for `{}`",
                        entry.pid
                    )));
                }
                if i > 0 && entry.score > entries[i - 1].score {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: score increases at rank {}",
                        entry.rank
                    )));
                }
                if !seen.insert(entry.pid.as_str()) {
                    return Err(Error::Invalid(format!(
                        "query `{qid}`: duplicate pid `{}`",
                        entry.pid
                    )));
                }
            }
        }
        Ok(())
    }
}

fn format_score(score: f64) -> String {
    // At least six significant digits in either notation.
    if score == 0.0 || (1e-3..1e15).contains(&score.abs()) {
        format!("{score:.8}")
    } else {
        format!("{score:.8e}")
    }
}

pub fn write_run(run: &RankedRun, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    run.validate()?;
    let tag = if run.tag.is_empty() { "convsdg" } else { run.tag.as_str() };
    let mut out = String::new();
    for (qid, entries) in &run.queries {
        for e in entries {
            let _ = writeln!(out, "{qid} Q0 {} {} {} {tag}", e.pid, e.rank, format_score(e.score));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a run file; entries are ordered by the rank column.
pub fn read_run(path: impl AsRef<Path>) -> Result<RankedRun> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut run = RankedRun::default();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, pid, rank, score, tag] = fields[..] else {
            return Err(Error::format(path, line_no, "expected `qid Q0 pid rank score tag`"));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("bad rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("bad score `{score}`")))?;
        if run.tag.is_empty() {
            run.tag = tag.to_string();
        }
        run.queries.entry(qid.to_string()).or_default().push(RunEntry {
            pid: pid.to_string(),
            rank,
            score,
        });
    }
    for entries in run.queries.values_mut() {
        entries.sort_by_key(|e| e.rank);
    }
    run.validate()?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn written(run: &RankedRun) -> String {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_run(run, f.path()).unwrap();
        fs::read_to_string(f.path()).unwrap()
    }

    #[test]
    fn two_docs_get_ranks_one_and_two() {
        let mut run = RankedRun::new("t");
        run.insert_scored("q", [("b".to_string(), 1.0), ("a".to_string(), 2.0)]);
        assert_eq!(written(&run), "q Q0 a 1 2.00000000 t\nq Q0 b 2 1.00000000 t\n");
    }

    #[test]
    fn empty_run_writes_empty_file() {
        assert_eq!(written(&RankedRun::new("t")), "");
    }

    #[test]
    fn ties_break_on_ascending_pid() {
        let mut run = RankedRun::new("t");
        run.insert_scored(
            "q",
            [("d3".to_string(), 1.0), ("d1".to_string(), 1.0), ("d2".to_string(), 5.0)],
        );
        assert_eq!(run.ranked_pids("q"), vec!["d2", "d1", "d3"]);
    }

    #[test]
    fn non_contiguous_ranks_are_rejected() {
        let mut run = RankedRun::new("t");
        run.queries.insert(
            "q".into(),
            vec![
                RunEntry { pid: "a".into(), rank: 1, score: 2.0 },
                RunEntry { pid: "b".into(), rank: 3, score: 1.0 },
            ],
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(write_run(&run, f.path()).is_err());
    }

    #[test]
    fn read_back_preserves_order_and_scores() {
        let mut run = RankedRun::new("x");
        run.insert_scored("q1", [("a".to_string(), 0.123456789), ("b".to_string(), -3.5e-7)]);
        run.insert_scored("q2", [("c".to_string(), 1234.5)]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_run(&run, f.path()).unwrap();
        let back = read_run(f.path()).unwrap();
        assert_eq!(back.ranked_pids("q1"), vec!["a", "b"]);
        let s = back.queries["q1"][1].score;
        assert!(((s - -3.5e-7) / 3.5e-7).abs() < 1e-6);
    }
}
