use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::text::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub pid: String,
    pub text: String,
}

impl Passage {
    /// Passages without a single token are kept but flagged.
    pub fn is_degenerate(&self) -> bool {
        tokenize(&self.text).is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectionStats {
    pub doc_count: usize,
    /// Mean token count per passage.
    pub avg_doc_len: f64,
    pub df: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectionFormat {
    Tsv,
}

/// Passage store keyed by pid, in file order.
#[derive(Debug, Clone, Default)]
pub struct PassageCollection {
    passages: IndexMap<String, Passage>,
    stats: CollectionStats,
}

impl PassageCollection {
    pub fn from_passages(passages: impl IntoIterator<Item = Passage>) -> Result<Self> {
        let mut map = IndexMap::new();
        for passage in passages {
            if passage.pid.is_empty() {
                return Err(Error::Invalid("empty passage id".into()));
            }
            if map.contains_key(&passage.pid) {
                return Err(Error::DuplicatePid(passage.pid));
            }
            map.insert(passage.pid.clone(), passage);
        }
        let stats = compute_stats(&map)?;
        Ok(Self { passages: map, stats })
    }

    pub fn stats(&self) -> &CollectionStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, pid: &str) -> Option<&Passage> {
        self.passages.get(pid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.values()
    }

    pub fn pids(&self) -> impl Iterator<Item = &str> {
        self.passages.keys().map(String::as_str)
    }
}

fn compute_stats(passages: &IndexMap<String, Passage>) -> Result<CollectionStats> {
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut total_tokens = 0usize;
    for passage in passages.values() {
        let mut tokens = tokenize(&passage.text);
        total_tokens += tokens.len();
        tokens.sort_unstable();
        tokens.dedup();
        for token in tokens {
            *df.entry(token).or_default() += 1;
        }
    }
    let doc_count = passages.len();
    if doc_count > 0 && total_tokens == 0 {
        return Err(Error::Invalid(
            "collection has passages but no tokens at all".into(),
        ));
    }
    let avg_doc_len = if doc_count == 0 {
        0.0
    } else {
        total_tokens as f64 / doc_count as f64
    };
    Ok(CollectionStats {
        doc_count,
        avg_doc_len,
        df,
    })
}

pub fn load_collection(path: impl AsRef<Path>, format: CollectionFormat) -> Result<PassageCollection> {
    let path = path.as_ref();
    let CollectionFormat::Tsv = format;
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut passages = IndexMap::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (pid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, line_no, "expected `pid<TAB>text`"))?;
        if pid.is_empty() {
            return Err(Error::format(path, line_no, "empty passage id"));
        }
        if passages.contains_key(pid) {
            return Err(Error::DuplicatePid(pid.to_string()));
        }
        passages.insert(
            pid.to_string(),
            Passage {
                pid: pid.to_string(),
                text: text.to_string(),
            },
        );
    }
    let stats = compute_stats(&passages)?;
    Ok(PassageCollection { passages, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tsv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn stats_from_two_passages() {
        let f = tsv("d1\tcat sat\nd2\tdog ran far\n");
        let c = load_collection(f.path(), CollectionFormat::Tsv).unwrap();
        assert_eq!(c.stats().doc_count, 2);
        assert!((c.stats().avg_doc_len - 2.5).abs() < 1e-12);
        assert_eq!(c.stats().df["cat"], 1);
        assert_eq!(c.pids().collect::<Vec<_>>(), vec!["d1", "d2"]);
    }

    #[test]
    fn empty_file_gives_empty_collection() {
        let f = tsv("");
        let c = load_collection(f.path(), CollectionFormat::Tsv).unwrap();
        assert_eq!(c.stats().doc_count, 0);
        assert!(c.is_empty());
    }

    #[test]
    fn duplicate_pid_is_named() {
        let f = tsv("d1\ta\nd1\tb\n");
        let err = load_collection(f.path(), CollectionFormat::Tsv).unwrap_err();
        assert!(matches!(&err, Error::DuplicatePid(p) if p == "d1"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = tsv("d1\tok\nno tab here\n");
        match load_collection(f.path(), CollectionFormat::Tsv).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_text_is_flagged_degenerate() {
        let f = tsv("d1\t\nd2\tsome words\n");
        let c = load_collection(f.path(), CollectionFormat::Tsv).unwrap();
        assert!(c.get("d1").unwrap().is_degenerate());
        assert!(!c.get("d2").unwrap().is_degenerate());
        assert!((c.stats().avg_doc_len - 1.0).abs() < 1e-12);
    }

    #[test]
    fn df_counts_documents_not_occurrences() {
        let c = PassageCollection::from_passages([
            Passage { pid: "a".into(), text: "x x x y".into() },
            Passage { pid: "b".into(), text: "x".into() },
        ])
        .unwrap();
        assert_eq!(c.stats().df["x"], 2);
        assert_eq!(c.stats().df["y"], 1);
        assert!(c.stats().df.values().all(|&d| d <= c.stats().doc_count));
    }
}
