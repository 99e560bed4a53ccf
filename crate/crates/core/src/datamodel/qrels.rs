use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QrelsSource {
    #[default]
    Manual,
    Pseudo,
}

/// Graded judgments keyed by `(query_id, pid)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    entries: BTreeMap<(String, String), u32>,
    pub source: QrelsSource,
}

impl Qrels {
    pub fn new(source: QrelsSource) -> Self {
        Self {
            entries: BTreeMap::new(),
            source,
        }
    }

    /// Inserts a judgment, refusing to overwrite an existing key.
    pub fn insert(&mut self, query_id: &str, pid: &str, grade: u32) -> Result<()> {
        let key = (query_id.to_string(), pid.to_string());
        if let Some(old) = self.entries.get(&key) {
            return Err(Error::Invalid(format!(
                "duplicate judgment ({query_id}, {pid}): grades {old} and {grade}"
            )));
        }
        self.entries.insert(key, grade);
        Ok(())
    }

    pub fn grade(&self, query_id: &str, pid: &str) -> Option<u32> {
        self.entries
            .get(&(query_id.to_string(), pid.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by `(query_id, pid)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.entries
            .iter()
            .map(|((q, p), g)| (q.as_str(), p.as_str(), *g))
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.entries
            .range((query_id.to_string(), String::new())..)
            .next()
            .is_some_and(|((q, _), _)| q == query_id)
    }

    /// All judgments of one query as `pid -> grade`.
    pub fn for_query(&self, query_id: &str) -> HashMap<String, u32> {
        self.entries
            .range((query_id.to_string(), String::new())..)
            .take_while(|((q, _), _)| q == query_id)
            .map(|((_, p), g)| (p.clone(), *g))
            .collect()
    }

    /// Grouped view: `query_id -> (pid -> grade)`.
    pub fn by_query(&self) -> BTreeMap<String, HashMap<String, u32>> {
        let mut out: BTreeMap<String, HashMap<String, u32>> = BTreeMap::new();
        for ((q, p), g) in &self.entries {
            out.entry(q.clone()).or_default().insert(p.clone(), *g);
        }
        out
    }

    pub fn query_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.keys().map(|(q, _)| q.clone()).collect();
        ids.dedup();
        ids
    }
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    read_qrels_with_source(path, QrelsSource::Manual)
}

pub fn read_qrels_with_source(path: impl AsRef<Path>, source: QrelsSource) -> Result<Qrels> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut qrels = Qrels::new(source);
    let mut first_seen: HashMap<(String, String), usize> = HashMap::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, pid, grade] = fields[..] else {
            return Err(Error::format(
                path,
                line_no,
                format!("expected `query_id 0 pid grade`, got {} field(s)", fields.len()),
            ));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("non-integer grade `{grade}`")))?;
        if grade < 0 {
            return Err(Error::format(path, line_no, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::format(path, line_no, format!("grade {grade} out of range")))?;
        let key = (qid.to_string(), pid.to_string());
        if let Some(&prev) = first_seen.get(&key) {
            let old = qrels.grade(qid, pid).unwrap_or_default();
            return Err(Error::format(
                path,
                line_no,
                format!(
                    "duplicate judgment ({qid}, {pid}) on lines {prev} (grade {old}) and {line_no} (grade {grade})"
                ),
            ));
        }
        first_seen.insert(key, line_no);
        qrels.insert(qid, pid, grade)?;
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (q, p, g) in qrels.iter() {
        let _ = writeln!(out, "{q} 0 {p} {g}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), content).unwrap();
        f
    }

    #[test]
    fn parses_trec_line() {
        let f = write_tmp("s1_2 0 d7 1\n");
        let q = read_qrels(f.path()).unwrap();
        assert_eq!(q.grade("s1_2", "d7"), Some(1));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn conflicting_duplicate_lists_both_lines() {
        let f = write_tmp("q 0 d 1\nq 0 x 0\nq 0 d 2\n");
        let msg = read_qrels(f.path()).unwrap_err().to_string();
        assert!(msg.contains("lines 1") && msg.contains("and 3"), "{msg}");
    }

    #[test]
    fn rejects_bad_grades() {
        let neg = write_tmp("q 0 d -1\n");
        assert!(read_qrels(neg.path()).unwrap_err().to_string().contains("negative"));
        let frac = write_tmp("q 0 d 1.5\n");
        assert!(read_qrels(frac.path()).unwrap_err().to_string().contains("non-integer"));
    }

    #[test]
    fn writer_sorts_by_query_then_pid() {
        let mut q = Qrels::new(QrelsSource::Pseudo);
        q.insert("b", "z", 1).unwrap();
        q.insert("a", "y", 2).unwrap();
        q.insert("a", "x", 0).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_qrels(&q, f.path()).unwrap();
        assert_eq!(fs::read_to_string(f.path()).unwrap(), "a 0 x 0\na 0 y 2\nb 0 z 1\n");
    }

    #[test]
    fn per_query_views() {
        let mut q = Qrels::default();
        q.insert("a", "d1", 1).unwrap();
        q.insert("ab", "d2", 2).unwrap();
        assert_eq!(q.for_query("a").len(), 1);
        assert!(q.contains_query("ab"));
        assert!(!q.contains_query("b"));
        assert_eq!(q.query_ids(), vec!["a", "ab"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_random_entries(
            entries in proptest::collection::btree_map(
                ("[a-z0-9_#]{1,8}", "[a-zA-Z0-9-]{1,8}"), 0u32..5, 0..100)
        ) {
            let mut q = Qrels::default();
            for ((qid, pid), g) in &entries {
                q.insert(qid, pid, *g).unwrap();
            }
            let f = tempfile::NamedTempFile::new().unwrap();
            write_qrels(&q, f.path()).unwrap();
            let back = read_qrels(f.path()).unwrap();
            prop_assert_eq!(back, q);
        }
    }
}
