use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::ann::{IvfIndex, IvfParams};
use super::encoder::{encode, Encoder, EncoderRole};
use super::{dot, top_k, Retriever, ScoredPassage};
use crate::datamodel::PassageCollection;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CSDGIDX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exact,
    Ann,
}

/// Row `i` of the matrix is the embedding of `pids[i]`.
#[derive(Debug)]
pub struct DenseIndex {
    dim: usize,
    pids: Vec<String>,
    vectors: Vec<f64>,
    ivf_params: IvfParams,
    ivf: OnceLock<IvfIndex>,
}

impl DenseIndex {
    pub fn from_vectors(dim: usize, pids: Vec<String>, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != pids.len() * dim {
            return Err(Error::Invalid(format!(
                "{} pids but {} values for dim {dim}",
                pids.len(),
                vectors.len()
            )));
        }
        Ok(Self {
            dim,
            pids,
            vectors,
            ivf_params: IvfParams::default(),
            ivf: OnceLock::new(),
        })
    }

    pub fn with_ivf_params(mut self, params: IvfParams) -> Self {
        self.ivf_params = params;
        self.ivf = OnceLock::new();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pids.is_empty()
    }

    pub fn pids(&self) -> &[String] {
        &self.pids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// The approximate structure, built on first use.
    pub fn ivf(&self) -> &IvfIndex {
        self.ivf
            .get_or_init(|| IvfIndex::build(&self.vectors, self.dim, self.ivf_params))
    }

    /// Header (`dim`, `count`), row-major `f32` matrix, newline-separated pids.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(24 + self.vectors.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.pids.len() as u64).to_le_bytes());
        for v in &self.vectors {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for pid in &self.pids {
            buf.extend_from_slice(pid.as_bytes());
            buf.push(b'\n');
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::format(path, 0, m.to_string());
        if buf.len() < 24 || &buf[..8] != MAGIC {
            return Err(bad("not a dense index file"));
        }
        let dim = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
        let matrix_end = 24 + dim * count * 4;
        let matrix = buf.get(24..matrix_end).ok_or_else(|| bad("truncated matrix"))?;
        let vectors = matrix
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let names = std::str::from_utf8(&buf[matrix_end..]).map_err(|_| bad("pid list is not UTF-8"))?;
        let pids: Vec<String> = names.lines().map(str::to_string).collect();
        if pids.len() != count {
            return Err(bad("pid count does not match header"));
        }
        Self::from_vectors(dim, pids, vectors)
    }
}

pub fn build_dense_index(collection: &PassageCollection, passage_encoder: &Encoder) -> Result<DenseIndex> {
    if passage_encoder.role != EncoderRole::Passage {
        return Err(Error::Precondition("index must be built with a passage encoder".into()));
    }
    let passages: Vec<_> = collection.iter().collect();
    let rows: Vec<Vec<f64>> = passages
        .par_iter()
        .map(|p| encode(&p.text, passage_encoder))
        .collect();
    let pids = passages.iter().map(|p| p.pid.clone()).collect();
    DenseIndex::from_vectors(passage_encoder.dim(), pids, rows.concat())
}

pub fn dense_search(
    query_vec: &[f64],
    index: &DenseIndex,
    k: usize,
    mode: SearchMode,
) -> Result<Vec<ScoredPassage>> {
    if query_vec.len() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            actual: query_vec.len(),
        });
    }
    let score = |i: usize| ScoredPassage {
        pid: index.pids[i].clone(),
        score: dot(query_vec, index.row(i)),
    };
    let hits: Vec<ScoredPassage> = match mode {
        SearchMode::Exact => (0..index.len()).map(score).collect(),
        SearchMode::Ann => index
            .ivf()
            .candidates(query_vec)
            .into_iter()
            .map(|i| score(i as usize))
            .collect(),
    };
    Ok(top_k(hits, k))
}

/// Query encoder plus passage index.
#[derive(Debug)]
pub struct DenseRetriever {
    pub query_encoder: Encoder,
    pub index: DenseIndex,
    pub mode: SearchMode,
}

impl Retriever for DenseRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        dense_search(&encode(query, &self.query_encoder), &self.index, k, self.mode)
    }
}
