//! Hashed-projection text encoder.
//!
//! Tokens are hashed into a `hash_width`-wide count vector which is then
//! multiplied by a `hash_width x dim` projection matrix (row `b` is the
//! embedding of bucket `b`). The map is linear in the counts, so scores are
//! bilinear in the two count vectors.

use std::fs;
use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::text::tokenize;
use crate::{Error, Result};

pub const QUERY_MAX_LEN: usize = 64;
pub const PASSAGE_MAX_LEN: usize = 384;
/// Budget for a concatenated session history.
pub const SESSION_MAX_LEN: usize = 512;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_HASH_WIDTH: usize = 1 << 15;

const MAGIC: &[u8; 8] = b"CSDGENC1";
const BACKEND_TAG: &str = "hashed_projection";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderRole {
    Query,
    Passage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub role: EncoderRole,
    pub max_len: usize,
    dim: usize,
    hash_width: usize,
    weights: Vec<f64>,
}

impl Encoder {
    /// Gaussian projection with entries `N(0, 1/dim)`.
    pub fn random(role: EncoderRole, dim: usize, hash_width: usize, max_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let weights = (0..dim * hash_width).map(|_| normal.sample(&mut rng)).collect();
        Self {
            role,
            max_len,
            dim,
            hash_width,
            weights,
        }
    }

    pub fn from_weights(
        role: EncoderRole,
        dim: usize,
        hash_width: usize,
        max_len: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || hash_width == 0 || weights.len() != dim * hash_width {
            return Err(Error::Invalid(format!(
                "projection must be {hash_width}x{dim}, got {} values",
                weights.len()
            )));
        }
        Ok(Self {
            role,
            max_len,
            dim,
            hash_width,
            weights,
        })
    }

    /// Copy of this encoder acting in another role.
    pub fn with_role(&self, role: EncoderRole, max_len: usize) -> Self {
        Self {
            role,
            max_len,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_width(&self) -> usize {
        self.hash_width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn row_mut(&mut self, bucket: usize) -> &mut [f64] {
        &mut self.weights[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn backend_tag(&self) -> &'static str {
        BACKEND_TAG
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % self.hash_width as u64) as usize
    }

    /// Sparse bucket counts after role-specific truncation, sorted by bucket.
    ///
    /// Queries keep their last `max_len` tokens (the current turn sits at the
    /// end), passages their first `max_len`.
    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let tokens = tokenize(text);
        let kept = if tokens.len() <= self.max_len {
            &tokens[..]
        } else {
            match self.role {
                EncoderRole::Query => &tokens[tokens.len() - self.max_len..],
                EncoderRole::Passage => &tokens[..self.max_len],
            }
        };
        let mut buckets: Vec<usize> = kept.iter().map(|t| self.bucket(t)).collect();
        buckets.sort_unstable();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for b in buckets {
            match out.last_mut() {
                Some((last, c)) if *last == b => *c += 1.0,
                _ => out.push((b, 1.0)),
            }
        }
        out
    }

    pub fn project(&self, features: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(b, c) in features {
            let row = &self.weights[b * self.dim..(b + 1) * self.dim];
            for (o, w) in v.iter_mut().zip(row) {
                *o += c * w;
            }
        }
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(64 + self.weights.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(BACKEND_TAG.len() as u32).to_le_bytes());
        buf.extend_from_slice(BACKEND_TAG.as_bytes());
        buf.push(match self.role {
            EncoderRole::Query => 0,
            EncoderRole::Passage => 1,
        });
        buf.extend_from_slice(&(self.max_len as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.hash_width as u64).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::format(path, 0, m.to_string());
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not an encoder checkpoint"));
        }
        let tag_len = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let tag = cur.take(tag_len).ok_or_else(|| bad("truncated header"))?;
        if tag != BACKEND_TAG.as_bytes() {
            return Err(bad("unsupported encoder backend"));
        }
        let role = match cur.take(1).ok_or_else(|| bad("truncated header"))?[0] {
            0 => EncoderRole::Query,
            1 => EncoderRole::Passage,
            _ => return Err(bad("bad role byte")),
        };
        let max_len = cur.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let dim = cur.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let width = cur.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let body = cur.take(dim * width * 8).ok_or_else(|| bad("truncated matrix"))?;
        let weights = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_weights(role, dim, width, max_len, weights)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn encode(text: &str, encoder: &Encoder) -> Vec<f64> {
    encoder.project(&encoder.features(text))
}
