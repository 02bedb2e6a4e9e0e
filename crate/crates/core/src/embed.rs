//! Pre-trained word-embedding files (word2vec text and binary layouts) and
//! token vectorization.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parse error at byte {offset}: {msg}")]
    Binary { offset: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
}

/// Token → dense vector lookup with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    dimension: usize,
    tokens: Vec<String>,
    data: Vec<T>,
    index: HashMap<String, usize>,
    duplicates: usize,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        if dimension == 0 {
            return Err(EmbedError::Validation("dimension must be positive".into()));
        }
        Ok(Self { dimension, tokens: Vec::new(), data: Vec::new(), index: HashMap::new(), duplicates: 0 })
    }

    /// Inserts or replaces a vector. Replacement counts as a duplicate.
    pub fn insert(&mut self, token: &str, vector: &[T]) -> Result<(), EmbedError> {
        if vector.len() != self.dimension {
            return Err(EmbedError::Validation(format!(
                "vector for {token:?} has length {}, expected {}",
                vector.len(),
                self.dimension
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Validation(format!("non-finite component in {token:?}")));
        }
        match self.index.get(token) {
            Some(&i) => {
                self.data[i * self.dimension..(i + 1) * self.dimension].copy_from_slice(vector);
                self.duplicates += 1;
            }
            None => {
                self.index.insert(token.to_string(), self.tokens.len());
                self.tokens.push(token.to_string());
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of tokens that appeared more than once in the source (last wins).
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[T]> {
        self.index.get(token).map(|&i| &self.data[i * self.dimension..(i + 1) * self.dimension])
    }

    /// Text layout: header `V D`, then one `token f1 … fD` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dimension);
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in &self.data[i * self.dimension..(i + 1) * self.dimension] {
                let _ = write!(out, " {}", v.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }

    /// Binary layout: ASCII header `V D\n`, then per entry the token, a space,
    /// D little-endian f32 values and a newline.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = format!("{} {}\n", self.len(), self.dimension).into_bytes();
        for (i, tok) in self.tokens.iter().enumerate() {
            out.extend_from_slice(tok.as_bytes());
            out.push(b' ');
            for v in &self.data[i * self.dimension..(i + 1) * self.dimension] {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
            out.push(b'\n');
        }
        out
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<(usize, usize), EmbedError> {
    let perr = |msg: &str| EmbedError::Parse { line: line_no, msg: msg.to_string() };
    let mut it = line.split_whitespace();
    let v = it.next().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| perr("bad header"))?;
    let d = it.next().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| perr("bad header"))?;
    if it.next().is_some() {
        return Err(perr("header must be `V D`"));
    }
    if d == 0 {
        return Err(perr("dimension must be positive"));
    }
    Ok((v, d))
}

pub fn parse_embedding_text<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingStore<T>, EmbedError> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| EmbedError::Parse { line: 0, msg: format!("invalid UTF-8: {e}") })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(EmbedError::Parse { line: 1, msg: "missing header".into() })?;
    let (rows, dim) = parse_header(header, 1)?;
    let mut store = EmbeddingStore::new(dim)?;
    let mut seen = 0usize;
    let mut buf = Vec::with_capacity(dim);
    for (i, line) in lines {
        let line_no = i + 1;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let token = parts.next().expect("non-empty line has a token");
        buf.clear();
        for p in parts {
            let v: f64 = p.parse().map_err(|_| EmbedError::Parse { line: line_no, msg: format!("bad float {p:?}") })?;
            if !v.is_finite() {
                return Err(EmbedError::Validation(format!("line {line_no}: non-finite value")));
            }
            buf.push(T::lit(v));
        }
        if buf.len() != dim {
            return Err(EmbedError::Parse {
                line: line_no,
                msg: format!("expected {dim} values, found {}", buf.len()),
            });
        }
        store.insert(token, &buf)?;
        seen += 1;
    }
    if seen != rows {
        return Err(EmbedError::Parse { line: 1, msg: format!("row count mismatch: header {rows}, found {seen}") });
    }
    Ok(store)
}

pub fn parse_embedding_binary<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingStore<T>, EmbedError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(EmbedError::Binary { offset: 0, msg: "missing header newline".into() })?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| EmbedError::Binary { offset: 0, msg: "header is not ASCII".into() })?;
    let (rows, dim) = parse_header(header, 1)?;
    let mut store = EmbeddingStore::new(dim)?;
    let mut pos = nl + 1;
    let mut buf = Vec::with_capacity(dim);
    for _ in 0..rows {
        while pos < bytes.len() && bytes[pos] == b'\n' {
            pos += 1;
        }
        let start = pos;
        let space = bytes[start..]
            .iter()
            .position(|&b| b == b' ')
            .ok_or(EmbedError::Binary { offset: start, msg: "truncated record: token not terminated".into() })?;
        let token = std::str::from_utf8(&bytes[start..start + space])
            .map_err(|_| EmbedError::Binary { offset: start, msg: "token is not UTF-8".into() })?;
        pos = start + space + 1;
        let need = dim * 4;
        if bytes.len() - pos < need {
            return Err(EmbedError::Binary {
                offset: pos,
                msg: format!("truncated record: need {need} bytes, have {}", bytes.len() - pos),
            });
        }
        buf.clear();
        for chunk in bytes[pos..pos + need].chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(EmbedError::Validation(format!("non-finite value for {token:?}")));
            }
            buf.push(T::lit(v as f64));
        }
        pos += need;
        store.insert(token, &buf)?;
    }
    Ok(store)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingCoverage {
    /// Unique tokens requested.
    pub requested: usize,
    pub found: usize,
    pub missing_tokens: Vec<String>,
    /// Found tokens whose vector is all zeros (left unnormalized).
    pub zero_vectors: Vec<String>,
}

impl EmbeddingCoverage {
    pub fn ratio(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.found as f64 / self.requested as f64
        }
    }
}

/// Tokens paired with row-major vectors, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVectors<T> {
    pub tokens: Vec<String>,
    pub dimension: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> TokenVectors<T> {
    pub fn from_rows(tokens: Vec<String>, rows: &[Vec<T>]) -> Self {
        let dimension = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dimension), "ragged rows");
        assert_eq!(tokens.len(), rows.len());
        Self { tokens, dimension, data: rows.concat() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dimension.max(1))
    }
}

/// Looks up each unique token (first-occurrence order); absent tokens are
/// dropped and counted.
pub fn embed_tokens<T: Scalar, S: AsRef<str>>(
    tokens: &[S],
    store: &EmbeddingStore<T>,
    normalize: bool,
) -> (TokenVectors<T>, EmbeddingCoverage) {
    let mut seen = BTreeSet::new();
    let mut coverage = EmbeddingCoverage::default();
    let mut out = TokenVectors { tokens: Vec::new(), dimension: store.dimension(), data: Vec::new() };
    for t in tokens {
        let t = t.as_ref();
        if !seen.insert(t) {
            continue;
        }
        coverage.requested += 1;
        match store.get(t) {
            None => coverage.missing_tokens.push(t.to_string()),
            Some(v) => {
                coverage.found += 1;
                out.tokens.push(t.to_string());
                let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
                if normalize && norm > T::zero() {
                    out.data.extend(v.iter().map(|&x| x / norm));
                } else {
                    if norm == T::zero() {
                        coverage.zero_vectors.push(t.to_string());
                    }
                    out.data.extend_from_slice(v);
                }
            }
        }
    }
    (out, coverage)
}
