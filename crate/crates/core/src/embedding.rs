//! Dense text embeddings.
//!
//! The builtin embedder is a signed character-trigram feature hasher:
//!
//! 1. lowercase each character, collapse whitespace runs to one space, trim;
//!    empty text yields the zero vector;
//! 2. pad with one space on each side;
//! 3. for every window of three consecutive characters, hash its UTF-8 bytes
//!    with 64-bit FNV-1a; the bucket is `hash % dim` and the sign is `+1` when
//!    the top bit of the hash is clear, `-1` otherwise;
//! 4. L2-normalize the bucket sums.
//!
//! Strings sharing many trigrams land close together, which is the only
//! property the clustering and anchor search rely on. An external provider can
//! be used instead through [`EmbeddingProviderConfig`].

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::JsonClient;

pub const DEFAULT_DIMENSION: usize = 384;

/// Row-major matrix of embeddings, one row per input text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(Self { dim, data })
    }

    pub(crate) fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim == 0 || data.len() % dim == 0);
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// True when row `i` is the zero vector (empty text).
    pub fn is_zero(&self, i: usize) -> bool {
        self.row(i).iter().all(|&x| x == 0.0)
    }

    pub(crate) fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Similarity of every row with `query`, as plain dot products.
    pub fn dot_all(&self, query: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, query)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    BuiltinHash,
    ExternalHttp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub mode: EmbeddingMode,
    pub dimension: usize,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub batch_size: usize,
    /// Maximum number of batches posted concurrently in external mode.
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Environment variable holding a bearer token for the endpoint.
    pub api_key_env: Option<String>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            mode: EmbeddingMode::BuiltinHash,
            dimension: DEFAULT_DIMENSION,
            endpoint: None,
            model_name: None,
            batch_size: 64,
            max_in_flight: 4,
            timeout_secs: 30,
            api_key_env: Some("HYPERRAG_EMBEDDING_API_KEY".to_string()),
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(Error::Config(
                "embedding batch_size and max_in_flight must be positive".into(),
            ));
        }
        if self.mode == EmbeddingMode::ExternalHttp && self.endpoint.is_none() {
            return Err(Error::Config(
                "external embedding mode needs an endpoint".into(),
            ));
        }
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Embeds `texts` in order; every returned row is unit-norm or zero.
    fn embed(&self, texts: &[&str]) -> Result<EmbeddingMatrix>;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed(&[text])?.row(0).to_vec())
    }
}

pub fn embedder_from_config(cfg: &EmbeddingProviderConfig) -> Result<Box<dyn Embedder>> {
    cfg.validate()?;
    Ok(match cfg.mode {
        EmbeddingMode::BuiltinHash => Box::new(HashEmbedder::new(cfg.dimension)),
        EmbeddingMode::ExternalHttp => Box::new(HttpEmbedder::new(cfg.clone())),
    })
}

/// Embeds `texts` with the provider described by `cfg`.
pub fn embed_texts(texts: &[&str], cfg: &EmbeddingProviderConfig) -> Result<EmbeddingMatrix> {
    embedder_from_config(cfg)?.embed(texts)
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn embed_into(&self, text: &str, out: &mut [f64]) {
        let normalized = normalize_for_hashing(text);
        if normalized.is_empty() {
            return;
        }
        let padded: Vec<char> = std::iter::once(' ')
            .chain(normalized.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut buf = [0u8; 16];
        for window in padded.windows(3) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a64(&buf[..len]);
            let bucket = (h % self.dim as u64) as usize;
            out[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        normalize_in_place(out);
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<EmbeddingMatrix> {
        let mut data = vec![0.0; texts.len() * self.dim];
        data.par_chunks_mut(self.dim.max(1))
            .zip(texts.par_iter())
            .for_each(|(row, text)| self.embed_into(text, row));
        Ok(EmbeddingMatrix::from_flat(self.dim, data))
    }
}

fn normalize_for_hashing(text: &str) -> String {
    let lowered: String = text.chars().flat_map(char::to_lowercase).collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Scales `v` to unit L2 norm; zero vectors are left untouched.
pub fn normalize_in_place(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity in `[-1, 1]`; zero-norm inputs score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let denom = dot(a, a).sqrt() * dot(b, b).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Client for an OpenAI-style embeddings endpoint.
pub struct HttpEmbedder {
    cfg: EmbeddingProviderConfig,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(cfg: EmbeddingProviderConfig) -> Self {
        let client = JsonClient::new(Duration::from_secs(cfg.timeout_secs))
            .with_bearer_from_env(cfg.api_key_env.as_deref());
        Self { cfg, client }
    }

    fn post_batch(&self, index: usize, batch: &[&str]) -> Result<Vec<Vec<f64>>> {
        let url = self.cfg.endpoint.as_deref().unwrap_or_default();
        let request = EmbedRequest {
            model: self.cfg.model_name.as_deref().unwrap_or(""),
            input: batch,
        };
        let response: EmbedResponse =
            self.client
                .post(url, &request)
                .map_err(|message| Error::Provider {
                    batch: index,
                    message,
                })?;
        if response.data.len() != batch.len() {
            return Err(Error::Provider {
                batch: index,
                message: format!(
                    "expected {} embeddings, received {}",
                    batch.len(),
                    response.data.len()
                ),
            });
        }
        response
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.cfg.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.cfg.dimension,
                        actual: d.embedding.len(),
                    });
                }
                if d.embedding.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Provider {
                        batch: index,
                        message: "non-finite embedding value".into(),
                    });
                }
                let mut v = d.embedding;
                normalize_in_place(&mut v);
                Ok(v)
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<EmbeddingMatrix> {
        let batches: Vec<(usize, &[&str])> =
            texts.chunks(self.cfg.batch_size).enumerate().collect();
        let mut rows = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.cfg.max_in_flight) {
            let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&(i, batch)| scope.spawn(move || self.post_batch(i, batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for result in results {
                rows.extend(result?);
            }
        }
        EmbeddingMatrix::from_rows(self.cfg.dimension, rows)
    }
}
