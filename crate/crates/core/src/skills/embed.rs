//! Embedding providers for the vector half of hybrid retrieval.

use std::time::Duration;

use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding has dimension {got}, expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("zero vector")]
    Zero,
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    /// Unit-norm embedding.
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub fn l2_normalize(mut v: Vec<f64>) -> Result<Vec<f64>, EmbedError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::Zero);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed character-trigram counts, L2-normalised. Needs no model and is
/// identical across runs and hosts.
#[derive(Debug, Clone, Copy)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: 256 }
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        TrigramEmbedder { dim: dim.max(1) }
    }
}

impl EmbeddingProvider for TrigramEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let chars: Vec<char> = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ").chars().collect();
        let mut v = vec![0.0; self.dim];
        if chars.len() < 3 {
            if chars.is_empty() {
                v[0] = 1.0;
                return Ok(v);
            }
            let s: String = chars.iter().collect();
            v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        } else {
            for w in chars.windows(3) {
                let s: String = w.iter().collect();
                v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        l2_normalize(v)
    }
}

/// Hosted embedding model: POST `{"input": text}` → `{"embedding": [...]}`.
pub struct HttpEmbedder {
    endpoint: String,
    api_key: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        HttpEmbedder { endpoint: endpoint.into(), api_key, dim, agent }
    }

    /// `EMBEDDING_URL`, `EMBEDDING_KEY` and optional `EMBEDDING_DIM`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("EMBEDDING_URL").ok()?;
        let dim = std::env::var("EMBEDDING_DIM").ok().and_then(|d| d.parse().ok()).unwrap_or(1024);
        Some(Self::new(url, std::env::var("EMBEDDING_KEY").ok(), dim))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let reply: EmbedReply = req
            .send_json(serde_json::json!({ "input": text }))
            .map_err(|e| EmbedError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if reply.embedding.len() != self.dim {
            return Err(EmbedError::Dimension { got: reply.embedding.len(), want: self.dim });
        }
        l2_normalize(reply.embedding)
    }
}
