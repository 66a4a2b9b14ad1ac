//! Embedding providers and similarity math.
//!
//! Two providers exist: an HTTP client for a remote embedding service and
//! `hash-test`, an offline provider that hashes tokens into signed buckets.
//! The hash provider is integer-only up to the final normalization, so its
//! output is bit-identical across runs and platforms. Texts sharing tokens
//! land near each other, which is enough to exercise retrieval end to end.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Tokenizer, WhitespaceTokenizer};

/// Environment variable holding the bearer token for remote services.
pub const API_KEY_ENV: &str = "MODEL_API_KEY";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("embedding must be non-empty and finite")]
    InvalidVector,
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("embedding provider unavailable (retryable): {0}")]
    Transport(String),
    #[error("embedding provider returned a malformed response: {0}")]
    Protocol(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

/// A dense vector with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector);
        }
        Ok(Self(values))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine of the angle between `a` and `b`, accumulated in `f64`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Http,
    HashTest,
}

impl ProviderKind {
    fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Http => "http",
            ProviderKind::HashTest => "hash-test",
        }
    }
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    pub dims: usize,
    /// Hash seed for `hash-test`; ignored by `http`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl EmbeddingProviderConfig {
    pub fn hash_test(dims: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::HashTest,
            endpoint: None,
            model_name: None,
            dims,
            seed,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>, dims: usize) -> Self {
        Self {
            kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            dims,
            seed: 0,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dims == 0 {
            return Err(EmbedError::Config("dims must be positive".into()));
        }
        if self.kind == ProviderKind::Http && (self.endpoint.is_none() || self.model_name.is_none())
        {
            return Err(EmbedError::Config(
                "http provider requires endpoint and model_name".into(),
            ));
        }
        Ok(())
    }

    /// Identity recorded in vector stores: kind, model name and dims.
    pub fn fingerprint(&self) -> String {
        let model = match self.kind {
            ProviderKind::HashTest => format!("seed{}", self.seed),
            ProviderKind::Http => self.model_name.clone().unwrap_or_default(),
        };
        format!("{}/{}/{}", self.kind.as_str(), model, self.dims)
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::HashTest => Box::new(HashTestProvider::new(self.dims, self.seed)),
            ProviderKind::Http => Box::new(HttpEmbeddingProvider::new(self.clone())?),
        })
    }
}

/// Source of embeddings. Implementations must tolerate concurrent calls and
/// give each text the same vector regardless of how calls are batched.
pub trait EmbeddingProvider: Send + Sync {
    fn dims(&self) -> usize;

    fn fingerprint(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| EmbedError::Protocol("empty batch response".into()))
    }
}

/// Embeds `text` with the provider described by `config`.
pub fn embed_text(config: &EmbeddingProviderConfig, text: &str) -> Result<EmbeddingVector, EmbedError> {
    config.build()?.embed(text)
}

fn check_inputs(texts: &[&str]) -> Result<(), EmbedError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyInput);
    }
    Ok(())
}

/// Seeded feature-hashing provider for offline tests.
#[derive(Debug, Clone)]
pub struct HashTestProvider {
    dims: usize,
    seed: u64,
}

/// Buckets each token is hashed into.
const HASH_PROBES: u64 = 2;

impl HashTestProvider {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims > 0, "dims must be positive");
        Self { dims, seed }
    }

    fn vectorize(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0i64; self.dims];
        for token in WhitespaceTokenizer.tokens(text) {
            let token = token.to_lowercase();
            for probe in 0..HASH_PROBES {
                let h = fnv1a(self.seed ^ probe.wrapping_mul(0x9e37_79b9_7f4a_7c15), token.as_bytes());
                let bucket = (h % self.dims as u64) as usize;
                if h >> 63 == 0 {
                    counts[bucket] += 1;
                } else {
                    counts[bucket] -= 1;
                }
            }
        }
        if counts.iter().all(|&c| c == 0) {
            // signs cancelled out; fall back to a bucket keyed by the full text
            let h = fnv1a(self.seed, text.as_bytes());
            counts[(h % self.dims as u64) as usize] = 1;
        }
        let sq: i64 = counts.iter().map(|c| c * c).sum();
        let n = (sq as f64).sqrt();
        EmbeddingVector(counts.iter().map(|&c| (c as f64 / n) as f32).collect())
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // final avalanche so the sign bit and low bits are well mixed
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl EmbeddingProvider for HashTestProvider {
    fn dims(&self) -> usize {
        self.dims
    }

    fn fingerprint(&self) -> String {
        EmbeddingProviderConfig::hash_test(self.dims, self.seed).fingerprint()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        Ok(texts.iter().map(|t| self.vectorize(t)).collect())
    }
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
    embedding: Vec<f32>,
}

/// Client for an embedding service speaking
/// `POST {model, input:[..]} -> {data:[{embedding:[..]}]}`.
pub struct HttpEmbeddingProvider {
    config: EmbeddingProviderConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpEmbeddingProvider {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            api_key: std::env::var(API_KEY_ENV).ok(),
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dims(&self) -> usize {
        self.config.dims
    }

    fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        let endpoint = self.config.endpoint.as_deref().unwrap_or_default();
        let model = self.config.model_name.as_deref().unwrap_or_default();
        let mut request = self.agent.post(endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(EmbedRequest { model, input: texts })
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(EmbedError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(EmbedError::Protocol(format!("HTTP {status}")));
        }
        let parsed: EmbedResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dims {
                    return Err(EmbedError::DimensionMismatch {
                        left: self.config.dims,
                        right: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let doubled = v(&[0.6, -2.4, 4.0]);
        assert!((cosine_similarity(&a, &doubled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbedError::DimensionMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(EmbedError::ZeroNorm)
        ));
        assert!(EmbeddingVector::new(vec![f32::NAN]).is_err());
    }

    #[test]
    fn hash_provider_is_deterministic() {
        let p = HashTestProvider::new(8, 7);
        let a = p.embed("abc").unwrap();
        assert_eq!(a, p.embed("abc").unwrap());
        assert_eq!(a.dims(), 8);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        // batching does not change per-item output
        let batch = p.embed_batch(&["xyz", "abc"]).unwrap();
        assert_eq!(batch[1], a);
    }

    #[test]
    fn hash_provider_ignores_case() {
        let bits: Vec<u32> = HashTestProvider::new(4, 0)
            .embed("base station load")
            .unwrap()
            .values()
            .iter()
            .map(|x| x.to_bits())
            .collect();
        let again: Vec<u32> = HashTestProvider::new(4, 0)
            .embed("Base Station LOAD")
            .unwrap()
            .values()
            .iter()
            .map(|x| x.to_bits())
            .collect();
        assert_eq!(bits, again);
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let p = HashTestProvider::new(256, 1);
        let q = p.embed("symbol shutdown duration").unwrap();
        let near = p.embed("the symbol shutdown duration is configured").unwrap();
        let far = p.embed("carrier aggregation bandwidth parts").unwrap();
        assert!(cosine_similarity(&q, &near).unwrap() > cosine_similarity(&q, &far).unwrap());
    }

    #[test]
    fn empty_text_is_input_error() {
        let p = HashTestProvider::new(8, 0);
        assert!(matches!(p.embed("   "), Err(EmbedError::EmptyInput)));
    }

    #[test]
    fn config_validation_and_fingerprint() {
        let mut cfg = EmbeddingProviderConfig::http("http://x", "bge-base-en-v1.5", 768);
        assert_eq!(cfg.fingerprint(), "http/bge-base-en-v1.5/768");
        cfg.model_name = None;
        assert!(cfg.validate().is_err());
        assert_eq!(
            EmbeddingProviderConfig::hash_test(64, 3).fingerprint(),
            "hash-test/seed3/64"
        );
        let parsed: EmbeddingProviderConfig =
            serde_json::from_str(r#"{"kind":"hash-test","dims":16}"#).unwrap();
        assert_eq!(parsed, EmbeddingProviderConfig::hash_test(16, 0));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // port 9 on localhost is the discard service; nothing listens in CI
        let mut cfg = EmbeddingProviderConfig::http("http://127.0.0.1:9/embed", "m", 4);
        cfg.timeout_secs = 2;
        let err = embed_text(&cfg, "abc").unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}
