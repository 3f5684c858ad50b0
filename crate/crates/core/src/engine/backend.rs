use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Reference to the image half of a model input.
///
/// On the wire it reads `{"kind": "path" | "b64" | "toy", "value": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ImageRef {
    Path(String),
    B64(String),
    Toy(String),
}

impl ImageRef {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Path(_) => "path",
            Self::B64(_) => "b64",
            Self::Toy(_) => "toy",
        }
    }

    pub fn value(&self) -> &str {
        match self {
            Self::Path(v) | Self::B64(v) | Self::Toy(v) => v,
        }
    }
}

/// One next-token query: an (image, prompt) pair plus the shared generated context.
#[derive(Debug, Clone, Copy)]
pub struct LogitQuery<'a> {
    pub image: &'a ImageRef,
    pub prompt: &'a str,
    pub context_ids: &'a [u32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub eos_id: u32,
    pub deterministic: bool,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("backend returned {actual} logits, expected {expected}")]
    WrongVocab { expected: usize, actual: usize },
}

impl BackendError {
    /// Transport failures are worth retrying; input errors are not.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport(_))
            || matches!(self, Self::Remote { code, .. } if code == "resource" || code == "transport")
    }
}

/// A source of next-token logits. Tokenization belongs to the backend so the
/// decode loop never needs to know the model's vocabulary.
pub trait LogitBackend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError>;

    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError>;

    fn next_logits(&self, query: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError>;

    /// Logits for several queries that share a decode step. Backends able to
    /// run a real batch override this; the default answers them one by one.
    fn next_logits_batch(&self, queries: &[LogitQuery<'_>]) -> Result<Vec<Vec<f64>>, BackendError> {
        queries.iter().map(|q| self.next_logits(q)).collect()
    }
}

impl<B: LogitBackend + ?Sized> LogitBackend for &B {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        (**self).detokenize(ids)
    }
    fn next_logits(&self, query: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError> {
        (**self).next_logits(query)
    }
    fn next_logits_batch(&self, queries: &[LogitQuery<'_>]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).next_logits_batch(queries)
    }
}

impl<B: LogitBackend + ?Sized> LogitBackend for Box<B> {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        (**self).detokenize(ids)
    }
    fn next_logits(&self, query: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError> {
        (**self).next_logits(query)
    }
    fn next_logits_batch(&self, queries: &[LogitQuery<'_>]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).next_logits_batch(queries)
    }
}

/// Wraps a backend and sleeps before every logit call, simulating a remote model.
#[derive(Debug)]
pub struct Delayed<B> {
    inner: B,
    latency: Duration,
}

impl<B> Delayed<B> {
    pub fn new(inner: B, latency: Duration) -> Self {
        Self { inner, latency }
    }
}

impl<B: LogitBackend> LogitBackend for Delayed<B> {
    fn info(&self) -> &BackendInfo {
        self.inner.info()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        self.inner.detokenize(ids)
    }
    fn next_logits(&self, query: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError> {
        std::thread::sleep(self.latency);
        self.inner.next_logits(query)
    }
    fn next_logits_batch(&self, queries: &[LogitQuery<'_>]) -> Result<Vec<Vec<f64>>, BackendError> {
        // one round trip per batch
        std::thread::sleep(self.latency);
        queries.iter().map(|q| self.inner.next_logits(q)).collect()
    }
}
