//! Greedy and seeded top-k token selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::logits::ProbVector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("top-k sampling needs k >= 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    Greedy,
    TopK { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(flatten)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self { mode: SamplingMode::Greedy, seed: 0 }
    }

    pub fn top_k(k: usize, seed: u64) -> Self {
        Self { mode: SamplingMode::TopK { k }, seed }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        match self.mode {
            SamplingMode::TopK { k: 0 } => Err(SamplerError::InvalidK),
            _ => Ok(()),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::greedy()
    }
}

/// Owns the random state of one decode session.
#[derive(Debug, Clone)]
pub struct Sampler {
    mode: SamplingMode,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(cfg: &SamplerConfig) -> Result<Self, SamplerError> {
        cfg.validate()?;
        Ok(Self {
            mode: cfg.mode,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn sample(&mut self, p: &ProbVector) -> usize {
        match self.mode {
            SamplingMode::Greedy => p.argmax(),
            SamplingMode::TopK { k } => sample_top_k(p, k, &mut self.rng),
        }
    }
}

/// Draws from the renormalized `k` most probable entries. Zero-probability
/// entries never take part, so masked tokens cannot be drawn.
fn sample_top_k(p: &ProbVector, k: usize, rng: &mut impl Rng) -> usize {
    let probs = p.as_slice();
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    // stable sort keeps lower indices first among equal probabilities
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order.truncate(k.max(1));
    if order.len() == 1 {
        return order[0];
    }
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut draw = rng.random::<f64>() * total;
    for &i in &order {
        draw -= probs[i];
        if draw < 0.0 {
            return i;
        }
    }
    *order.last().expect("non-empty support")
}
