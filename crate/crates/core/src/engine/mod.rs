//! Autoregressive multi-variant decoding.
//!
//! A decode session keeps one generated-token context shared by the original
//! input and every counterfactual variant. At each step the backend is asked
//! for the logits of every variant the strategy reads, the strategy folds them
//! into one distribution, a token is sampled, and that token is appended to the
//! shared context.

pub mod backend;
pub mod toy;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use backend::{BackendError, BackendInfo, Delayed, ImageRef, LogitBackend, LogitQuery};

use crate::logits::{LogitError, LogitVector};
use crate::sampling::{Sampler, SamplerConfig, SamplerError};
use crate::strategies::{aggregate_logits, StepLogits, StrategyConfig, StrategyError};

/// One (image, prompt) input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    pub image: ImageRef,
    pub prompt: String,
}

/// The original input with its visual and textual counterfactuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSet {
    pub original: Variant,
    /// Same prompt as the original, different image.
    #[serde(default)]
    pub visual: Vec<Variant>,
    /// Same image as the original, different prompt.
    #[serde(default)]
    pub textual: Vec<Variant>,
}

impl VariantSet {
    pub fn single(image: ImageRef, prompt: impl Into<String>) -> Self {
        Self {
            original: Variant { id: "orig".into(), image, prompt: prompt.into() },
            visual: Vec::new(),
            textual: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.visual.len()
    }

    pub fn n(&self) -> usize {
        self.textual.len()
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if let Some(v) = self.visual.iter().find(|v| v.prompt != self.original.prompt) {
            return Err(DecodeError::InvalidVariants(format!(
                "visual variant {} changes the prompt",
                v.id
            )));
        }
        if let Some(v) = self.textual.iter().find(|v| v.image != self.original.image) {
            return Err(DecodeError::InvalidVariants(format!(
                "textual variant {} changes the image",
                v.id
            )));
        }
        Ok(())
    }

    /// A set restricted to the first `m` visual and `n` textual variants.
    pub fn truncated(&self, m: usize, n: usize) -> Self {
        Self {
            original: self.original.clone(),
            visual: self.visual.iter().take(m).cloned().collect(),
            textual: self.textual.iter().take(n).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("invalid variant set: {0}")]
    InvalidVariants(String),
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
    #[error("backend failed at step {step}: {source}")]
    Backend { step: usize, source: BackendError },
    #[error("bad logits at step {step}: {source}")]
    Logits { step: usize, source: LogitError },
    #[error("aggregation failed at step {step}: {source}")]
    Aggregate { step: usize, source: StrategyError },
}

impl DecodeError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Backend { source, .. } if source.is_retriable())
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Strategy(_) | Self::Sampler(_) | Self::InvalidVariants(_) | Self::ZeroMaxTokens
        )
    }
}

pub const DEFAULT_MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRequest {
    pub variants: VariantSet,
    pub strategy: StrategyConfig,
    pub sampler: SamplerConfig,
    pub max_tokens: usize,
    pub diagnostics: bool,
}

impl DecodeRequest {
    pub fn new(variants: VariantSet, strategy: StrategyConfig) -> Self {
        Self {
            variants,
            strategy,
            sampler: SamplerConfig::greedy(),
            max_tokens: DEFAULT_MAX_TOKENS,
            diagnostics: false,
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerConfig) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub masked_count: usize,
    pub support_size: usize,
    /// Whether the chosen token equals each queried variant's own argmax,
    /// in query order: original, visual variants, textual variants.
    pub argmax_agreement: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Every sampled token, including a final end-of-sequence token.
    pub token_ids: Vec<u32>,
    pub text: String,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<StepDiagnostic>>,
}

fn to_logits(step: usize, raw: Vec<f64>, vocab_size: usize) -> Result<LogitVector, DecodeError> {
    if raw.len() != vocab_size {
        return Err(DecodeError::Backend {
            step,
            source: BackendError::WrongVocab { expected: vocab_size, actual: raw.len() },
        });
    }
    LogitVector::new(raw).map_err(|source| DecodeError::Logits { step, source })
}

/// Runs one decode session to end-of-sequence or `max_tokens`.
pub fn decode(backend: &dyn LogitBackend, request: &DecodeRequest) -> Result<DecodeResult, DecodeError> {
    let variants = &request.variants;
    variants.validate()?;
    request.strategy.check_preconditions(variants.m())?;
    if request.max_tokens == 0 {
        return Err(DecodeError::ZeroMaxTokens);
    }
    let mut sampler = Sampler::new(&request.sampler)?;

    let kind = request.strategy.kind;
    let visual = &variants.visual[..kind.visual_used(variants.m())];
    let textual = &variants.textual[..kind.textual_used(variants.n())];
    let info = backend.info();

    let mut context: Vec<u32> = Vec::new();
    let mut diagnostics = request.diagnostics.then(Vec::new);

    for step in 0..request.max_tokens {
        let queries: Vec<LogitQuery<'_>> = std::iter::once(&variants.original)
            .chain(visual)
            .chain(textual)
            .map(|v| LogitQuery { image: &v.image, prompt: &v.prompt, context_ids: &context })
            .collect();
        let mut raw = backend
            .next_logits_batch(&queries)
            .map_err(|source| DecodeError::Backend { step, source })?
            .into_iter();
        if raw.len() != queries.len() {
            return Err(DecodeError::Backend {
                step,
                source: BackendError::Transport(format!(
                    "asked for {} logit vectors, got {}",
                    queries.len(),
                    raw.len()
                )),
            });
        }
        let mut next = || to_logits(step, raw.next().expect("length checked"), info.vocab_size);
        let original = next()?;
        let visual_logits = (0..visual.len()).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
        let textual_logits = (0..textual.len()).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
        let step_logits = StepLogits {
            original,
            visual: visual_logits,
            textual: textual_logits,
            step_index: step,
        };

        let aggregated = aggregate_logits(&step_logits, &request.strategy)
            .map_err(|source| DecodeError::Aggregate { step, source })?;
        let probs = crate::logits::softmax(&aggregated)
            .map_err(|source| DecodeError::Aggregate { step, source: source.into() })?;
        let token = sampler.sample(&probs) as u32;

        if let Some(diags) = diagnostics.as_mut() {
            let agreement = std::iter::once(&step_logits.original)
                .chain(&step_logits.visual)
                .chain(&step_logits.textual)
                .map(|z| z.argmax() == Some(token as usize))
                .collect();
            diags.push(StepDiagnostic {
                masked_count: aggregated.masked_count(),
                support_size: probs.support_size(),
                argmax_agreement: agreement,
            });
        }

        context.push(token);
        if token == info.eos_id {
            break;
        }
    }

    let text = backend
        .detokenize(&context)
        .map_err(|source| DecodeError::Backend { step: context.len(), source })?;
    Ok(DecodeResult { steps: context.len(), token_ids: context, text, diagnostics })
}

/// Decodes many requests on up to `parallelism` threads.
///
/// Request `i` samples with seed `sampler.seed ^ i`, so results depend only on
/// the request list, never on scheduling. Output order matches input order and
/// each request fails or succeeds on its own.
pub fn decode_batch(
    backend: &dyn LogitBackend,
    requests: &[DecodeRequest],
    parallelism: usize,
) -> Vec<Result<DecodeResult, DecodeError>> {
    use rayon::prelude::*;

    let run = |(i, req): (usize, &DecodeRequest)| {
        let mut req = req.clone();
        req.sampler.seed ^= i as u64;
        decode(backend, &req)
    };
    let parallelism = parallelism.max(1);
    if parallelism == 1 || requests.len() <= 1 {
        return requests.iter().enumerate().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| requests.par_iter().enumerate().map(run).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}), decoding sequentially");
            requests.iter().enumerate().map(run).collect()
        }
    }
}
