//! Counterfactual-aware decoding for vision-language models.
//!
//! The crate combines next-token logits from an original (image, prompt)
//! pair with logits from visual and textual counterfactuals, decodes with the
//! combined distribution, and builds the bias/sensitivity evaluation subsets.

pub mod counterfactuals;
pub mod drbench;
pub mod engine;
pub mod logits;
pub mod sampling;
pub mod strategies;

pub use engine::{
    decode, decode_batch, BackendError, BackendInfo, DecodeError, DecodeRequest, DecodeResult, ImageRef,
    LogitBackend, Variant, VariantSet,
};
pub use logits::{softmax, LogitError, LogitVector, ProbVector};
pub use sampling::{Sampler, SamplerConfig, SamplingMode};
pub use strategies::{aggregate_logits, aggregate_step, StepLogits, StrategyConfig, StrategyError, StrategyKind};
