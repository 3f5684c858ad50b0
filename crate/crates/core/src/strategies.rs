//! Per-step aggregation rules over original and counterfactual logits.
//!
//! Every strategy reads one [`StepLogits`] and produces a single logit vector:
//!
//! * `baseline`: the original logits, untouched.
//! * `tie`: original minus the first visual counterfactual.
//! * `vcd`: `(1 + alpha) * original - alpha * first visual counterfactual`.
//! * `m3id`: `vcd` with `alpha = 1 / tau(step)` for a position schedule.
//! * `sci`: `TC / tau1 + VC / tau2`, where `TC` is the element-wise maximum
//!   over the original and all textual variants and `VC` is the original minus
//!   the mean of all visual variants.
//!
//! The sum in log space is the product `exp(TC / tau1) * exp(VC / tau2)` once
//! the softmax normalizes it, without ever exponentiating large values.
//!
//! Before the softmax every strategy except `baseline` applies the adaptive
//! plausibility constraint: tokens whose criterion logit falls below
//! `max(criterion) + ln(beta)` are masked. The criterion is the original
//! logits for `tie`/`vcd`/`m3id` and `TC / tau1` for `sci`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::logits::{
    elementwise_max, elementwise_mean, scale, softmax, LogitError, LogitVector, ProbVector,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error("{kind} needs at least {needed} visual counterfactual(s), got {got}")]
    MissingVisualVariants { kind: StrategyKind, needed: usize, got: usize },
    #[error("invalid strategy configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Logit(#[from] LogitError),
}

/// The logits of every variant at one decode step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogits {
    pub original: LogitVector,
    pub visual: Vec<LogitVector>,
    pub textual: Vec<LogitVector>,
    /// 0-based position of the token being predicted.
    pub step_index: usize,
}

impl StepLogits {
    pub fn new(original: LogitVector) -> Self {
        Self { original, visual: Vec::new(), textual: Vec::new(), step_index: 0 }
    }

    pub fn with_visual(mut self, visual: Vec<LogitVector>) -> Self {
        self.visual = visual;
        self
    }

    pub fn with_textual(mut self, textual: Vec<LogitVector>) -> Self {
        self.textual = textual;
        self
    }

    pub fn at_step(mut self, step_index: usize) -> Self {
        self.step_index = step_index;
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.original.vocab_size()
    }

    /// Checks every vector against the original's vocabulary size.
    pub fn validate(&self) -> Result<(), LogitError> {
        let expected = self.vocab_size();
        for z in self.visual.iter().chain(&self.textual) {
            if z.vocab_size() != expected {
                return Err(LogitError::VocabMismatch { expected, actual: z.vocab_size() });
            }
        }
        Ok(())
    }

    fn first_visual(&self, kind: StrategyKind) -> Result<&LogitVector, StrategyError> {
        self.visual.first().ok_or(StrategyError::MissingVisualVariants {
            kind,
            needed: 1,
            got: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Baseline,
    Tie,
    Vcd,
    M3id,
    Sci,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Tie => "tie",
            Self::Vcd => "vcd",
            Self::M3id => "m3id",
            Self::Sci => "sci",
        }
    }

    /// Minimum number of visual counterfactuals the strategy reads.
    pub fn min_visual(self) -> usize {
        match self {
            Self::Baseline => 0,
            _ => 1,
        }
    }

    /// How many visual variants the strategy actually consumes out of `m`.
    pub fn visual_used(self, m: usize) -> usize {
        match self {
            Self::Baseline => 0,
            Self::Tie | Self::Vcd | Self::M3id => m.min(1),
            Self::Sci => m,
        }
    }

    /// How many textual variants the strategy actually consumes out of `n`.
    pub fn textual_used(self, n: usize) -> usize {
        match self {
            Self::Sci => n,
            _ => 0,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Self::Baseline),
            "tie" => Ok(Self::Tie),
            "vcd" => Ok(Self::Vcd),
            "m3id" => Ok(Self::M3id),
            "sci" => Ok(Self::Sci),
            other => Err(StrategyError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Position-dependent temperature for `m3id`.
///
/// The exact schedule of the original method is not reproduced here;
/// `Exponential` approximates it by letting the visual contrast fade as the
/// answer gets longer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauSchedule {
    /// `tau(t) = tau`.
    Constant { tau: f64 },
    /// `tau(t) = exp(t / gamma)`.
    Exponential { gamma: f64 },
}

impl TauSchedule {
    pub fn tau_at(&self, step_index: usize) -> f64 {
        match *self {
            Self::Constant { tau } => tau,
            Self::Exponential { gamma } => (step_index as f64 / gamma).exp(),
        }
    }

    fn validate(&self) -> Result<(), StrategyError> {
        let ok = match *self {
            Self::Constant { tau } => tau > 0.0 && tau.is_finite(),
            Self::Exponential { gamma } => gamma > 0.0 && gamma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(StrategyError::Config(format!("invalid m3id schedule {self:?}")))
        }
    }
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self::Exponential { gamma: 1.0 }
    }
}

/// Default plausibility threshold on robustness subsets.
pub const BETA_DRBENCH: f64 = 0.3;
/// Default plausibility threshold on unfiltered datasets.
pub const BETA_ORIGINAL: f64 = 0.8;
/// Default VC temperature.
pub const TAU2_DEFAULT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau1")]
    pub tau1: f64,
    #[serde(default = "default_tau2")]
    pub tau2: f64,
    /// Plausibility threshold in (0, 1]; `None` switches the constraint off.
    #[serde(default = "default_beta")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub m3id_schedule: TauSchedule,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_tau1() -> f64 {
    2.0
}
fn default_tau2() -> f64 {
    TAU2_DEFAULT
}
fn default_beta() -> Option<f64> {
    Some(BETA_DRBENCH)
}

impl StrategyConfig {
    fn with_kind(kind: StrategyKind) -> Self {
        Self {
            kind,
            alpha: default_alpha(),
            tau1: default_tau1(),
            tau2: default_tau2(),
            beta: default_beta(),
            m3id_schedule: TauSchedule::default(),
        }
    }

    pub fn baseline() -> Self {
        Self { beta: None, ..Self::with_kind(StrategyKind::Baseline) }
    }

    pub fn tie() -> Self {
        Self::with_kind(StrategyKind::Tie)
    }

    pub fn vcd(alpha: f64) -> Self {
        Self { alpha, ..Self::with_kind(StrategyKind::Vcd) }
    }

    pub fn m3id(schedule: TauSchedule) -> Self {
        Self { m3id_schedule: schedule, ..Self::with_kind(StrategyKind::M3id) }
    }

    pub fn sci(tau1: f64, tau2: f64) -> Self {
        Self { tau1, tau2, ..Self::with_kind(StrategyKind::Sci) }
    }

    pub fn with_beta(mut self, beta: Option<f64>) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(StrategyError::Config(format!("beta must be in (0, 1], got {beta}")));
            }
        }
        match self.kind {
            StrategyKind::Vcd if !(self.alpha >= 0.0 && self.alpha.is_finite()) => {
                Err(StrategyError::Config(format!("alpha must be >= 0, got {}", self.alpha)))
            }
            StrategyKind::Sci => {
                for (name, tau) in [("tau1", self.tau1), ("tau2", self.tau2)] {
                    if !(tau > 0.0 && tau.is_finite()) {
                        return Err(StrategyError::Config(format!(
                            "{name} must be positive, got {tau}"
                        )));
                    }
                }
                Ok(())
            }
            StrategyKind::M3id => self.m3id_schedule.validate(),
            _ => Ok(()),
        }
    }

    /// Checks the configuration and the variant counts a step will carry.
    pub fn check_preconditions(&self, m: usize) -> Result<(), StrategyError> {
        self.validate()?;
        let needed = self.kind.min_visual();
        if m < needed {
            return Err(StrategyError::MissingVisualVariants { kind: self.kind, needed, got: m });
        }
        Ok(())
    }
}

/// Original minus the first visual counterfactual.
pub fn tie_logits(step: &StepLogits) -> Result<LogitVector, StrategyError> {
    let variant = step.first_visual(StrategyKind::Tie)?;
    Ok(step.original.sub(variant)?)
}

/// `(1 + alpha) * original - alpha * variant` over the first visual counterfactual.
pub fn vcd_logits(step: &StepLogits, alpha: f64) -> Result<LogitVector, StrategyError> {
    let variant = step.first_visual(StrategyKind::Vcd)?;
    Ok(step.original.weighted_sum(1.0 + alpha, variant, -alpha)?)
}

pub fn m3id_logits(step: &StepLogits, schedule: &TauSchedule) -> Result<LogitVector, StrategyError> {
    let tau = schedule.tau_at(step.step_index);
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(StrategyError::Config(format!(
            "m3id schedule gave tau = {tau} at step {}",
            step.step_index
        )));
    }
    let variant = step.first_visual(StrategyKind::M3id)?;
    let alpha = 1.0 / tau;
    Ok(step.original.weighted_sum(1.0 + alpha, variant, -alpha)?)
}

/// Element-wise maximum over the original and every textual variant.
pub fn tc_logits(step: &StepLogits) -> Result<LogitVector, StrategyError> {
    let mut all = Vec::with_capacity(step.textual.len() + 1);
    all.push(step.original.clone());
    all.extend(step.textual.iter().cloned());
    Ok(elementwise_max(&all)?)
}

/// Original minus the mean of the visual variants.
pub fn vc_logits(step: &StepLogits) -> Result<LogitVector, StrategyError> {
    if step.visual.is_empty() {
        return Err(StrategyError::MissingVisualVariants {
            kind: StrategyKind::Sci,
            needed: 1,
            got: 0,
        });
    }
    let mean = elementwise_mean(&step.visual)?;
    Ok(step.original.sub(&mean)?)
}

/// `TC / tau1 + VC / tau2`.
pub fn sci_combine(step: &StepLogits, cfg: &StrategyConfig) -> Result<LogitVector, StrategyError> {
    let tc = scale(&tc_logits(step)?, cfg.tau1)?;
    let vc = scale(&vc_logits(step)?, cfg.tau2)?;
    Ok(tc.add(&vc)?)
}

/// Masks in `target` every index whose criterion value is below
/// `max(criterion) + ln(beta)`. The criterion's argmax always survives.
pub fn plausibility_mask(
    target: &LogitVector,
    criterion: &LogitVector,
    beta: f64,
) -> Result<LogitVector, StrategyError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(StrategyError::Config(format!("beta must be in (0, 1], got {beta}")));
    }
    if target.vocab_size() != criterion.vocab_size() {
        return Err(LogitError::VocabMismatch {
            expected: target.vocab_size(),
            actual: criterion.vocab_size(),
        }
        .into());
    }
    let max = criterion.max().ok_or(LogitError::DegenerateDistribution)?;
    let threshold = max + beta.ln();
    let mut out = target.clone();
    for (k, &c) in criterion.as_slice().iter().enumerate() {
        if c < threshold {
            out.mask(k)?;
        }
    }
    Ok(out)
}

/// The strategy logits after the plausibility constraint, before the softmax.
pub fn aggregate_logits(step: &StepLogits, cfg: &StrategyConfig) -> Result<LogitVector, StrategyError> {
    step.validate()?;
    cfg.check_preconditions(step.visual.len())?;
    let (raw, criterion) = match cfg.kind {
        StrategyKind::Baseline => return Ok(step.original.clone()),
        StrategyKind::Tie => (tie_logits(step)?, None),
        StrategyKind::Vcd => (vcd_logits(step, cfg.alpha)?, None),
        StrategyKind::M3id => (m3id_logits(step, &cfg.m3id_schedule)?, None),
        StrategyKind::Sci => {
            let tc = scale(&tc_logits(step)?, cfg.tau1)?;
            let vc = scale(&vc_logits(step)?, cfg.tau2)?;
            (tc.add(&vc)?, Some(tc))
        }
    };
    match cfg.beta {
        None => Ok(raw),
        Some(beta) => {
            let criterion = criterion.as_ref().unwrap_or(&step.original);
            plausibility_mask(&raw, criterion, beta)
        }
    }
}

/// Full per-step pipeline: aggregate, constrain, normalize.
pub fn aggregate_step(step: &StepLogits, cfg: &StrategyConfig) -> Result<ProbVector, StrategyError> {
    Ok(softmax(&aggregate_logits(step, cfg)?)?)
}
