//! Dense logit and probability vectors over a vocabulary.
//!
//! All arithmetic is done in `f64`. A masked entry is stored as
//! `f64::NEG_INFINITY`; it can only be introduced through [`LogitVector::mask`]
//! and is the only non-finite value a [`LogitVector`] will hold.

use std::ops::Index;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogitError {
    #[error("logit vector must have at least one entry")]
    Empty,
    #[error("non-finite logit {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("vocabulary size mismatch: expected {expected}, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },
    #[error("operation needs at least one input vector")]
    NoInputs,
    #[error("degenerate distribution: every entry is masked")]
    DegenerateDistribution,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("masked entry at index {0} is not allowed here")]
    MaskedInput(usize),
    #[error("index {index} out of range for vocabulary of {vocab_size}")]
    OutOfRange { index: usize, vocab_size: usize },
}

const MASKED: f64 = f64::NEG_INFINITY;

/// Scores over a vocabulary at one decode step.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Builds a vector from raw scores. Every entry must be finite.
    pub fn new(values: Vec<f64>) -> Result<Self, LogitError> {
        if values.is_empty() {
            return Err(LogitError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LogitError::NonFinite { index, value });
        }
        Ok(Self { values })
    }

    /// Derived vectors may carry masked entries coming from their inputs.
    fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() || *v == MASKED));
        Self { values }
    }

    pub fn zeros(vocab_size: usize) -> Result<Self, LogitError> {
        Self::new(vec![0.0; vocab_size])
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len()
    }

    /// Raw values; masked entries read as `f64::NEG_INFINITY`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.values.get(index).copied().filter(|v| *v != MASKED)
    }

    pub fn is_masked(&self, index: usize) -> bool {
        self.values.get(index).is_some_and(|v| *v == MASKED)
    }

    pub fn masked_count(&self) -> usize {
        self.values.iter().filter(|v| **v == MASKED).count()
    }

    pub fn has_masked(&self) -> bool {
        self.values.contains(&MASKED)
    }

    /// Returns an iterator over the indices of masked entries.
    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == MASKED)
            .map(|(i, _)| i)
    }

    /// Marks `index` as masked.
    pub fn mask(&mut self, index: usize) -> Result<(), LogitError> {
        let vocab_size = self.vocab_size();
        let slot = self
            .values
            .get_mut(index)
            .ok_or(LogitError::OutOfRange { index, vocab_size })?;
        *slot = MASKED;
        Ok(())
    }

    /// Largest unmasked value, or `None` when everything is masked.
    pub fn max(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| *v != MASKED)
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.max(v))))
    }

    /// Index of the largest unmasked value; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        argmax_lowest(&self.values).filter(|&i| self.values[i] != MASKED)
    }

    fn check_same_size(&self, other: &Self) -> Result<(), LogitError> {
        if self.vocab_size() != other.vocab_size() {
            return Err(LogitError::VocabMismatch {
                expected: self.vocab_size(),
                actual: other.vocab_size(),
            });
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.values
                .iter()
                .map(|&v| if v == MASKED { MASKED } else { f(v) })
                .collect(),
        )
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, LogitError> {
        self.check_same_size(other)?;
        Ok(Self::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| if a == MASKED || b == MASKED { MASKED } else { f(a, b) })
                .collect(),
        ))
    }

    /// `self - other`. A masked entry on either side stays masked.
    pub fn sub(&self, other: &Self) -> Result<Self, LogitError> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + other`. A masked entry on either side stays masked.
    pub fn add(&self, other: &Self) -> Result<Self, LogitError> {
        self.zip_with(other, |a, b| a + b)
    }

    /// `a * self + b * other`.
    pub fn weighted_sum(&self, a: f64, other: &Self, b: f64) -> Result<Self, LogitError> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    /// Multiplies every unmasked entry by `factor`.
    pub fn mul_scalar(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// Adds `c` to every unmasked entry.
    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }
}

impl Index<usize> for LogitVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

impl<'de> Deserialize<'de> for LogitVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// A normalized distribution over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Normalizes non-negative weights. Fails when every weight is zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, LogitError> {
        if weights.is_empty() {
            return Err(LogitError::Empty);
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(LogitError::NonFinite { index, value });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(LogitError::DegenerateDistribution);
        }
        Ok(Self {
            values: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Number of entries with non-zero probability.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|p| **p > 0.0).count()
    }

    /// Most probable index; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.values).expect("probability vectors are non-empty")
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

/// Numerically stable softmax. Masked entries receive probability exactly 0.
pub fn softmax(z: &LogitVector) -> Result<ProbVector, LogitError> {
    let max = z.max().ok_or(LogitError::DegenerateDistribution)?;
    let weights: Vec<f64> = z
        .as_slice()
        .iter()
        .map(|&v| if v == MASKED { 0.0 } else { (v - max).exp() })
        .collect();
    ProbVector::from_weights(weights)
}

/// Divides every unmasked entry by the temperature `tau`.
pub fn scale(z: &LogitVector, tau: f64) -> Result<LogitVector, LogitError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LogitError::InvalidTemperature(tau));
    }
    Ok(z.map(|v| v / tau))
}

fn check_uniform_size(zs: &[LogitVector]) -> Result<&LogitVector, LogitError> {
    let first = zs.first().ok_or(LogitError::NoInputs)?;
    for z in &zs[1..] {
        first.check_same_size(z)?;
    }
    Ok(first)
}

/// Per-index maximum over a non-empty list of vectors.
pub fn elementwise_max(zs: &[LogitVector]) -> Result<LogitVector, LogitError> {
    let first = check_uniform_size(zs)?;
    let mut out = first.values.clone();
    for z in &zs[1..] {
        for (o, &v) in out.iter_mut().zip(&z.values) {
            *o = o.max(v);
        }
    }
    Ok(LogitVector::from_raw(out))
}

/// Per-index arithmetic mean over a non-empty list of unmasked vectors.
pub fn elementwise_mean(zs: &[LogitVector]) -> Result<LogitVector, LogitError> {
    let first = check_uniform_size(zs)?;
    let mut out = vec![0.0; first.vocab_size()];
    for z in zs {
        if let Some(i) = z.masked_indices().next() {
            return Err(LogitError::MaskedInput(i));
        }
        for (o, &v) in out.iter_mut().zip(&z.values) {
            *o += v;
        }
    }
    let n = zs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(LogitVector::from_raw(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn masked(v: &[f64], idx: &[usize]) -> LogitVector {
        let mut z = lv(v);
        for &i in idx {
            z.mask(i).unwrap();
        }
        z
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert_eq!(LogitVector::new(vec![]), Err(LogitError::Empty));
        assert!(matches!(
            LogitVector::new(vec![0.0, f64::NAN]),
            Err(LogitError::NonFinite { index: 1, .. })
        ));
        assert!(LogitVector::new(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert!(close(softmax(&lv(&[0.0, 0.0])).unwrap().as_slice(), &[0.5, 0.5], 1e-12));
        let p = softmax(&masked(&[1.0, 1.0, 7.0], &[2])).unwrap();
        assert!(close(p.as_slice(), &[0.5, 0.5, 0.0], 1e-12));
        assert_eq!(p[2], 0.0);
        let p = softmax(&lv(&[3f64.ln(), 0.0])).unwrap();
        assert!(close(p.as_slice(), &[0.75, 0.25], 1e-12));
    }

    #[test]
    fn softmax_all_masked_is_degenerate() {
        let z = masked(&[1.0, 2.0], &[0, 1]);
        assert_eq!(softmax(&z), Err(LogitError::DegenerateDistribution));
    }

    #[test]
    fn softmax_handles_large_magnitudes() {
        let p = softmax(&lv(&[1000.0, 1000.0, -1000.0])).unwrap();
        assert!(close(p.as_slice(), &[0.5, 0.5, 0.0], 1e-12));
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale(&lv(&[2.0, 4.0]), 1.0).unwrap(), lv(&[2.0, 4.0]));
        assert_eq!(scale(&lv(&[2.0, 4.0]), 2.0).unwrap(), lv(&[1.0, 2.0]));
        let s = scale(&masked(&[2.0, 5.0], &[1]), 2.0).unwrap();
        assert_eq!(s.get(0), Some(1.0));
        assert!(s.is_masked(1));
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(scale(&lv(&[1.0]), bad), Err(LogitError::InvalidTemperature(_))));
        }
    }

    #[test]
    fn max_and_mean_examples() {
        assert_eq!(elementwise_max(&[lv(&[1.0, 3.0])]).unwrap(), lv(&[1.0, 3.0]));
        assert_eq!(
            elementwise_max(&[lv(&[1.0, 3.0]), lv(&[2.0, 1.0])]).unwrap(),
            lv(&[2.0, 3.0])
        );
        assert_eq!(elementwise_max(&vec![lv(&[0.0, 0.0]); 3]).unwrap(), lv(&[0.0, 0.0]));

        assert_eq!(elementwise_mean(&[lv(&[1.0, 1.0])]).unwrap(), lv(&[1.0, 1.0]));
        assert_eq!(
            elementwise_mean(&[lv(&[1.0, 1.0]), lv(&[3.0, 1.0])]).unwrap(),
            lv(&[2.0, 1.0])
        );
        assert_eq!(elementwise_mean(&vec![lv(&[2.0, 4.0]); 3]).unwrap(), lv(&[2.0, 4.0]));
    }

    #[test]
    fn reductions_validate_inputs() {
        assert_eq!(elementwise_max(&[]), Err(LogitError::NoInputs));
        assert!(matches!(
            elementwise_mean(&[lv(&[1.0]), lv(&[1.0, 2.0])]),
            Err(LogitError::VocabMismatch { .. })
        ));
        assert_eq!(
            elementwise_mean(&[masked(&[1.0, 2.0], &[0])]),
            Err(LogitError::MaskedInput(0))
        );
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(lv(&[1.0, 3.0, 3.0]).argmax(), Some(1));
        assert_eq!(masked(&[9.0, 3.0, 3.0], &[0]).argmax(), Some(1));
        assert_eq!(masked(&[1.0], &[0]).argmax(), None);
    }

    #[test]
    fn temperature_limits() {
        let z = lv(&[0.3, 1.7, -0.4, 1.2]);
        let cold = softmax(&scale(&z, 1e-3).unwrap()).unwrap();
        assert!(close(cold.as_slice(), &[0.0, 1.0, 0.0, 0.0], 1e-6));
        let hot = softmax(&scale(&z, 1e6).unwrap()).unwrap();
        assert!(close(hot.as_slice(), &[0.25; 4], 1e-6));

        let zm = masked(&[0.3, 1.7, -0.4, 1.2], &[1]);
        let hot = softmax(&scale(&zm, 1e6).unwrap()).unwrap();
        let third = 1.0 / 3.0;
        assert!(close(hot.as_slice(), &[third, 0.0, third, third], 1e-6));
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-30.0f64..30.0, len)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in finite_vec(17), mask_bits in any::<u16>()) {
            let mut z = LogitVector::new(v).unwrap();
            for i in 0..16 {
                if mask_bits & (1 << i) != 0 {
                    z.mask(i).unwrap();
                }
            }
            let p = softmax(&z).unwrap();
            let total: f64 = p.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for i in z.masked_indices() {
                prop_assert_eq!(p[i], 0.0);
            }
        }

        #[test]
        fn softmax_shift_invariant(v in finite_vec(12), c in -100.0f64..100.0) {
            let z = LogitVector::new(v).unwrap();
            let a = softmax(&z).unwrap();
            let b = softmax(&z.shift(c)).unwrap();
            prop_assert!(close(a.as_slice(), b.as_slice(), 1e-9));
        }

        #[test]
        fn max_and_mean_permutation_invariant(
            a in finite_vec(6), b in finite_vec(6), c in finite_vec(6)
        ) {
            let (a, b, c) = (lv(&a), lv(&b), lv(&c));
            let fwd = [a.clone(), b.clone(), c.clone()];
            let rev = [c, a, b];
            prop_assert_eq!(elementwise_max(&fwd).unwrap(), elementwise_max(&rev).unwrap());
            let m1 = elementwise_mean(&fwd).unwrap();
            let m2 = elementwise_mean(&rev).unwrap();
            prop_assert!(close(m1.as_slice(), m2.as_slice(), 1e-12));
        }
    }
}
