//! Dense-vector primitives shared by every other module: cosine similarity,
//! temperature softmax, Shannon entropy (natural log) and the analytic
//! derivative of softmax entropy with respect to the logits.
//!
//! Everything here is a pure function over slices.

use crate::error::{OdaError, Result};

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const MIN_NORM: f64 = 1e-12;

const PROB_SUM_TOL: f64 = 1e-6;

/// A probability distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates that entries lie in [0, 1] and sum to 1 within 1e-6.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(OdaError::Invariant("probability vector is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OdaError::Invariant(format!(
                "probability entry {v} outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(OdaError::Invariant(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(values))
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs at least one class");
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(OdaError::Invariant("logit vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OdaError::Invariant("logits contain NaN or Inf".into()));
        }
        Ok(Logits(values))
    }

    /// Wraps raw values without the finiteness check. Used on the training hot
    /// path where divergence is detected from the loss instead.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Logits(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// ⟨a, b⟩ / (‖a‖ ‖b‖), clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OdaError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(OdaError::ZeroNormVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// log Σ exp(z), evaluated around the maximum.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// ln softmax(z), computed without forming the probabilities first so that
/// entries stay finite even where the probability underflows to zero.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| v - lse).collect()
}

/// exp(s_k/τ) / Σ_j exp(s_j/τ) with max-subtraction.
pub fn softmax_temp(scores: &[f64], tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0) {
        return Err(OdaError::InvalidTemperature(tau));
    }
    if scores.is_empty() {
        return Err(OdaError::Invariant("cannot softmax an empty vector".into()));
    }
    Ok(softmax_unit(&scaled(scores, tau)))
}

fn scaled(scores: &[f64], tau: f64) -> Vec<f64> {
    scores.iter().map(|s| s / tau).collect()
}

/// Softmax at unit temperature. Caller guarantees a non-empty input.
pub(crate) fn softmax_unit(z: &[f64]) -> ProbVector {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbVector(exps.into_iter().map(|e| e / sum).collect())
}

/// −Σ p ln p with 0·ln 0 = 0.
pub fn entropy(p: &ProbVector) -> f64 {
    let h: f64 = p
        .as_slice()
        .iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| -pk * pk.ln())
        .sum();
    h.max(0.0)
}

/// Entropy of softmax(z), evaluated in log space.
pub fn entropy_of_logits(z: &[f64]) -> f64 {
    let log_p = log_softmax(z);
    let h: f64 = log_p.iter().map(|&lp| -lp.exp() * lp).sum();
    h.max(0.0)
}

/// ∂H(softmax(z))/∂z_j = −p_j (ln p_j + H).
pub fn grad_entropy_wrt_logits(z: &Logits) -> Vec<f64> {
    grad_entropy_raw(z.as_slice())
}

pub(crate) fn grad_entropy_raw(z: &[f64]) -> Vec<f64> {
    let log_p = log_softmax(z);
    let h: f64 = log_p.iter().map(|&lp| -lp.exp() * lp).sum();
    log_p.iter().map(|&lp| -lp.exp() * (lp + h)).collect()
}
