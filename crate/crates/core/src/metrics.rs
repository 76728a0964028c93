//! Set-level diversity measures: embedding span and KL-based alignment of a
//! measured label distribution to its target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::Distribution;
use crate::gateway::EmbeddingVector;

/// Additive smoothing applied to both sides of the divergence.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Percentile used by [`span`].
pub const SPAN_PERCENTILE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no embeddings")]
    EmptySet,
    #[error("embedding dimension {actual} does not match {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("distribution lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

/// Linear-interpolated percentile of `values` (`p` in `[0, 1]`), ranking at
/// `p * (m - 1)` over the sorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// 95th percentile of the Euclidean distances from each embedding to the
/// mean embedding.
pub fn span(embeddings: &[EmbeddingVector]) -> Result<f64, MetricsError> {
    let first = embeddings.first().ok_or(MetricsError::EmptySet)?;
    let d = first.dimension();
    // Offsets from the first vector keep coincident inputs at exactly zero.
    let mut mean_offset = vec![0.0; d];
    for e in embeddings {
        if e.dimension() != d {
            return Err(MetricsError::DimensionMismatch { expected: d, actual: e.dimension() });
        }
        for ((m, v), o) in mean_offset.iter_mut().zip(e.values()).zip(first.values()) {
            *m += v - o;
        }
    }
    let m = embeddings.len() as f64;
    mean_offset.iter_mut().for_each(|x| *x /= m);
    let distances: Vec<f64> = embeddings
        .iter()
        .map(|e| {
            e.values()
                .iter()
                .zip(first.values())
                .zip(&mean_offset)
                .map(|((v, o), c)| (v - o - c) * (v - o - c))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(percentile(&distances, SPAN_PERCENTILE).unwrap_or(0.0))
}

fn smooth(d: &Distribution, epsilon: f64) -> Vec<f64> {
    let z = 1.0 + epsilon * d.len() as f64;
    d.weights().iter().map(|w| (w + epsilon) / z).collect()
}

/// `KL(measured || target)` after additive `epsilon` smoothing of both sides.
pub fn kl_divergence(measured: &Distribution, target: &Distribution, epsilon: f64) -> Result<f64, MetricsError> {
    if measured.len() != target.len() {
        return Err(MetricsError::LengthMismatch(measured.len(), target.len()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MetricsError::InvalidEpsilon(epsilon));
    }
    let p = smooth(measured, epsilon);
    let q = smooth(target, epsilon);
    let kl: f64 = p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
    Ok(kl.max(0.0))
}

/// How a divergence is mapped onto `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentFormula {
    /// `1 / (1 + KL)`
    #[default]
    Reciprocal,
    /// `exp(-KL)`
    NegExp,
}

impl AlignmentFormula {
    pub fn apply(self, kl: f64) -> f64 {
        match self {
            AlignmentFormula::Reciprocal => 1.0 / (1.0 + kl),
            AlignmentFormula::NegExp => (-kl).exp(),
        }
    }
}

/// Diversity alignment `1 / (1 + KL(measured || target))`.
pub fn alignment(measured: &Distribution, target: &Distribution) -> Result<f64, MetricsError> {
    alignment_with(measured, target, AlignmentFormula::Reciprocal, DEFAULT_EPSILON)
}

pub fn alignment_with(
    measured: &Distribution,
    target: &Distribution,
    formula: AlignmentFormula,
    epsilon: f64,
) -> Result<f64, MetricsError> {
    Ok(formula.apply(kl_divergence(measured, target, epsilon)?))
}

/// Span plus per-attribute alignment for one image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub span: f64,
    pub alignment: BTreeMap<String, f64>,
    pub image_count: usize,
    pub generated_at: String,
}

impl DiversityReport {
    /// Uniform mean over attributes; `None` without attributes.
    pub fn mean_alignment(&self) -> Option<f64> {
        if self.alignment.is_empty() {
            return None;
        }
        Some(self.alignment.values().sum::<f64>() / self.alignment.len() as f64)
    }
}
