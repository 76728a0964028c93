//! Attribute, label and target-distribution types.
//!
//! Every editing operation the histogram sliders drive lives here. All of
//! them take `&self` and return a fresh value, so specs can be shared
//! between threads and snapshots without copying on read.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on `sum(weights) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("all weights are zero")]
    AllZero,
    #[error("weight {0} is negative or not finite")]
    NegativeWeight(f64),
    #[error("label index {index} out of range for {len} labels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("weight {0} outside the allowed range")]
    WeightOutOfRange(f64),
    #[error("label {0:?} already present")]
    DuplicateLabel(String),
    #[error("cannot remove the last label")]
    LastLabel,
    #[error("label text is empty")]
    EmptyLabel,
    #[error("attribute name is empty")]
    EmptyName,
    #[error("expected {expected} weights, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("weights do not form a distribution (sum {sum})")]
    NotNormalized { sum: f64 },
    #[error("an attribute needs at least one label")]
    NoLabels,
}

pub type Result<T> = std::result::Result<T, DistributionError>;

/// A label phrase: shown to users, appended to prompts and embedded for
/// classification. Always trimmed and non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(text: impl AsRef<str>) -> Result<Self> {
        let trimmed = text.as_ref().trim();
        if trimmed.is_empty() {
            return Err(DistributionError::EmptyLabel);
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Case-insensitive equality used for uniqueness within an attribute.
    pub fn same_as(&self, other: &str) -> bool {
        self.0.to_lowercase() == other.trim().to_lowercase()
    }
}

impl TryFrom<String> for Label {
    type Error = DistributionError;

    fn try_from(value: String) -> Result<Self> {
        Label::new(value)
    }
}

impl From<Label> for String {
    fn from(label: Label) -> Self {
        label.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Probability vector over an attribute's labels.
///
/// Invariant: at least one entry, every entry in `[0, 1]`, and the entries
/// sum to 1 within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    weights: Vec<f64>,
}

impl Distribution {
    /// Validates an already-normalized weight vector.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(DistributionError::NoLabels);
        }
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(DistributionError::NegativeWeight(w));
            }
            if w > 1.0 {
                return Err(DistributionError::WeightOutOfRange(w));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::NotNormalized { sum });
        }
        Ok(Self { weights })
    }

    /// Scales non-negative raw weights so they sum to one.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(DistributionError::NoLabels);
        }
        if let Some(&bad) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(DistributionError::NegativeWeight(bad));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(DistributionError::AllZero);
        }
        Ok(Self::from_unchecked(raw.iter().map(|w| w / total).collect()))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(DistributionError::NoLabels);
        }
        Ok(Self { weights: vec![1.0 / k as f64; k] })
    }

    pub fn point_mass(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(DistributionError::IndexOutOfRange { index, len: k });
        }
        let mut weights = vec![0.0; k];
        weights[index] = 1.0;
        Ok(Self { weights })
    }

    /// Empirical distribution of a histogram. `None` when every count is 0.
    pub fn from_counts(counts: &[usize]) -> Option<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return None;
        }
        Some(Self::from_unchecked(
            counts.iter().map(|&c| c as f64 / total as f64).collect(),
        ))
    }

    // Clamps round-off so the range invariant survives rescaling.
    fn from_unchecked(weights: Vec<f64>) -> Self {
        Self {
            weights: weights.into_iter().map(|w| w.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.weights.get(index).copied()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= SUM_TOLERANCE)
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = DistributionError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Distribution::new(value)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.weights
    }
}

/// A named dimension of variation with its labels and target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttributeSpec")]
pub struct AttributeSpec {
    name: String,
    labels: Vec<Label>,
    target: Distribution,
}

#[derive(Deserialize)]
struct RawAttributeSpec {
    name: String,
    labels: Vec<Label>,
    target: Distribution,
}

impl TryFrom<RawAttributeSpec> for AttributeSpec {
    type Error = DistributionError;

    fn try_from(raw: RawAttributeSpec) -> Result<Self> {
        AttributeSpec::new(raw.name, raw.labels, raw.target)
    }
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, labels: Vec<Label>, target: Distribution) -> Result<Self> {
        let name = name.into().trim().to_string();
        if name.is_empty() {
            return Err(DistributionError::EmptyName);
        }
        if labels.is_empty() {
            return Err(DistributionError::NoLabels);
        }
        if labels.len() != target.len() {
            return Err(DistributionError::LengthMismatch {
                expected: labels.len(),
                actual: target.len(),
            });
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].iter().any(|l| l.same_as(label.as_str())) {
                return Err(DistributionError::DuplicateLabel(label.to_string()));
            }
        }
        Ok(Self { name, labels, target })
    }

    /// Attribute with a uniform target over `labels`.
    pub fn uniform(name: impl Into<String>, labels: Vec<Label>) -> Result<Self> {
        let target = Distribution::uniform(labels.len())?;
        Self::new(name, labels, target)
    }

    /// Convenience constructor from plain strings.
    pub fn from_texts<S: AsRef<str>>(name: &str, labels: &[S], weights: Option<&[f64]>) -> Result<Self> {
        let labels = labels.iter().map(Label::new).collect::<Result<Vec<_>>>()?;
        match weights {
            Some(w) => {
                let target = Distribution::normalize(w)?;
                Self::new(name, labels, target)
            }
            None => Self::uniform(name, labels),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn target(&self) -> &Distribution {
        &self.target
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn position(&self, text: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.same_as(text))
    }

    /// Replaces the target wholesale (e.g. a PUT of raw slider values).
    pub fn with_target(&self, target: Distribution) -> Result<Self> {
        Self::new(self.name.clone(), self.labels.clone(), target)
    }

    /// The Balance button: uniform target over the current labels.
    pub fn balance(&self) -> Self {
        Self {
            name: self.name.clone(),
            labels: self.labels.clone(),
            target: Distribution { weights: vec![1.0 / self.labels.len() as f64; self.labels.len()] },
        }
    }

    /// Moves one slider. The edited weight is pinned exactly; the others are
    /// rescaled proportionally to share `1 - new_weight`, or split it evenly
    /// when they were all zero.
    pub fn set_weight(&self, index: usize, new_weight: f64) -> Result<Self> {
        let k = self.labels.len();
        if index >= k {
            return Err(DistributionError::IndexOutOfRange { index, len: k });
        }
        if !new_weight.is_finite() || !(0.0..=1.0).contains(&new_weight) {
            return Err(DistributionError::WeightOutOfRange(new_weight));
        }
        if k == 1 && new_weight != 1.0 {
            return Err(DistributionError::WeightOutOfRange(new_weight));
        }
        let old = self.target.weights();
        let rest = 1.0 - new_weight;
        let others: f64 = old.iter().enumerate().filter(|(i, _)| *i != index).map(|(_, w)| w).sum();
        let weights = old
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if i == index {
                    new_weight
                } else if others > 0.0 {
                    (w * rest / others).clamp(0.0, 1.0)
                } else {
                    rest / (k - 1) as f64
                }
            })
            .collect();
        Ok(Self {
            name: self.name.clone(),
            labels: self.labels.clone(),
            target: Distribution { weights },
        })
    }

    /// Appends a label at `initial_weight`, scaling existing weights by
    /// `1 - initial_weight`.
    pub fn add_label(&self, label: Label, initial_weight: f64) -> Result<Self> {
        if !initial_weight.is_finite() || !(0.0..1.0).contains(&initial_weight) {
            return Err(DistributionError::WeightOutOfRange(initial_weight));
        }
        if self.position(label.as_str()).is_some() {
            return Err(DistributionError::DuplicateLabel(label.to_string()));
        }
        let scale = 1.0 - initial_weight;
        let mut weights: Vec<f64> = self.target.weights().iter().map(|w| w * scale).collect();
        weights.push(initial_weight);
        let mut labels = self.labels.clone();
        labels.push(label);
        Ok(Self {
            name: self.name.clone(),
            labels,
            target: Distribution::from_unchecked(weights),
        })
    }

    /// Removes a label and renormalizes what remains (uniform if the removed
    /// label carried all the mass).
    pub fn remove_label(&self, index: usize) -> Result<Self> {
        let k = self.labels.len();
        if index >= k {
            return Err(DistributionError::IndexOutOfRange { index, len: k });
        }
        if k == 1 {
            return Err(DistributionError::LastLabel);
        }
        let mut labels = self.labels.clone();
        labels.remove(index);
        let mut weights = self.target.weights().to_vec();
        weights.remove(index);
        let rest: f64 = weights.iter().sum();
        let target = if rest > 0.0 {
            Distribution::from_unchecked(weights.iter().map(|w| w / rest).collect())
        } else {
            Distribution::uniform(weights.len())?
        };
        Ok(Self { name: self.name.clone(), labels, target })
    }
}
