//! Probabilistic prompts.
//!
//! One label is sampled per attribute per image and appended to the shared
//! context prompt as `{context}, {attribute} {label}, ...`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{AttributeSpec, Distribution};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("context prompt is empty")]
    EmptyContext,
    #[error("image count must be at least 1")]
    InvalidCount,
    #[error("attribute {0:?} appears twice in the plan")]
    DuplicateAttribute(String),
    #[error("no label chosen for attribute {0:?}")]
    MissingAssignment(String),
    #[error("label index {index} invalid for attribute {attribute:?}")]
    InvalidLabelIndex { attribute: String, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Largest-remainder apportionment per attribute, then a seeded shuffle.
    #[default]
    Quota,
    /// Independent categorical draws.
    Iid,
}

/// Inputs for one round of prompt construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPlan {
    context: String,
    count: usize,
    attributes: Vec<AttributeSpec>,
    seed: u64,
    mode: SamplingMode,
}

impl PromptPlan {
    pub fn new(
        context: impl Into<String>,
        count: usize,
        attributes: Vec<AttributeSpec>,
        seed: u64,
        mode: SamplingMode,
    ) -> Result<Self, SamplerError> {
        let context = context.into();
        if context.trim().is_empty() {
            return Err(SamplerError::EmptyContext);
        }
        if count == 0 {
            return Err(SamplerError::InvalidCount);
        }
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name().to_lowercase()) {
                return Err(SamplerError::DuplicateAttribute(a.name().to_string()));
            }
        }
        Ok(Self { context, count, attributes, seed, mode })
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }
}

/// Chosen label index per attribute name for one image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<String, usize>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, attribute: impl Into<String>, label_index: usize) {
        self.0.insert(attribute.into(), label_index);
    }

    pub fn get(&self, attribute: &str) -> Option<usize> {
        self.0.get(attribute).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<S: Into<String>> FromIterator<(S, usize)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (S, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// One planned image: its label assignment and extended prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedPrompt {
    pub assignment: Assignment,
    pub prompt: String,
}

/// Largest-remainder (Hamilton) apportionment of `n` seats over `weights`.
/// Ties on the remainder go to the lower index.
pub fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    // Quotas within 1e-9 of an integer are snapped so exact products such as
    // 10 * 0.3 do not lose a seat to round-off.
    const SNAP: f64 = 1e-9;
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + SNAP).floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remaining = n.saturating_sub(assigned);
    if remaining > 0 {
        let mut order: Vec<usize> = (0..weights.len()).collect();
        let remainder = |i: usize| quotas[i] - counts[i] as f64;
        // Stable sort keeps the lower index first on equal remainders.
        order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)));
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            counts[i] += 1;
            remaining -= 1;
        }
    }
    counts
}

fn quota_column(target: &Distribution, n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let counts = largest_remainder(target.weights(), n);
    let mut slots: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(label, &c)| std::iter::repeat_n(label, c))
        .collect();
    rng.shuffle(&mut slots);
    slots
}

fn categorical(target: &Distribution, rng: &mut SplitMix64) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in target.weights().iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc && w > 0.0 {
            return i;
        }
    }
    last_positive
}

fn iid_column(target: &Distribution, n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    (0..n).map(|_| categorical(target, rng)).collect()
}

/// Draws `plan.count()` assignments. Each attribute uses its own stream keyed
/// by its position in the plan.
pub fn sample_assignments(plan: &PromptPlan) -> Vec<Assignment> {
    let n = plan.count;
    let columns: Vec<Vec<usize>> = plan
        .attributes
        .iter()
        .enumerate()
        .map(|(i, attr)| {
            let mut rng = SplitMix64::stream(plan.seed, i as u64);
            match plan.mode {
                SamplingMode::Quota => quota_column(attr.target(), n, &mut rng),
                SamplingMode::Iid => iid_column(attr.target(), n, &mut rng),
            }
        })
        .collect();
    (0..n)
        .map(|image| {
            plan.attributes
                .iter()
                .zip(&columns)
                .map(|(attr, col)| (attr.name().to_string(), col[image]))
                .collect()
        })
        .collect()
}

/// Appends `, {name} {label}` for every attribute, in order.
pub fn build_prompt(
    context: &str,
    attributes: &[AttributeSpec],
    assignment: &Assignment,
) -> Result<String, SamplerError> {
    let mut prompt = context.to_string();
    for attr in attributes {
        let index = assignment
            .get(attr.name())
            .ok_or_else(|| SamplerError::MissingAssignment(attr.name().to_string()))?;
        let label = attr.labels().get(index).ok_or_else(|| SamplerError::InvalidLabelIndex {
            attribute: attr.name().to_string(),
            index,
        })?;
        prompt.push_str(", ");
        prompt.push_str(attr.name());
        prompt.push(' ');
        prompt.push_str(label.as_str());
    }
    Ok(prompt)
}

/// Samples and expands every prompt of one iteration, in image-index order.
pub fn plan_iteration(plan: &PromptPlan) -> Result<Vec<PlannedPrompt>, SamplerError> {
    sample_assignments(plan)
        .into_iter()
        .map(|assignment| {
            let prompt = build_prompt(&plan.context, &plan.attributes, &assignment)?;
            Ok(PlannedPrompt { assignment, prompt })
        })
        .collect()
}

/// Per-label counts of `attribute` across a set of assignments.
pub fn label_counts(assignments: &[Assignment], attribute: &str, k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for a in assignments {
        if let Some(i) = a.get(attribute) {
            if i < k {
                counts[i] += 1;
            }
        }
    }
    counts
}
