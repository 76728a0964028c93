//! Zero-shot classification of images against attribute labels and the
//! label histograms built from it.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{AttributeSpec, Distribution};
use crate::gateway::{EmbedInput, Embedder, EmbeddingVector, GatewayError, LabelSpace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("embedding dimension {actual} does not match {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no label embeddings to classify against")]
    EmptyLabelSet,
    #[error("no images to measure")]
    EmptyImageSet,
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0:?} has not been measured on the current images")]
    NotYetMeasured(String),
    #[error("label index {index} out of range for attribute {attribute:?}")]
    UnknownLabel { attribute: String, index: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Cosine similarity; zero when either vector has zero length.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Index and score of the most similar label. Ties go to the lowest index.
pub fn classify(image: &EmbeddingVector, labels: &[EmbeddingVector]) -> Result<(usize, f64), VerifyError> {
    if labels.is_empty() {
        return Err(VerifyError::EmptyLabelSet);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, label) in labels.iter().enumerate() {
        if label.dimension() != image.dimension() {
            return Err(VerifyError::DimensionMismatch { expected: image.dimension(), actual: label.dimension() });
        }
        let score = cosine_similarity(image.values(), label.values());
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub label_index: usize,
    pub score: f64,
}

/// Predicted label per attribute for one image (the gallery tooltip).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictedLabels {
    pub image_id: String,
    pub per_attribute: BTreeMap<String, LabelPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image_id: String,
    pub label_index: usize,
    pub score: f64,
}

/// Label histogram of one attribute over one image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDistribution {
    pub attribute: String,
    pub counts: Vec<usize>,
    pub empirical: Option<Distribution>,
    /// One entry per image, in image-index order.
    pub predictions: Vec<ImagePrediction>,
}

impl MeasuredDistribution {
    pub fn from_predictions(attribute: &str, label_count: usize, predictions: Vec<ImagePrediction>) -> Self {
        let mut counts = vec![0; label_count];
        for p in &predictions {
            counts[p.label_index] += 1;
        }
        let empirical = Distribution::from_counts(&counts);
        Self { attribute: attribute.to_string(), counts, empirical, predictions }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Image ids classified as `label_index`, in image-index order.
    pub fn images_with_label(&self, label_index: usize) -> Result<Vec<&str>, VerifyError> {
        if label_index >= self.counts.len() {
            return Err(VerifyError::UnknownLabel { attribute: self.attribute.clone(), index: label_index });
        }
        Ok(self
            .predictions
            .iter()
            .filter(|p| p.label_index == label_index)
            .map(|p| p.image_id.as_str())
            .collect())
    }

    /// Share of the most frequent label; above 0.8 reads as a lack of diversity.
    pub fn dominant_share(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        *self.counts.iter().max().unwrap_or(&0) as f64 / total as f64
    }
}

/// What text a label is embedded as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTextForm {
    /// The bare label phrase.
    #[default]
    BareLabel,
    /// The full extended prompt `{context}, {attribute} {label}`.
    ExtendedPrompt,
}

/// An image to classify: its id and its embedding in the current label space.
#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub image_id: &'a str,
    pub embedding: &'a EmbeddingVector,
}

pub struct Verifier<'a> {
    embedder: &'a dyn Embedder,
    form: LabelTextForm,
}

impl<'a> Verifier<'a> {
    pub fn new(embedder: &'a dyn Embedder, form: LabelTextForm) -> Self {
        Self { embedder, form }
    }

    pub fn label_embeddings(&self, spec: &AttributeSpec, context: &str, space: &LabelSpace) -> Result<Vec<EmbeddingVector>, VerifyError> {
        spec.labels()
            .iter()
            .map(|label| {
                let text = match self.form {
                    LabelTextForm::BareLabel => label.as_str().to_string(),
                    LabelTextForm::ExtendedPrompt => format!("{context}, {} {}", spec.name(), label.as_str()),
                };
                Ok(self.embedder.embed(EmbedInput::Text(&text), space)?)
            })
            .collect()
    }

    /// Classifies every image and tallies the histogram. Any error aborts
    /// the whole measurement.
    pub fn measure(
        &self,
        images: &[ImageInput<'_>],
        spec: &AttributeSpec,
        context: &str,
        space: &LabelSpace,
    ) -> Result<MeasuredDistribution, VerifyError> {
        if images.is_empty() {
            return Err(VerifyError::EmptyImageSet);
        }
        let labels = self.label_embeddings(spec, context, space)?;
        measure_with(images, spec, &labels)
    }
}

/// Histogram from precomputed label embeddings.
pub fn measure_with(
    images: &[ImageInput<'_>],
    spec: &AttributeSpec,
    labels: &[EmbeddingVector],
) -> Result<MeasuredDistribution, VerifyError> {
    if images.is_empty() {
        return Err(VerifyError::EmptyImageSet);
    }
    let predictions = images
        .par_iter()
        .map(|img| {
            let (label_index, score) = classify(img.embedding, labels)?;
            Ok(ImagePrediction { image_id: img.image_id.to_string(), label_index, score })
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    Ok(MeasuredDistribution::from_predictions(spec.name(), spec.label_count(), predictions))
}
