//! Deterministic stand-ins for the model backends.
//!
//! The mock generator echoes the prompt as image content. The mock embedder
//! maps every registered label text to its own basis axis, embeds an image
//! as the sum of the axes of the labels found in its prompt, and corrupts
//! each found label with probability `1 - q` to emulate an imperfect
//! classifier. Eight extra axes carry pseudo-noise of norm `sigma`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::templates::{CompletionRequest, SUGGESTED_ATTRIBUTES};
use super::{EmbedInput, Embedder, EmbeddingVector, GatewayError, ImageGenerator, ImagePayload, LabelSpace, LanguageModel, Result};
use crate::rng::{fnv1a, SplitMix64};

/// Axes reserved for pseudo-noise after the label axes.
pub const HASH_DIMENSIONS: usize = 8;

const NOISE_STREAM: u64 = 1 << 40;

#[derive(Debug, Default)]
pub struct MockImageGenerator {
    calls: AtomicU64,
}

impl MockImageGenerator {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ImageGenerator for MockImageGenerator {
    fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImagePayload> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let mut key = prompt.as_bytes().to_vec();
        key.extend_from_slice(&seed.to_le_bytes());
        Ok(ImagePayload {
            image_id: format!("mock-{:016x}-{call}", fnv1a(&key)),
            content: prompt.as_bytes().to_vec(),
            source_prompt: prompt.to_string(),
            seed,
        })
    }
}

/// How a corrupted label is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confusion {
    /// A different label of the same attribute, drawn uniformly.
    #[default]
    Uniform,
    /// Always the lowest-index other label of the attribute: a systematic
    /// bias toward one confuser, the way a real classifier over-predicts a
    /// dominant concept.
    Attractor,
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    q: f64,
    sigma: f64,
    confusion: Confusion,
}

impl MockEmbedder {
    pub fn new(q: f64, sigma: f64, confusion: Confusion) -> Self {
        Self { q: q.clamp(0.0, 1.0), sigma: sigma.max(0.0), confusion }
    }

    pub fn perfect() -> Self {
        Self::new(1.0, 0.0, Confusion::Uniform)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    fn basis(space: &LabelSpace) -> Vec<f64> {
        vec![0.0; space.len() + HASH_DIMENSIONS]
    }

    fn corrupt(&self, index: usize, space: &LabelSpace, rng: &mut SplitMix64) -> usize {
        let Some(group) = space.group_of(index) else {
            return index;
        };
        if group.len() < 2 || self.q >= 1.0 {
            return index;
        }
        if rng.next_f64() < self.q {
            return index;
        }
        let others: Vec<usize> = group.iter().copied().filter(|&i| i != index).collect();
        match self.confusion {
            Confusion::Uniform => others[rng.below(others.len())],
            Confusion::Attractor => others[0],
        }
    }

    fn add_noise(&self, values: &mut [f64], image_id: &str) {
        if self.sigma == 0.0 {
            return;
        }
        let offset = values.len() - HASH_DIMENSIONS;
        let mut rng = SplitMix64::stream(fnv1a(image_id.as_bytes()), NOISE_STREAM);
        let raw: Vec<f64> = (0..HASH_DIMENSIONS).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (slot, v) in values[offset..].iter_mut().zip(raw) {
                *slot = v * self.sigma / norm;
            }
        }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::perfect()
    }
}

/// Label texts occurring in `text` as whole words, longest first and
/// without overlaps, so "woman" does not also count as "man".
pub fn find_labels(text: &str, space: &LabelSpace) -> Vec<usize> {
    let haystack = text.to_lowercase();
    let bytes = haystack.as_bytes();
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(space.texts()[i].len()));
    let mut claimed = vec![false; bytes.len()];
    let mut found = Vec::new();
    let is_word = |c: char| c.is_alphanumeric();
    for i in order {
        let needle = &space.texts()[i];
        if needle.is_empty() {
            continue;
        }
        let mut matched = false;
        for (start, _) in haystack.match_indices(needle.as_str()) {
            let end = start + needle.len();
            let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !is_word(c));
            let after_ok = haystack[end..].chars().next().is_none_or(|c| !is_word(c));
            if before_ok && after_ok && !claimed[start..end].iter().any(|&c| c) {
                claimed[start..end].iter_mut().for_each(|c| *c = true);
                matched = true;
            }
        }
        if matched {
            found.push(i);
        }
    }
    found.sort_unstable();
    found
}

impl Embedder for MockEmbedder {
    fn embed(&self, input: EmbedInput<'_>, space: &LabelSpace) -> Result<EmbeddingVector> {
        match input {
            EmbedInput::Text(text) => {
                if text.trim().is_empty() {
                    return Err(GatewayError::InvalidRequest("empty text".into()));
                }
                let mut values = Self::basis(space);
                if let Some(i) = space.index_of(text) {
                    values[i] = 1.0;
                } else {
                    let found = find_labels(text, space);
                    if found.is_empty() {
                        return Err(GatewayError::UnknownLabelSpace(text.to_string()));
                    }
                    for i in found {
                        values[i] += 1.0;
                    }
                }
                EmbeddingVector::new(values)
            }
            EmbedInput::Image { image_id, content } => {
                if content.is_empty() {
                    return Err(GatewayError::InvalidRequest("empty image content".into()));
                }
                let prompt = String::from_utf8_lossy(content);
                let mut values = Self::basis(space);
                let seed = fnv1a(image_id.as_bytes());
                for i in find_labels(&prompt, space) {
                    let mut rng = SplitMix64::stream(seed, i as u64);
                    let j = self.corrupt(i, space, &mut rng);
                    values[j] += 1.0;
                }
                self.add_noise(&mut values, image_id);
                EmbeddingVector::new(values)
            }
        }
    }
}

/// Table-driven language model. Answers are keyed on the attribute and a
/// keyword of the context parsed back out of the answer template.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLanguageModel;

const LABEL_FIXTURES: &[(&str, &str, &[&str])] = &[
    ("person", "age", &["Child", "Adolescent", "Young Adult", "Middle-Aged", "Elderly"]),
    ("doctor", "age", &["30s", "40s", "50s", "60s", "70s"]),
    ("bridge", "age", &["Newly built", "Recent", "Old", "Ancient", "Historic"]),
    ("car", "age", &["New", "Used", "Old", "Classic", "Vintage"]),
    ("*", "ethnicity", &["Caucasian", "Black", "Asian", "Hispanic", "Middle-Eastern"]),
    ("*", "race", &["White", "Black", "Asian", "Hispanic", "Middle-Eastern"]),
    ("*", "gender", &["woman", "man", "non-binary person"]),
    ("*", "color", &["red", "green", "blue", "yellow", "purple"]),
    ("*", "weather", &["sunny", "snowy", "cloudy", "rainy", "foggy"]),
    ("*", "landscape", &["urban", "rural", "coastal", "desert", "mountain"]),
    ("*", "environment", &["city", "countryside", "forest", "beach", "mountain road"]),
    ("*", "habitat", &["forest", "savannah", "desert", "polar", "swamp"]),
    ("*", "pose", &["flying", "on a branch", "on the ground", "on water", "nesting"]),
    ("*", "style", &["photo", "cartoon", "watercolor", "oil painting", "pixel art"]),
];

const ATTRIBUTE_FIXTURES: &[(&str, [&str; SUGGESTED_ATTRIBUTES])] = &[
    ("car", ["color", "environment", "weather"]),
    ("doctor", ["gender", "race", "age"]),
    ("bird", ["color", "habitat", "size"]),
];

const ATTRIBUTE_FALLBACK: [&str; SUGGESTED_ATTRIBUTES] = ["style", "color", "background"];

fn has_word(context: &str, word: &str) -> bool {
    context
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| w.eq_ignore_ascii_case(word) || w.eq_ignore_ascii_case(&format!("{word}s")))
}

/// Fixture labels for `(context, attribute)`, padded with generic variants.
pub fn mock_labels(context: &str, attribute: &str, n_a: usize) -> Vec<String> {
    let attr = attribute.trim().to_lowercase();
    let fixture = LABEL_FIXTURES
        .iter()
        .find(|(ctx, a, _)| *a == attr && *ctx != "*" && has_word(context, ctx))
        .or_else(|| LABEL_FIXTURES.iter().find(|(ctx, a, _)| *a == attr && *ctx == "*"))
        .map(|(_, _, labels)| *labels)
        .unwrap_or(&[]);
    let mut labels: Vec<String> = fixture.iter().take(n_a).map(|s| s.to_string()).collect();
    let mut i = 1;
    while labels.len() < n_a {
        labels.push(format!("{} variant {}", attribute.trim(), i));
        i += 1;
    }
    labels
}

pub fn mock_attributes(context: &str) -> [&'static str; SUGGESTED_ATTRIBUTES] {
    ATTRIBUTE_FIXTURES
        .iter()
        .find(|(ctx, _)| has_word(context, ctx))
        .map(|(_, attrs)| *attrs)
        .unwrap_or(ATTRIBUTE_FALLBACK)
}

fn numbered(items: &[impl AsRef<str>]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

impl LanguageModel for MockLanguageModel {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let header = request.template.lines().next().unwrap_or_default();
        let malformed = || GatewayError::InvalidRequest(format!("unrecognized template {header:?}"));
        let rest = header.strip_prefix("Here are ").ok_or_else(malformed)?;
        let (count, rest) = rest.split_once(' ').ok_or_else(malformed)?;
        let count: usize = count.parse().map_err(|_| malformed())?;
        if let Some(rest) = rest.strip_prefix("possible labels of attribute ") {
            let (attribute, context) = rest.split_once(" in the context of ").ok_or_else(malformed)?;
            let context = context.strip_suffix(':').unwrap_or(context);
            Ok(numbered(&mock_labels(context, attribute, count)))
        } else if let Some(rest) = rest.strip_prefix("possible attributes in the context of ") {
            let context = rest.strip_suffix(':').unwrap_or(rest);
            Ok(numbered(&mock_attributes(context)))
        } else {
            Err(malformed())
        }
    }
}
