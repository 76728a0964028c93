//! Request and response bodies. Every response carries `schema_version`.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use divprompt_core::metrics::DiversityReport;
use divprompt_core::session::{ImageRecord, IterationSnapshot};
use divprompt_core::{AttributeSpec, SamplingMode, Session};
use serde::{Deserialize, Serialize};

use crate::SCHEMA_VERSION;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub context: String,
    pub n: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddAttribute {
    pub name: String,
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetDistribution {
    pub weights: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddLabel {
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generate {
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub iteration: usize,
}

#[derive(Debug, Deserialize)]
pub struct LabelQuery {
    pub label: usize,
}

/// Labels, target weights and (when measured) counts of one attribute.
#[derive(Debug, Serialize)]
pub struct Histogram {
    pub name: String,
    pub labels: Vec<String>,
    pub target: Vec<f64>,
    pub measured: Option<Vec<usize>>,
}

impl Histogram {
    pub fn new(spec: &AttributeSpec, measured: Option<Vec<usize>>) -> Self {
        Self {
            name: spec.name().to_string(),
            labels: spec.labels().iter().map(|l| l.as_str().to_string()).collect(),
            target: spec.target().weights().to_vec(),
            measured,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct HistoryNode {
    pub index: usize,
    pub parent: Option<usize>,
    pub seed: u64,
    pub attributes: Vec<String>,
}

impl HistoryNode {
    fn new(s: &IterationSnapshot) -> Self {
        Self {
            index: s.index,
            parent: s.parent,
            seed: s.seed,
            attributes: s.attributes.iter().map(|a| a.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionBody {
    pub schema_version: u32,
    pub session_id: String,
    pub context: String,
    pub n: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    pub head: usize,
    pub attributes: Vec<Histogram>,
    pub iterations: Vec<HistoryNode>,
    pub label_modifications: BTreeMap<String, usize>,
}

impl SessionBody {
    pub fn new(s: &Session) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: s.id().to_string(),
            context: s.context().to_string(),
            n: s.image_count(),
            seed: s.seed(),
            mode: s.mode(),
            head: s.head(),
            attributes: s
                .attributes()
                .iter()
                .map(|a| Histogram::new(a, s.measurement(a.name()).map(|m| m.counts.clone())))
                .collect(),
            iterations: s.iterations().iter().map(|i| HistoryNode::new(i)).collect(),
            label_modifications: s.label_modifications(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AttributeBody {
    pub schema_version: u32,
    pub session_id: String,
    pub attribute: Histogram,
}

impl AttributeBody {
    pub fn new(s: &Session, name: &str) -> Option<Self> {
        let spec = s.attribute(name)?;
        Some(Self {
            schema_version: SCHEMA_VERSION,
            session_id: s.id().to_string(),
            attribute: Histogram::new(spec, s.measurement(name).map(|m| m.counts.clone())),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct SuggestionBody {
    pub schema_version: u32,
    pub attributes: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct PredictionBody {
    pub label_index: usize,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub index: usize,
    pub prompt: String,
    pub assignment: BTreeMap<String, usize>,
    pub seed: u64,
    pub payload_ref: String,
    pub embedding: Vec<f64>,
    pub predicted: BTreeMap<String, PredictionBody>,
}

fn predictions(record: &ImageRecord, attributes: &[AttributeSpec]) -> BTreeMap<String, PredictionBody> {
    record
        .predicted
        .per_attribute
        .iter()
        .map(|(name, p)| {
            let label = attributes
                .iter()
                .find(|a| a.name() == name)
                .and_then(|a| a.labels().get(p.label_index))
                .map(|l| l.as_str().to_string())
                .unwrap_or_default();
            (name.clone(), PredictionBody { label_index: p.label_index, label, score: p.score })
        })
        .collect()
}

impl ImageSummary {
    fn new(record: &ImageRecord, attributes: &[AttributeSpec]) -> Self {
        Self {
            image_id: record.image_id.clone(),
            index: record.index,
            prompt: record.prompt.clone(),
            assignment: record.assignment.iter().map(|(k, v)| (k.to_string(), v)).collect(),
            seed: record.seed,
            payload_ref: record.payload_ref.clone(),
            embedding: record.embedding.values().to_vec(),
            predicted: predictions(record, attributes),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IterationBody {
    pub schema_version: u32,
    pub session_id: String,
    pub index: usize,
    pub parent: Option<usize>,
    pub seed: u64,
    pub attributes: Vec<Histogram>,
    pub images: Vec<ImageSummary>,
}

impl IterationBody {
    pub fn new(session_id: &str, s: &IterationSnapshot) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.to_string(),
            index: s.index,
            parent: s.parent,
            seed: s.seed,
            attributes: s
                .attributes
                .iter()
                .map(|a| Histogram::new(a, s.measured.get(a.name()).map(|m| m.counts.clone())))
                .collect(),
            images: s.images.iter().map(|i| ImageSummary::new(i, &s.attributes)).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IterationList {
    pub schema_version: u32,
    pub session_id: String,
    pub head: usize,
    pub iterations: Vec<HistoryNode>,
}

impl IterationList {
    pub fn new(s: &Session) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: s.id().to_string(),
            head: s.head(),
            iterations: s.iterations().iter().map(|i| HistoryNode::new(i)).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MetricsBody {
    pub schema_version: u32,
    pub session_id: String,
    pub iteration: usize,
    pub span: f64,
    pub alignment: BTreeMap<String, f64>,
    pub mean_alignment: Option<f64>,
    pub image_count: usize,
    pub generated_at: String,
}

impl MetricsBody {
    pub fn new(s: &Session, report: DiversityReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: s.id().to_string(),
            iteration: s.head(),
            mean_alignment: report.mean_alignment(),
            span: report.span,
            alignment: report.alignment,
            image_count: report.image_count,
            generated_at: report.generated_at,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ImageBody {
    pub schema_version: u32,
    pub image_id: String,
    pub prompt: String,
    pub seed: u64,
    pub content_base64: String,
    pub predicted: BTreeMap<String, PredictionBody>,
}

impl ImageBody {
    pub fn new(record: &ImageRecord, attributes: &[AttributeSpec]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            image_id: record.image_id.clone(),
            prompt: record.prompt.clone(),
            seed: record.seed,
            content_base64: STANDARD.encode(&record.content),
            predicted: predictions(record, attributes),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct HighlightBody {
    pub schema_version: u32,
    pub attribute: String,
    pub label_index: usize,
    pub label: String,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct CapabilitiesBody {
    pub schema_version: u32,
    pub max_n: usize,
    pub backend: String,
    pub suggested_labels: usize,
}
