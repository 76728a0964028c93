use serde::{Deserialize, Serialize};

use crate::distribution::{Distribution, Label};
use crate::sampler::SamplingMode;

/// One state-changing operation on a session. The log of these, replayed
/// against the same gateway, rebuilds the session exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        context: String,
        image_count: usize,
        seed: u64,
        mode: SamplingMode,
    },
    /// Labels are recorded as resolved, so replay never calls the LLM.
    AttributeAdded {
        name: String,
        labels: Vec<Label>,
        suggested: bool,
    },
    DistributionSet {
        attribute: String,
        target: Distribution,
    },
    WeightSet {
        attribute: String,
        index: usize,
        weight: f64,
    },
    LabelAdded {
        attribute: String,
        label: Label,
        weight: f64,
    },
    LabelRemoved {
        attribute: String,
        index: usize,
    },
    Balanced {
        attribute: String,
    },
    Regenerated {
        seed: u64,
    },
    Branched {
        iteration: usize,
    },
}

impl Event {
    pub fn is_label_edit(&self) -> bool {
        matches!(self, Event::LabelAdded { .. } | Event::LabelRemoved { .. })
    }

    pub fn attribute(&self) -> Option<&str> {
        match self {
            Event::AttributeAdded { name, .. } => Some(name),
            Event::DistributionSet { attribute, .. }
            | Event::WeightSet { attribute, .. }
            | Event::LabelAdded { attribute, .. }
            | Event::LabelRemoved { attribute, .. }
            | Event::Balanced { attribute } => Some(attribute),
            _ => None,
        }
    }
}
