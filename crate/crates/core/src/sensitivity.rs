//! How much measured alignment depends on classifier accuracy.
//!
//! For each configured accuracy `q` the full pipeline runs against a mock
//! gateway whose embedder mislabels with probability `1 - q`. Alignment is
//! then computed twice: from the predicted labels and from the labels that
//! were actually sampled into the prompts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{Distribution, Label};
use crate::gateway::{Confusion, Gateway};
use crate::metrics::alignment;
use crate::rng::derive_seed;
use crate::sampler::SamplingMode;
use crate::session::{Engine, EngineConfig, Result, SessionError};

/// Attributes available to a sweep, grouped by the context they belong to.
pub const FIXTURE_ATTRIBUTES: [(&str, &str, [&str; 8]); 12] = [
    ("a doctor at work", "race", ["White", "Black", "Asian", "Hispanic", "Middle-Eastern", "Native American", "Pacific Islander", "South Asian"]),
    ("a doctor at work", "age", ["20s", "30s", "40s", "50s", "60s", "70s", "80s", "90s"]),
    ("a doctor at work", "environment", ["hospital", "home", "office", "clinic", "laboratory", "ambulance", "school", "park"]),
    ("a doctor at work", "image style", ["photo", "cartoon", "watercolor", "sketch", "oil painting", "pixel art", "comic", "3D render"]),
    ("a bird in nature", "habitat", ["forest", "savannah", "desert", "polar", "swamp", "river", "sea", "mountain"]),
    ("a bird in nature", "pose", ["flying", "on a branch", "on the ground", "on water", "perched", "swimming", "nesting", "diving"]),
    ("a bird in nature", "color", ["red", "blue", "yellow", "green", "black", "white", "brown", "orange"]),
    ("a bird in nature", "size", ["tiny", "small", "medium", "large", "huge", "tall", "short", "giant"]),
    ("a car on display", "color", ["blue", "red", "yellow", "green", "purple", "black", "white", "silver"]),
    ("a car on display", "weather", ["sunny", "snowy", "cloudy", "rainy", "foggy", "stormy", "windy", "hazy"]),
    ("a car on display", "year", ["1950s", "1960s", "1970s", "1980s", "1990s", "2000s", "2010s", "2020s"]),
    ("a car on display", "background", ["city", "countryside", "mountain", "beach", "desert", "forest", "highway", "garage"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub accuracies: Vec<f64>,
    pub images: usize,
    pub labels: usize,
    pub attributes: usize,
    pub seed: u64,
    pub sigma: f64,
    pub confusion: Confusion,
    pub mode: SamplingMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            accuracies: vec![1.0, 0.8, 0.6, 0.4],
            images: 200,
            labels: 5,
            attributes: FIXTURE_ATTRIBUTES.len(),
            seed: 7,
            sigma: 0.0,
            confusion: Confusion::Attractor,
            mode: SamplingMode::Quota,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub q: f64,
    pub observed_accuracy: f64,
    pub alignment_predicted: f64,
    pub alignment_actual: f64,
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SessionError::InvalidEvent(msg));
        if self.accuracies.is_empty() {
            return bad("no accuracies given".into());
        }
        if let Some(q) = self.accuracies.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return bad(format!("accuracy {q} outside [0, 1]"));
        }
        if !(2..=8).contains(&self.labels) {
            return bad(format!("label count {} outside 2..=8", self.labels));
        }
        if !(1..=FIXTURE_ATTRIBUTES.len()).contains(&self.attributes) {
            return bad(format!("attribute count {} outside 1..={}", self.attributes, FIXTURE_ATTRIBUTES.len()));
        }
        if self.images == 0 {
            return bad("image count must be positive".into());
        }
        Ok(())
    }

    /// Selected fixture attributes grouped by context, in fixture order.
    fn groups(&self) -> Vec<(&'static str, Vec<(&'static str, Vec<Label>)>)> {
        let mut groups: Vec<(&str, Vec<(&str, Vec<Label>)>)> = Vec::new();
        for (context, name, labels) in FIXTURE_ATTRIBUTES.iter().take(self.attributes) {
            let labels = labels[..self.labels].iter().map(|l| Label::new(l).expect("fixture label")).collect();
            match groups.iter_mut().find(|(c, _)| c == context) {
                Some((_, attrs)) => attrs.push((name, labels)),
                None => groups.push((context, vec![(name, labels)])),
            }
        }
        groups
    }
}

struct Tally {
    correct: usize,
    total: usize,
    predicted: Vec<f64>,
    actual: Vec<f64>,
}

fn run_point(config: &SweepConfig, q: f64) -> Result<SensitivityPoint> {
    let engine = Engine::new(
        Gateway::mock(q, config.sigma, config.confusion),
        EngineConfig { mode: config.mode, max_images: config.images.max(1), ..EngineConfig::default() },
    );
    let mut tally = Tally { correct: 0, total: 0, predicted: Vec::new(), actual: Vec::new() };
    for (g, (context, attrs)) in config.groups().into_iter().enumerate() {
        let seed = derive_seed(config.seed, g as u64);
        let mut session = engine.create_session(format!("sweep-{g}"), context, config.images, seed)?;
        for (name, labels) in &attrs {
            engine.add_attribute(&mut session, name, Some(labels.clone()))?;
        }
        engine.regenerate(&mut session, Some(seed))?;
        let head = session.head_snapshot();
        for (name, _) in &attrs {
            let spec = session.attribute(name).expect("attribute just added");
            let measured = &head.measured[*name];
            for (image, prediction) in head.images.iter().zip(&measured.predictions) {
                tally.total += 1;
                if image.assignment.get(name) == Some(prediction.label_index) {
                    tally.correct += 1;
                }
            }
            let predicted = Distribution::from_counts(&measured.counts).expect("non-empty image set");
            let sampled = head.sampled_counts(name).expect("attribute sampled");
            let actual = Distribution::from_counts(&sampled).expect("non-empty image set");
            tally.predicted.push(alignment(&predicted, spec.target())?);
            tally.actual.push(alignment(&actual, spec.target())?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SensitivityPoint {
        q,
        observed_accuracy: tally.correct as f64 / tally.total as f64,
        alignment_predicted: mean(&tally.predicted),
        alignment_actual: mean(&tally.actual),
    })
}

/// One point per configured accuracy, all sharing the same prompt seeds.
pub fn sensitivity_sweep(config: &SweepConfig) -> Result<Vec<SensitivityPoint>> {
    config.validate()?;
    config.accuracies.par_iter().map(|&q| run_point(config, q)).collect()
}

/// Plot-ready delimited output.
pub fn to_csv(points: &[SensitivityPoint]) -> String {
    let mut out = String::from("q,observed_accuracy,alignment_predicted,alignment_actual\n");
    for p in points {
        out.push_str(&format!("{:.2},{:.6},{:.6},{:.6}\n", p.q, p.observed_accuracy, p.alignment_predicted, p.alignment_actual));
    }
    out
}

/// Predicted and actual alignment keyed by accuracy, for quick lookups.
pub fn by_accuracy(points: &[SensitivityPoint]) -> BTreeMap<String, (f64, f64)> {
    points
        .iter()
        .map(|p| (format!("{:.2}", p.q), (p.alignment_predicted, p.alignment_actual)))
        .collect()
}
