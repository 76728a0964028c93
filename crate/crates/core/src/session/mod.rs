//! The generate / verify / vary loop for one session, with a branching,
//! append-only iteration history.
//!
//! Every mutation goes through [`Engine::apply`] with an [`Event`]; the
//! event is applied to a working copy and only committed when every step
//! (generation, embedding, classification) has succeeded.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{AttributeSpec, Distribution, DistributionError, Label};
use crate::gateway::{EmbedInput, EmbeddingVector, Gateway, GatewayError, LabelSpace};
use crate::metrics::{self, AlignmentFormula, DiversityReport, MetricsError};
use crate::rng::derive_seed;
use crate::sampler::{plan_iteration, Assignment, PromptPlan, SamplerError, SamplingMode};
use crate::verify::{measure_with, ImageInput, LabelPrediction, LabelTextForm, MeasuredDistribution, PredictedLabels, Verifier, VerifyError};

mod event;
mod manager;
mod store;

pub use event::Event;
pub use manager::SessionManager;
pub use store::{Store, SCHEMA_VERSION};

/// Largest image count accepted by default.
pub const DEFAULT_MAX_IMAGES: usize = 200;

/// Labels requested from the language model when none are given.
pub const DEFAULT_SUGGESTED_LABELS: usize = 5;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("image count {count} outside 1..={max}")]
    InvalidCount { count: usize, max: usize },
    #[error("context prompt is empty")]
    EmptyContext,
    #[error("attribute {0:?} already exists")]
    DuplicateAttribute(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown iteration {0}")]
    UnknownIteration(usize),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("session store is corrupt: {0}")]
    CorruptStore(String),
    #[error("store i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("event cannot be applied here: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// One generated image with everything needed to explain it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub index: usize,
    pub prompt: String,
    pub assignment: Assignment,
    pub seed: u64,
    /// Store-relative location of the payload bytes.
    pub payload_ref: String,
    pub embedding: EmbeddingVector,
    pub predicted: PredictedLabels,
    /// Payload bytes; persisted separately under `payload_ref`.
    #[serde(skip)]
    pub content: Vec<u8>,
}

/// Immutable record of one generate-and-verify cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub index: usize,
    pub parent: Option<usize>,
    pub seed: u64,
    pub attributes: Vec<AttributeSpec>,
    pub images: Vec<ImageRecord>,
    pub measured: BTreeMap<String, MeasuredDistribution>,
}

impl IterationSnapshot {
    pub fn embeddings(&self) -> Vec<EmbeddingVector> {
        self.images.iter().map(|i| i.embedding.clone()).collect()
    }

    /// Label counts of the labels actually sampled into the prompts.
    pub fn sampled_counts(&self, attribute: &str) -> Option<Vec<usize>> {
        let spec = self.attributes.iter().find(|a| a.name() == attribute)?;
        let mut counts = vec![0; spec.label_count()];
        for img in &self.images {
            counts[img.assignment.get(attribute)?] += 1;
        }
        Some(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    id: String,
    context: String,
    image_count: usize,
    seed: u64,
    mode: SamplingMode,
    attributes: Vec<AttributeSpec>,
    iterations: Vec<Arc<IterationSnapshot>>,
    head: usize,
    /// Measurements of the head images under the current attribute specs.
    live: BTreeMap<String, MeasuredDistribution>,
    history: Vec<Event>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn image_count(&self) -> usize {
        self.image_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name() == name)
    }

    pub fn iterations(&self) -> &[Arc<IterationSnapshot>] {
        &self.iterations
    }

    pub fn iteration(&self, k: usize) -> Option<&IterationSnapshot> {
        self.iterations.get(k).map(Arc::as_ref)
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn head_snapshot(&self) -> &IterationSnapshot {
        &self.iterations[self.head]
    }

    pub fn live_measurements(&self) -> &BTreeMap<String, MeasuredDistribution> {
        &self.live
    }

    pub fn measurement(&self, attribute: &str) -> Option<&MeasuredDistribution> {
        self.live.get(attribute)
    }

    pub fn history(&self) -> &[Event] {
        &self.history
    }

    /// Label additions and removals per attribute.
    pub fn label_modifications(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.attributes.iter().map(|a| (a.name().to_string(), 0)).collect();
        for e in self.history.iter().filter(|e| e.is_label_edit()) {
            if let Some(a) = e.attribute() {
                *counts.entry(a.to_string()).or_default() += 1;
            }
        }
        counts
    }

    /// Hover support: ids of head images classified as `label_index`.
    pub fn images_with_label(&self, attribute: &str, label_index: usize) -> Result<Vec<String>> {
        if self.attribute(attribute).is_none() {
            return Err(VerifyError::UnknownAttribute(attribute.to_string()).into());
        }
        let measured = self.live.get(attribute).ok_or_else(|| VerifyError::NotYetMeasured(attribute.to_string()))?;
        Ok(measured.images_with_label(label_index)?.into_iter().map(str::to_string).collect())
    }

    /// The image with `image_id` and the snapshot it belongs to.
    pub fn find_image(&self, image_id: &str) -> Option<(&IterationSnapshot, &ImageRecord)> {
        self.iterations
            .iter()
            .flat_map(|s| s.images.iter().map(move |i| (s.as_ref(), i)))
            .find(|(_, i)| i.image_id == image_id)
    }

    fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name() == name)
            .ok_or_else(|| SessionError::UnknownAttribute(name.to_string()))
    }

    pub(crate) fn from_parts(
        header: SessionHeader,
        iterations: Vec<Arc<IterationSnapshot>>,
        history: Vec<Event>,
    ) -> Self {
        Self {
            id: header.id,
            context: header.context,
            image_count: header.image_count,
            seed: header.seed,
            mode: header.mode,
            attributes: header.attributes,
            iterations,
            head: header.head,
            live: header.live,
            history,
        }
    }

    pub(crate) fn header(&self) -> SessionHeader {
        SessionHeader {
            id: self.id.clone(),
            context: self.context.clone(),
            image_count: self.image_count,
            seed: self.seed,
            mode: self.mode,
            attributes: self.attributes.clone(),
            head: self.head,
            iteration_count: self.iterations.len(),
            event_count: self.history.len(),
            live: self.live.clone(),
        }
    }
}

/// The mutable part of a session, persisted next to the log and snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SessionHeader {
    pub id: String,
    pub context: String,
    pub image_count: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    pub attributes: Vec<AttributeSpec>,
    pub head: usize,
    pub iteration_count: usize,
    pub event_count: usize,
    pub live: BTreeMap<String, MeasuredDistribution>,
}

/// Produces the `generated_at` stamp of reports.
pub type Clock = Arc<dyn Fn() -> String + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

pub fn fixed_clock(stamp: &str) -> Clock {
    let stamp = stamp.to_string();
    Arc::new(move || stamp.clone())
}

#[derive(Clone)]
pub struct EngineConfig {
    pub max_images: usize,
    pub concurrency: usize,
    pub mode: SamplingMode,
    pub label_form: LabelTextForm,
    pub alignment: AlignmentFormula,
    pub epsilon: f64,
    pub suggested_labels: usize,
    pub clock: Clock,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_images: DEFAULT_MAX_IMAGES,
            concurrency: 4,
            mode: SamplingMode::Quota,
            label_form: LabelTextForm::BareLabel,
            alignment: AlignmentFormula::Reciprocal,
            epsilon: metrics::DEFAULT_EPSILON,
            suggested_labels: DEFAULT_SUGGESTED_LABELS,
            clock: system_clock(),
        }
    }
}

impl std::fmt::Debug for EngineConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineConfig")
            .field("max_images", &self.max_images)
            .field("concurrency", &self.concurrency)
            .field("mode", &self.mode)
            .field("label_form", &self.label_form)
            .field("alignment", &self.alignment)
            .finish_non_exhaustive()
    }
}

/// Runs session operations against a gateway. Stateless apart from its
/// thread pool, so one engine can serve many sessions.
pub struct Engine {
    gateway: Gateway,
    config: EngineConfig,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(gateway: Gateway, config: EngineConfig) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.concurrency.max(1))
            .thread_name(|i| format!("generate-{i}"))
            .build()
            .expect("thread pool");
        Self { gateway, config, pool }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Creates a session and generates iteration 0 from the bare context.
    pub fn create_session(&self, id: impl Into<String>, context: &str, image_count: usize, seed: u64) -> Result<Session> {
        let context = context.trim();
        if context.is_empty() {
            return Err(SessionError::EmptyContext);
        }
        if image_count == 0 || image_count > self.config.max_images {
            return Err(SessionError::InvalidCount { count: image_count, max: self.config.max_images });
        }
        let mut session = Session {
            id: id.into(),
            context: context.to_string(),
            image_count,
            seed,
            mode: self.config.mode,
            attributes: Vec::new(),
            iterations: Vec::new(),
            head: 0,
            live: BTreeMap::new(),
            history: Vec::new(),
        };
        session.history.push(Event::Created {
            session_id: session.id.clone(),
            context: session.context.clone(),
            image_count,
            seed,
            mode: session.mode,
        });
        self.apply(&mut session, Event::Regenerated { seed })?;
        Ok(session)
    }

    /// Adds an attribute with a uniform target, asking the language model
    /// for labels when none are given, and measures it on the head images.
    pub fn add_attribute(&self, session: &mut Session, name: &str, labels: Option<Vec<Label>>) -> Result<()> {
        let name = name.trim();
        if name.is_empty() {
            return Err(DistributionError::EmptyName.into());
        }
        if session.attributes.iter().any(|a| a.name().eq_ignore_ascii_case(name)) {
            return Err(SessionError::DuplicateAttribute(name.to_string()));
        }
        let (labels, suggested) = match labels {
            Some(labels) => (labels, false),
            None => (self.gateway.suggest_labels(&session.context, name, self.config.suggested_labels)?, true),
        };
        self.apply(session, Event::AttributeAdded { name: name.to_string(), labels, suggested })
    }

    pub fn suggest_attributes(&self, session: &Session) -> Result<Vec<String>> {
        Ok(self.gateway.suggest_attributes(&session.context)?)
    }

    pub fn set_distribution(&self, session: &mut Session, attribute: &str, raw_weights: &[f64]) -> Result<()> {
        let target = Distribution::normalize(raw_weights)?;
        self.apply(session, Event::DistributionSet { attribute: attribute.to_string(), target })
    }

    pub fn set_weight(&self, session: &mut Session, attribute: &str, index: usize, weight: f64) -> Result<()> {
        self.apply(session, Event::WeightSet { attribute: attribute.to_string(), index, weight })
    }

    pub fn add_label(&self, session: &mut Session, attribute: &str, label: Label, weight: f64) -> Result<()> {
        self.apply(session, Event::LabelAdded { attribute: attribute.to_string(), label, weight })
    }

    pub fn remove_label(&self, session: &mut Session, attribute: &str, label: &str) -> Result<()> {
        let spec = session.attribute(attribute).ok_or_else(|| SessionError::UnknownAttribute(attribute.to_string()))?;
        let index = spec.position(label).ok_or_else(|| SessionError::UnknownLabel(label.to_string()))?;
        self.apply(session, Event::LabelRemoved { attribute: attribute.to_string(), index })
    }

    pub fn balance(&self, session: &mut Session, attribute: &str) -> Result<()> {
        self.apply(session, Event::Balanced { attribute: attribute.to_string() })
    }

    /// Samples new prompts from the current targets and generates the next
    /// iteration. Without an explicit seed one is derived from the session
    /// seed and the iteration number.
    pub fn regenerate(&self, session: &mut Session, seed: Option<u64>) -> Result<usize> {
        let seed = seed.unwrap_or_else(|| derive_seed(session.seed, session.iterations.len() as u64));
        self.apply(session, Event::Regenerated { seed })?;
        Ok(session.head)
    }

    pub fn branch(&self, session: &mut Session, iteration: usize) -> Result<()> {
        self.apply(session, Event::Branched { iteration })
    }

    /// Applies one event atomically: on error `session` is left untouched.
    pub fn apply(&self, session: &mut Session, event: Event) -> Result<()> {
        let mut next = session.clone();
        self.apply_in_place(&mut next, &event)?;
        next.history.push(event);
        *session = next;
        Ok(())
    }

    fn apply_in_place(&self, s: &mut Session, event: &Event) -> Result<()> {
        match event {
            Event::Created { .. } => {
                return Err(SessionError::InvalidEvent("session already created".into()));
            }
            Event::AttributeAdded { name, labels, .. } => {
                if s.attributes.iter().any(|a| a.name().eq_ignore_ascii_case(name)) {
                    return Err(SessionError::DuplicateAttribute(name.clone()));
                }
                let spec = AttributeSpec::uniform(name.clone(), labels.clone())?;
                s.attributes.push(spec);
                let measured = self.measure_head(s, name)?;
                s.live.insert(name.clone(), measured);
            }
            Event::DistributionSet { attribute, target } => {
                let i = s.attribute_index(attribute)?;
                s.attributes[i] = s.attributes[i].with_target(target.clone())?;
            }
            Event::WeightSet { attribute, index, weight } => {
                let i = s.attribute_index(attribute)?;
                s.attributes[i] = s.attributes[i].set_weight(*index, *weight)?;
            }
            Event::LabelAdded { attribute, label, weight } => {
                let i = s.attribute_index(attribute)?;
                s.attributes[i] = s.attributes[i].add_label(label.clone(), *weight)?;
                s.live.remove(attribute);
            }
            Event::LabelRemoved { attribute, index } => {
                let i = s.attribute_index(attribute)?;
                s.attributes[i] = s.attributes[i].remove_label(*index)?;
                s.live.remove(attribute);
            }
            Event::Balanced { attribute } => {
                let i = s.attribute_index(attribute)?;
                s.attributes[i] = s.attributes[i].balance();
            }
            Event::Regenerated { seed } => {
                let snapshot = self.generate(s, *seed)?;
                s.live = snapshot.measured.clone();
                s.head = snapshot.index;
                s.iterations.push(Arc::new(snapshot));
            }
            Event::Branched { iteration } => {
                let snapshot = s.iterations.get(*iteration).cloned().ok_or(SessionError::UnknownIteration(*iteration))?;
                s.attributes = snapshot.attributes.clone();
                s.live = snapshot.measured.clone();
                s.head = *iteration;
            }
        }
        Ok(())
    }

    fn embed_images(&self, ids: &[String], contents: &[&[u8]], space: &LabelSpace) -> Result<Vec<EmbeddingVector>> {
        let embedder = self.gateway.embedder.as_ref();
        self.pool.install(|| {
            ids.par_iter()
                .zip(contents.par_iter())
                .map(|(id, content)| Ok(embedder.embed(EmbedInput::Image { image_id: id, content }, space)?))
                .collect()
        })
    }

    /// Measures `attribute` on the head images, re-embedding them in the
    /// current label space.
    fn measure_head(&self, s: &Session, attribute: &str) -> Result<MeasuredDistribution> {
        let spec = s.attribute(attribute).ok_or_else(|| SessionError::UnknownAttribute(attribute.to_string()))?;
        let head = s.head_snapshot();
        let space = LabelSpace::from_specs(&s.attributes);
        let ids: Vec<String> = head.images.iter().map(|i| i.image_id.clone()).collect();
        let contents: Vec<&[u8]> = head.images.iter().map(|i| i.content.as_slice()).collect();
        let embeddings = self.embed_images(&ids, &contents, &space)?;
        let inputs: Vec<ImageInput<'_>> = ids
            .iter()
            .zip(&embeddings)
            .map(|(id, e)| ImageInput { image_id: id, embedding: e })
            .collect();
        let verifier = Verifier::new(self.gateway.embedder.as_ref(), self.config.label_form);
        Ok(self.pool.install(|| verifier.measure(&inputs, spec, &s.context, &space))?)
    }

    fn generate(&self, s: &Session, seed: u64) -> Result<IterationSnapshot> {
        let index = s.iterations.len();
        let plan = PromptPlan::new(s.context.clone(), s.image_count, s.attributes.clone(), seed, s.mode)?;
        let planned = plan_iteration(&plan)?;
        let ids: Vec<String> = (0..planned.len()).map(|i| format!("{}-{index}-{i}", s.id)).collect();

        let images = self.gateway.images.as_ref();
        let payloads = self.pool.install(|| {
            planned
                .par_iter()
                .enumerate()
                .map(|(i, p)| images.generate_image(&p.prompt, derive_seed(seed, i as u64)))
                .collect::<std::result::Result<Vec<_>, GatewayError>>()
        })?;

        let space = LabelSpace::from_specs(&s.attributes);
        let contents: Vec<&[u8]> = payloads.iter().map(|p| p.content.as_slice()).collect();
        let embeddings = self.embed_images(&ids, &contents, &space)?;

        let verifier = Verifier::new(self.gateway.embedder.as_ref(), self.config.label_form);
        let inputs: Vec<ImageInput<'_>> = ids
            .iter()
            .zip(&embeddings)
            .map(|(id, e)| ImageInput { image_id: id, embedding: e })
            .collect();
        let mut measured = BTreeMap::new();
        for spec in &s.attributes {
            let labels = verifier.label_embeddings(spec, &s.context, &space)?;
            let m = self.pool.install(|| measure_with(&inputs, spec, &labels))?;
            measured.insert(spec.name().to_string(), m);
        }

        let records = planned
            .into_iter()
            .zip(payloads)
            .zip(embeddings)
            .enumerate()
            .map(|(i, ((plan, payload), embedding))| {
                let image_id = ids[i].clone();
                let per_attribute = measured
                    .iter()
                    .map(|(name, m)| {
                        let p = &m.predictions[i];
                        (name.clone(), LabelPrediction { label_index: p.label_index, score: p.score })
                    })
                    .collect();
                ImageRecord {
                    payload_ref: format!("images/{image_id}"),
                    predicted: PredictedLabels { image_id: image_id.clone(), per_attribute },
                    image_id,
                    index: i,
                    prompt: plan.prompt,
                    assignment: plan.assignment,
                    seed: payload.seed,
                    embedding,
                    content: payload.content,
                }
            })
            .collect();

        Ok(IterationSnapshot {
            index,
            parent: if index == 0 { None } else { Some(s.head) },
            seed,
            attributes: s.attributes.clone(),
            images: records,
            measured,
        })
    }

    /// Rebuilds a session from its event log.
    pub fn replay(&self, events: &[Event]) -> Result<Session> {
        let (first, rest) = events.split_first().ok_or_else(|| SessionError::InvalidEvent("empty log".into()))?;
        let Event::Created { session_id, context, image_count, seed, mode } = first else {
            return Err(SessionError::InvalidEvent("log must start with creation".into()));
        };
        let mut session = Session {
            id: session_id.clone(),
            context: context.clone(),
            image_count: *image_count,
            seed: *seed,
            mode: *mode,
            attributes: Vec::new(),
            iterations: Vec::new(),
            head: 0,
            live: BTreeMap::new(),
            history: vec![first.clone()],
        };
        for event in rest {
            self.apply(&mut session, event.clone())?;
        }
        Ok(session)
    }

    /// Span of the head images plus alignment of every measured attribute
    /// to its current target.
    pub fn report(&self, session: &Session) -> Result<DiversityReport> {
        let head = session.head_snapshot();
        let span = metrics::span(&head.embeddings())?;
        let mut alignment = BTreeMap::new();
        for spec in &session.attributes {
            if let Some(empirical) = session.live.get(spec.name()).and_then(|m| m.empirical.as_ref()) {
                let a = metrics::alignment_with(empirical, spec.target(), self.config.alignment, self.config.epsilon)?;
                alignment.insert(spec.name().to_string(), a);
            }
        }
        Ok(DiversityReport {
            span,
            alignment,
            image_count: head.images.len(),
            generated_at: (self.config.clock)(),
        })
    }
}
