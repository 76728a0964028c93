//! Narrow interfaces to the three external models: the image generator, the
//! language model used for suggestions, and the embedder that backs
//! classification. Each has a deterministic mock and an HTTP adapter.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{AttributeSpec, Label};

pub mod http;
pub mod mock;
pub mod templates;

pub use mock::{Confusion, MockEmbedder, MockImageGenerator, MockLanguageModel};
pub use templates::{parse_numbered_list, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("could not parse {expected} items from completion")]
    ParseFailure { expected: usize },
    #[error("text {0:?} is outside the registered label space")]
    UnknownLabelSpace(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub type Result<T> = std::result::Result<T, GatewayError>;

/// A generated image. The mock backend stores the prompt text as content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub image_id: String,
    #[serde(with = "base64_bytes")]
    pub content: Vec<u8>,
    pub source_prompt: String,
    pub seed: u64,
}

/// Dense embedding. Only its direction matters for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(GatewayError::MalformedResponse("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::MalformedResponse("non-finite embedding value".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect() }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    Image { image_id: &'a str, content: &'a [u8] },
    Text(&'a str),
}

impl EmbedInput<'_> {
    pub fn kind(&self) -> EmbedKind {
        match self {
            EmbedInput::Image { .. } => EmbedKind::Image,
            EmbedInput::Text(_) => EmbedKind::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Image,
    Text,
}

/// The label vocabulary in effect for an embedding call: every label of
/// every attribute, grouped by attribute. Remote embedders ignore it; the
/// mock embedder derives its basis from it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSpace {
    texts: Vec<String>,
    groups: Vec<(String, Vec<usize>)>,
}

impl LabelSpace {
    pub fn from_specs(specs: &[AttributeSpec]) -> Self {
        let mut space = Self::default();
        for spec in specs {
            space.register(spec.name(), spec.labels());
        }
        space
    }

    pub fn register(&mut self, attribute: &str, labels: &[Label]) {
        let members = labels
            .iter()
            .map(|label| {
                let key = label.as_str().to_lowercase();
                match self.texts.iter().position(|t| *t == key) {
                    Some(i) => i,
                    None => {
                        self.texts.push(key);
                        self.texts.len() - 1
                    }
                }
            })
            .collect();
        self.groups.push((attribute.to_string(), members));
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Number of distinct label texts.
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    /// Lowercased label texts in basis order.
    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        let key = text.trim().to_lowercase();
        self.texts.iter().position(|t| *t == key)
    }

    /// Basis indices of the first attribute containing text `index`.
    pub fn group_of(&self, index: usize) -> Option<&[usize]> {
        self.groups.iter().find(|(_, m)| m.contains(&index)).map(|(_, m)| m.as_slice())
    }
}

pub trait ImageGenerator: Send + Sync {
    fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImagePayload>;
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, input: EmbedInput<'_>, space: &LabelSpace) -> Result<EmbeddingVector>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub image_endpoint: String,
    pub llm_endpoint: String,
    pub embed_endpoint: String,
    pub timeout_ms: u64,
    pub mock_sigma: f64,
    pub mock_q: f64,
    pub mock_confusion: Confusion,
    pub concurrency: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            image_endpoint: "http://127.0.0.1:8001".into(),
            llm_endpoint: "http://127.0.0.1:8002".into(),
            embed_endpoint: "http://127.0.0.1:8003".into(),
            timeout_ms: 30_000,
            mock_sigma: 0.0,
            mock_q: 1.0,
            mock_confusion: Confusion::Uniform,
            concurrency: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mock_q) {
            return Err(GatewayError::InvalidRequest(format!("mock_q {} outside [0, 1]", self.mock_q)));
        }
        if !self.mock_sigma.is_finite() || self.mock_sigma < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("mock_sigma {} is negative", self.mock_sigma)));
        }
        if self.concurrency == 0 {
            return Err(GatewayError::InvalidRequest("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three model handles one engine talks to.
#[derive(Clone)]
pub struct Gateway {
    pub images: Arc<dyn ImageGenerator>,
    pub llm: Arc<dyn LanguageModel>,
    pub embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn from_config(config: &GatewayConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config.backend {
            BackendKind::Mock => Self::mock(config.mock_q, config.mock_sigma, config.mock_confusion),
            BackendKind::Http => {
                let timeout = std::time::Duration::from_millis(config.timeout_ms);
                Self {
                    images: Arc::new(http::HttpImageGenerator::new(&config.image_endpoint, timeout)?),
                    llm: Arc::new(http::HttpLanguageModel::new(&config.llm_endpoint, timeout)?),
                    embedder: Arc::new(http::HttpEmbedder::new(&config.embed_endpoint, timeout)?),
                }
            }
        })
    }

    pub fn mock(q: f64, sigma: f64, confusion: Confusion) -> Self {
        Self {
            images: Arc::new(MockImageGenerator::new()),
            llm: Arc::new(MockLanguageModel),
            embedder: Arc::new(MockEmbedder::new(q, sigma, confusion)),
        }
    }

    /// Perfect mock: every image classifies to the label in its prompt.
    pub fn perfect_mock() -> Self {
        Self::mock(1.0, 0.0, Confusion::Uniform)
    }

    pub fn suggest_labels(&self, context: &str, attribute: &str, n_a: usize) -> Result<Vec<Label>> {
        templates::suggest_labels(self.llm.as_ref(), context, attribute, n_a)
    }

    pub fn suggest_attributes(&self, context: &str) -> Result<Vec<String>> {
        templates::suggest_attributes(self.llm.as_ref(), context)
    }
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
