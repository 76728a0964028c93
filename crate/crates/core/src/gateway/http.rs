//! HTTP adapters for remote model servers.
//!
//! Wire contract (JSON bodies):
//! - `POST {image}/generate` `{prompt, seed}` -> `{image_id, content_base64}`
//! - `POST {llm}/complete` `{system, instruction, template}` -> `{text}`
//! - `POST {embed}/embed` `{kind, payload}` -> `{values}`; image payloads are
//!   base64, text payloads are the raw string.

use std::sync::OnceLock;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::templates::CompletionRequest;
use super::{EmbedInput, EmbedKind, Embedder, EmbeddingVector, GatewayError, ImageGenerator, ImagePayload, LabelSpace, LanguageModel, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_id: String,
    pub content_base64: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub values: Vec<f64>,
}

/// The blocking client owns a private runtime and cannot be built from
/// async code, so it is created on first use (always on a worker thread).
#[derive(Debug, Clone)]
struct JsonEndpoint {
    client: OnceLock<Client>,
    url: String,
    timeout: Duration,
}

impl JsonEndpoint {
    fn new(base: &str, path: &str, timeout: Duration) -> Result<Self> {
        let url = format!("{}/{}", base.trim_end_matches('/'), path);
        reqwest::Url::parse(&url).map_err(|e| GatewayError::InvalidRequest(format!("bad endpoint {url:?}: {e}")))?;
        Ok(Self { client: OnceLock::new(), url, timeout })
    }

    fn client(&self) -> Result<&Client> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let built = Client::builder()
            .timeout(self.timeout)
            .connect_timeout(self.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        Ok(self.client.get_or_init(|| built))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let response = self.client()?.post(&self.url).json(body).send().map_err(|e| self.classify(e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(GatewayError::BackendUnavailable(format!("{} returned {status}", self.url)));
        }
        let bytes = response.bytes().map_err(|e| self.classify(e))?;
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::MalformedResponse(e.to_string()))
    }

    fn classify(&self, err: reqwest::Error) -> GatewayError {
        if err.is_timeout() {
            GatewayError::Timeout(self.timeout.as_millis() as u64)
        } else if err.is_decode() || err.is_body() {
            GatewayError::MalformedResponse(err.to_string())
        } else {
            GatewayError::BackendUnavailable(err.to_string())
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpImageGenerator {
    endpoint: JsonEndpoint,
}

impl HttpImageGenerator {
    pub fn new(base: &str, timeout: Duration) -> Result<Self> {
        Ok(Self { endpoint: JsonEndpoint::new(base, "generate", timeout)? })
    }
}

impl ImageGenerator for HttpImageGenerator {
    fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImagePayload> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let resp: GenerateResponse = self.endpoint.post(&GenerateRequest { prompt: prompt.to_string(), seed })?;
        let content = STANDARD
            .decode(resp.content_base64.as_bytes())
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        if resp.image_id.is_empty() {
            return Err(GatewayError::MalformedResponse("empty image_id".into()));
        }
        Ok(ImagePayload { image_id: resp.image_id, content, source_prompt: prompt.to_string(), seed })
    }
}

#[derive(Debug, Clone)]
pub struct HttpLanguageModel {
    endpoint: JsonEndpoint,
}

impl HttpLanguageModel {
    pub fn new(base: &str, timeout: Duration) -> Result<Self> {
        Ok(Self { endpoint: JsonEndpoint::new(base, "complete", timeout)? })
    }
}

impl LanguageModel for HttpLanguageModel {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let resp: CompleteResponse = self.endpoint.post(request)?;
        Ok(resp.text)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: JsonEndpoint,
}

impl HttpEmbedder {
    pub fn new(base: &str, timeout: Duration) -> Result<Self> {
        Ok(Self { endpoint: JsonEndpoint::new(base, "embed", timeout)? })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, input: EmbedInput<'_>, _space: &LabelSpace) -> Result<EmbeddingVector> {
        let payload = match input {
            EmbedInput::Image { content, .. } => STANDARD.encode(content),
            EmbedInput::Text(text) => text.to_string(),
        };
        if payload.is_empty() {
            return Err(GatewayError::InvalidRequest("empty embedding input".into()));
        }
        let resp: EmbedResponse = self.endpoint.post(&EmbedRequest { kind: input.kind(), payload })?;
        EmbeddingVector::new(resp.values)
    }
}
