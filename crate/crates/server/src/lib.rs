//! HTTP facade over the session engine.
//!
//! Engine calls are blocking (model adapters use a blocking client and
//! generation fans out on a thread pool), so every handler hops onto the
//! blocking pool. Writes to one session are serialized by the manager.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use clap::{Args, ValueEnum};
use divprompt_core::gateway::{BackendKind, Confusion, GatewayConfig};
use divprompt_core::session::{system_clock, Clock, DEFAULT_MAX_IMAGES, DEFAULT_SUGGESTED_LABELS};
use divprompt_core::{Engine, EngineConfig, Gateway, Label, Session, SessionError, SessionManager, Store};
use thiserror::Error;

pub mod dto;
mod error;

pub use error::{ApiError, ErrorCode};

use dto::*;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Http,
}

/// Service flags; every flag can also come from a `DIVPROMPT_*` variable.
#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "DIVPROMPT_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Session store directory; sessions live in memory only when omitted.
    #[arg(long, env = "DIVPROMPT_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long, env = "DIVPROMPT_BACKEND", value_enum, default_value = "mock")]
    pub backend: Backend,
    #[arg(long, env = "DIVPROMPT_IMAGE_ENDPOINT", default_value = "http://127.0.0.1:8001")]
    pub image_endpoint: String,
    #[arg(long, env = "DIVPROMPT_LLM_ENDPOINT", default_value = "http://127.0.0.1:8002")]
    pub llm_endpoint: String,
    #[arg(long, env = "DIVPROMPT_EMBED_ENDPOINT", default_value = "http://127.0.0.1:8003")]
    pub embed_endpoint: String,
    #[arg(long, env = "DIVPROMPT_TIMEOUT_MS", default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long, env = "DIVPROMPT_MAX_N", default_value_t = DEFAULT_MAX_IMAGES)]
    pub max_n: usize,
    /// Seed for sessions created without one.
    #[arg(long, env = "DIVPROMPT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Mock classifier accuracy.
    #[arg(long, env = "DIVPROMPT_MOCK_Q", default_value_t = 1.0)]
    pub mock_q: f64,
    /// Mock embedding noise.
    #[arg(long, env = "DIVPROMPT_MOCK_SIGMA", default_value_t = 0.0)]
    pub mock_sigma: f64,
    #[arg(long, env = "DIVPROMPT_CONCURRENCY", default_value_t = 4)]
    pub concurrency: usize,
}

impl Default for ServeArgs {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store: None,
            backend: Backend::Mock,
            image_endpoint: "http://127.0.0.1:8001".into(),
            llm_endpoint: "http://127.0.0.1:8002".into(),
            embed_endpoint: "http://127.0.0.1:8003".into(),
            timeout_ms: 30_000,
            max_n: DEFAULT_MAX_IMAGES,
            seed: 0,
            mock_q: 1.0,
            mock_sigma: 0.0,
            concurrency: 4,
        }
    }
}

impl ServeArgs {
    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            backend: match self.backend {
                Backend::Mock => BackendKind::Mock,
                Backend::Http => BackendKind::Http,
            },
            image_endpoint: self.image_endpoint.clone(),
            llm_endpoint: self.llm_endpoint.clone(),
            embed_endpoint: self.embed_endpoint.clone(),
            timeout_ms: self.timeout_ms,
            mock_sigma: self.mock_sigma,
            mock_q: self.mock_q,
            mock_confusion: Confusion::Uniform,
            concurrency: self.concurrency,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone)]
pub struct AppState {
    manager: Arc<SessionManager>,
    default_seed: u64,
    backend: Backend,
}

impl AppState {
    pub fn new(manager: SessionManager, default_seed: u64, backend: Backend) -> Self {
        Self { manager: Arc::new(manager), default_seed, backend }
    }

    /// Builds the engine, gateway and store described by `args`.
    pub fn from_args(args: &ServeArgs, clock: Clock) -> Result<Self, ServeError> {
        if args.max_n == 0 {
            return Err(ServeError::Config("--max-n must be positive".into()));
        }
        let gateway = Gateway::from_config(&args.gateway_config()).map_err(|e| ServeError::Config(e.to_string()))?;
        let config = EngineConfig {
            max_images: args.max_n,
            concurrency: args.concurrency,
            clock,
            ..EngineConfig::default()
        };
        let store = args.store.as_ref().map(Store::open).transpose()?;
        let manager = SessionManager::new(Engine::new(gateway, config), store)?;
        Ok(Self::new(manager, args.seed, args.backend))
    }

    pub fn manager(&self) -> &SessionManager {
        &self.manager
    }
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&SessionManager) -> Result<T, SessionError> + Send + 'static,
{
    let manager = state.manager.clone();
    tokio::task::spawn_blocking(move || f(&manager))
        .await
        .map_err(|_| ApiError::internal())?
        .map_err(ApiError::from)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn labels(texts: Vec<String>) -> Result<Vec<Label>, ApiError> {
    texts
        .into_iter()
        .map(|t| Label::new(t).map_err(|e| ApiError::bad_request(e.to_string())))
        .collect()
}

fn attribute_response(s: &Session, name: &str) -> Result<Json<AttributeBody>, ApiError> {
    AttributeBody::new(s, name)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown attribute {name:?}")))
}

async fn create_session(State(state): State<AppState>, payload: Result<Json<CreateSession>, JsonRejection>) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let seed = req.seed.unwrap_or(state.default_seed);
    let session = blocking(&state, move |m| m.create(&req.context, req.n, seed)).await?;
    Ok((StatusCode::CREATED, Json(SessionBody::new(&session))).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionBody>, ApiError> {
    let session = blocking(&state, move |m| m.get(&id)).await?;
    Ok(Json(SessionBody::new(&session)))
}

async fn add_attribute(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<AddAttribute>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let given = req.labels.map(labels).transpose()?;
    let name = req.name.trim().to_string();
    let (_, session) = blocking(&state, {
        let name = name.clone();
        move |m| m.update(&id, |e, s| e.add_attribute(s, &name, given))
    })
    .await?;
    Ok((StatusCode::CREATED, attribute_response(&session, &name)?).into_response())
}

async fn suggest_attributes(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SuggestionBody>, ApiError> {
    let attributes = blocking(&state, move |m| {
        let session = m.get(&id)?;
        m.engine().suggest_attributes(&session)
    })
    .await?;
    Ok(Json(SuggestionBody { schema_version: SCHEMA_VERSION, attributes }))
}

async fn set_distribution(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    payload: Result<Json<SetDistribution>, JsonRejection>,
) -> Result<Json<AttributeBody>, ApiError> {
    let req = body(payload)?;
    let (_, session) = blocking(&state, {
        let name = name.clone();
        move |m| m.update(&id, |e, s| e.set_distribution(s, &name, &req.weights))
    })
    .await?;
    attribute_response(&session, &name)
}

async fn add_label(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    payload: Result<Json<AddLabel>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let label = Label::new(&req.label).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (_, session) = blocking(&state, {
        let name = name.clone();
        move |m| m.update(&id, |e, s| e.add_label(s, &name, label, req.weight))
    })
    .await?;
    Ok((StatusCode::CREATED, attribute_response(&session, &name)?).into_response())
}

async fn remove_label(
    State(state): State<AppState>,
    Path((id, name, label)): Path<(String, String, String)>,
) -> Result<Json<AttributeBody>, ApiError> {
    let (_, session) = blocking(&state, {
        let name = name.clone();
        move |m| m.update(&id, |e, s| e.remove_label(s, &name, &label))
    })
    .await?;
    attribute_response(&session, &name)
}

async fn balance(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> Result<Json<AttributeBody>, ApiError> {
    let (_, session) = blocking(&state, {
        let name = name.clone();
        move |m| m.update(&id, |e, s| e.balance(s, &name))
    })
    .await?;
    attribute_response(&session, &name)
}

async fn generate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Option<Json<Generate>>,
) -> Result<Response, ApiError> {
    let seed = payload.and_then(|Json(g)| g.seed);
    let (k, session) = blocking(&state, move |m| m.update(&id, |e, s| e.regenerate(s, seed))).await?;
    let snapshot = session.iteration(k).ok_or_else(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(IterationBody::new(session.id(), snapshot))).into_response())
}

async fn branch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Branch>, JsonRejection>,
) -> Result<Json<SessionBody>, ApiError> {
    let req = body(payload)?;
    let (_, session) = blocking(&state, move |m| m.update(&id, |e, s| e.branch(s, req.iteration))).await?;
    Ok(Json(SessionBody::new(&session)))
}

async fn list_iterations(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<IterationList>, ApiError> {
    let session = blocking(&state, move |m| m.get(&id)).await?;
    Ok(Json(IterationList::new(&session)))
}

async fn get_iteration(State(state): State<AppState>, Path((id, k)): Path<(String, String)>) -> Result<Json<IterationBody>, ApiError> {
    let k: usize = k.parse().map_err(|_| ApiError::bad_request(format!("iteration index {k:?} is not a number")))?;
    let session = blocking(&state, move |m| m.get(&id)).await?;
    let snapshot = session.iteration(k).ok_or_else(|| ApiError::from(SessionError::UnknownIteration(k)))?;
    Ok(Json(IterationBody::new(session.id(), snapshot)))
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<MetricsBody>, ApiError> {
    let (session, report) = blocking(&state, move |m| {
        let session = m.get(&id)?;
        let report = m.engine().report(&session)?;
        Ok((session, report))
    })
    .await?;
    Ok(Json(MetricsBody::new(&session, report)))
}

async fn image(State(state): State<AppState>, Path(image_id): Path<String>) -> Result<Json<ImageBody>, ApiError> {
    let (record, attributes) = blocking(&state, move |m| m.image(&image_id)).await?;
    Ok(Json(ImageBody::new(&record, &attributes)))
}

async fn images_with_label(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    query: Result<Query<LabelQuery>, QueryRejection>,
) -> Result<Json<HighlightBody>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let (label, image_ids) = blocking(&state, {
        let name = name.clone();
        move |m| {
            let session = m.get(&id)?;
            let ids = session.images_with_label(&name, q.label)?;
            let label = session.attribute(&name).and_then(|a| a.labels().get(q.label)).map(|l| l.as_str().to_string());
            Ok((label.unwrap_or_default(), ids))
        }
    })
    .await?;
    Ok(Json(HighlightBody { schema_version: SCHEMA_VERSION, attribute: name, label_index: q.label, label, image_ids }))
}

async fn capabilities(State(state): State<AppState>) -> Json<CapabilitiesBody> {
    Json(CapabilitiesBody {
        schema_version: SCHEMA_VERSION,
        max_n: state.manager.engine().config().max_images,
        backend: format!("{:?}", state.backend).to_lowercase(),
        suggested_labels: DEFAULT_SUGGESTED_LABELS,
    })
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/capabilities", get(capabilities))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/attributes", post(add_attribute))
        .route("/sessions/{id}/attributes/suggest", post(suggest_attributes))
        .route("/sessions/{id}/attributes/{name}/distribution", put(set_distribution))
        .route("/sessions/{id}/attributes/{name}/labels", post(add_label))
        .route("/sessions/{id}/attributes/{name}/labels/{label}", delete(remove_label))
        .route("/sessions/{id}/attributes/{name}/balance", post(balance))
        .route("/sessions/{id}/attributes/{name}/images", get(images_with_label))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/branch", post(branch))
        .route("/sessions/{id}/iterations", get(list_iterations))
        .route("/sessions/{id}/iterations/{k}", get(get_iteration))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/images/{image_id}", get(image))
        .fallback(fallback)
        .with_state(state)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

/// Binds and serves until Ctrl-C. In-flight requests run to completion;
/// each engine operation is atomic either way.
pub async fn serve(args: &ServeArgs) -> Result<(), ServeError> {
    let state = AppState::from_args(args, system_clock())?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .map_err(|source| ServeError::BindFailure { addr: args.listen, source })?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown_signal()).await?;
    Ok(())
}
