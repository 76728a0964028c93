use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use divprompt_core::gateway::GatewayError;
use divprompt_core::verify::VerifyError;
use divprompt_core::SessionError;
use serde::Serialize;
use serde_json::Value;

use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    UpstreamUnavailable,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::UpstreamUnavailable => StatusCode::BAD_GATEWAY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), detail: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal() -> Self {
        Self::new(ErrorCode::Internal, "internal error")
    }
}

fn gateway_code(e: &GatewayError) -> ErrorCode {
    match e {
        GatewayError::BackendUnavailable(_)
        | GatewayError::Timeout(_)
        | GatewayError::MalformedResponse(_)
        | GatewayError::ParseFailure { .. } => ErrorCode::UpstreamUnavailable,
        GatewayError::InvalidRequest(_) => ErrorCode::BadRequest,
        GatewayError::UnknownLabelSpace(_) => ErrorCode::Internal,
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::InvalidCount { .. }
            | SessionError::EmptyContext
            | SessionError::InvalidEvent(_)
            | SessionError::Distribution(_)
            | SessionError::Sampler(_)
            | SessionError::Metrics(_) => ErrorCode::BadRequest,
            SessionError::DuplicateAttribute(_) => ErrorCode::Conflict,
            SessionError::UnknownAttribute(_)
            | SessionError::UnknownLabel(_)
            | SessionError::UnknownIteration(_)
            | SessionError::UnknownSession(_)
            | SessionError::UnknownImage(_) => ErrorCode::NotFound,
            SessionError::Gateway(g) => gateway_code(g),
            SessionError::Verify(v) => match v {
                VerifyError::NotYetMeasured(_) => ErrorCode::Conflict,
                VerifyError::UnknownAttribute(_) | VerifyError::UnknownLabel { .. } => ErrorCode::NotFound,
                VerifyError::Gateway(g) => gateway_code(g),
                _ => ErrorCode::Internal,
            },
            SessionError::CorruptStore(_) | SessionError::Io(_) => ErrorCode::Internal,
        };
        // Internal failures may carry file paths; keep them out of bodies.
        if code == ErrorCode::Internal {
            return ApiError::internal();
        }
        ApiError::new(code, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    schema_version: u32,
    error: &'a ApiError,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { schema_version: SCHEMA_VERSION, error: &self };
        (self.code.status(), Json(body)).into_response()
    }
}
