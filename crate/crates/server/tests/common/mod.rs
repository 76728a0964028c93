#![allow(dead_code)]

use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use divprompt_core::session::fixed_clock;
use divprompt_server::{router, AppState, ServeArgs};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const CLOCK: &str = "2024-06-01T00:00:00Z";

pub fn app(args: &ServeArgs) -> Router {
    router(AppState::from_args(args, fixed_clock(CLOCK)).unwrap())
}

pub fn mock_app() -> Router {
    app(&ServeArgs { seed: 1, ..ServeArgs::default() })
}

pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

pub async fn call(app: &Router, method: &str, path: &str, body: Option<&str>) -> Reply {
    let mut req = Request::builder().method(Method::from_bytes(method.as_bytes()).unwrap()).uri(path);
    let body = match body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            Body::from(b.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status().as_u16();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, body }
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}
