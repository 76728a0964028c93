mod common;

use std::fs;

use divprompt_server::{Backend, ServeArgs};
use serde_json::Value;

use common::{app, call, mock_app};

#[tokio::test(flavor = "multi_thread")]
async fn balanced_five_labels_measure_two_each() {
    let app = mock_app();
    assert_eq!(call(&app, "POST", "/sessions", Some(r#"{"context":"a picture of a car","n":10,"seed":4}"#)).await.status, 201);
    let add = call(&app, "POST", "/sessions/s0001/attributes", Some(r#"{"name":"color","labels":["red","blue","green","yellow","purple"]}"#)).await;
    assert_eq!(add.status, 201);
    assert_eq!(call(&app, "POST", "/sessions/s0001/attributes/color/balance", None).await.status, 200);
    let it = call(&app, "POST", "/sessions/s0001/generate", Some("{}")).await.json();
    assert_eq!(it["attributes"][0]["measured"], serde_json::json!([2, 2, 2, 2, 2]));

    call(&app, "POST", "/sessions/s0001/generate", None).await;
    let m = call(&app, "GET", "/sessions/s0001/metrics", None).await.json();
    assert!(m["span"].as_f64().unwrap() >= 0.0);
    let a = m["alignment"]["color"].as_f64().unwrap();
    assert!(a > 0.0 && a <= 1.0);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_edits_serialize() {
    let app = mock_app();
    call(&app, "POST", "/sessions", Some(r#"{"context":"a picture of a car","n":6}"#)).await;
    call(&app, "POST", "/sessions/s0001/attributes", Some(r#"{"name":"color","labels":["red","blue"]}"#)).await;
    let mut tasks = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let body = format!(r#"{{"label":"shade{i}","weight":0.05}}"#);
            call(&app, "POST", "/sessions/s0001/attributes/color/labels", Some(&body)).await.status
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), 201);
    }
    let s = call(&app, "GET", "/sessions/s0001", None).await.json();
    let attr = &s["attributes"][0];
    assert_eq!(attr["labels"].as_array().unwrap().len(), 18);
    let total: f64 = attr["target"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(s["label_modifications"]["color"], 16);
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_backend_maps_to_502() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("http://127.0.0.1:{port}");
    let app = app(&ServeArgs {
        backend: Backend::Http,
        image_endpoint: endpoint.clone(),
        llm_endpoint: endpoint.clone(),
        embed_endpoint: endpoint,
        timeout_ms: 2_000,
        ..ServeArgs::default()
    });
    let reply = call(&app, "POST", "/sessions", Some(r#"{"context":"a car","n":2}"#)).await;
    assert_eq!(reply.status, 502);
    assert_eq!(reply.json()["error"]["code"], "upstream_unavailable");
    assert_eq!(call(&app, "GET", "/sessions/s0001", None).await.status, 404);
    assert_eq!(call(&app, "GET", "/capabilities", None).await.json()["backend"], "http");
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let args = ServeArgs { store: Some(dir.path().to_path_buf()), ..ServeArgs::default() };
    let first = app(&args);
    call(&first, "POST", "/sessions", Some(r#"{"context":"a bird","n":4,"seed":2}"#)).await;
    call(&first, "POST", "/sessions/s0001/attributes", Some(r#"{"name":"color","labels":["red","blue"]}"#)).await;
    call(&first, "POST", "/sessions/s0001/generate", None).await;
    let before = call(&first, "GET", "/sessions/s0001/iterations/1", None).await.body;

    let second = app(&args);
    assert_eq!(call(&second, "GET", "/sessions/s0001/iterations/1", None).await.body, before);
    let created = call(&second, "POST", "/sessions", Some(r#"{"context":"a car","n":2}"#)).await.json();
    assert_eq!(created["session_id"], "s0002");
}

#[tokio::test(flavor = "multi_thread")]
async fn corrupt_store_does_not_leak_paths() {
    let dir = tempfile::tempdir().unwrap();
    let args = ServeArgs { store: Some(dir.path().to_path_buf()), ..ServeArgs::default() };
    call(&app(&args), "POST", "/sessions", Some(r#"{"context":"a bird","n":2}"#)).await;
    fs::write(dir.path().join("s0001/state"), b"{\"schema_").unwrap();

    let reply = call(&app(&args), "GET", "/sessions/s0001", None).await;
    assert_eq!(reply.status, 500);
    let text = String::from_utf8(reply.body).unwrap();
    assert!(!text.contains(dir.path().to_str().unwrap()));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["error"]["code"], "internal");
}

#[tokio::test(flavor = "multi_thread")]
async fn path_traversal_ids_are_not_found() {
    let app = mock_app();
    assert_eq!(call(&app, "GET", "/sessions/..%2F..%2Fetc", None).await.status, 404);
    assert_eq!(call(&app, "GET", "/images/..", None).await.status, 404);
}

#[test]
fn serves_over_a_real_socket() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (addr, handle) = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = tokio::spawn(async move { axum::serve(listener, mock_app()).await.unwrap() });
        (addr, handle)
    });
    let out = std::process::Command::new("curl")
        .args(["-s", "-X", "POST", "-H", "content-type: application/json", "-d", r#"{"context":"a car","n":3}"#])
        .arg(format!("http://{addr}/sessions"))
        .output();
    handle.abort();
    // curl is optional in minimal environments.
    if let Ok(out) = out {
        if out.status.success() {
            let v: Value = serde_json::from_slice(&out.stdout).unwrap();
            assert_eq!(v["session_id"], "s0001");
        }
    }
}
