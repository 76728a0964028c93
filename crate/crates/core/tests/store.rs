use std::fs;

use divprompt_core::session::{fixed_clock, SessionManager, Store};
use divprompt_core::{Engine, EngineConfig, Gateway, Label, Session, SessionError};

fn engine() -> Engine {
    Engine::new(Gateway::perfect_mock(), EngineConfig { clock: fixed_clock("2024-05-01T12:00:00Z"), ..EngineConfig::default() })
}

fn three_iterations(e: &Engine) -> Session {
    let mut s = e.create_session("s0001", "a picture of a car", 10, 42).unwrap();
    let colors = ["red", "blue", "green"].iter().map(|t| Label::new(t).unwrap()).collect();
    e.add_attribute(&mut s, "color", Some(colors)).unwrap();
    e.add_attribute(&mut s, "weather", None).unwrap();
    e.regenerate(&mut s, None).unwrap();
    e.set_distribution(&mut s, "color", &[2.0, 1.0, 1.0]).unwrap();
    e.regenerate(&mut s, None).unwrap();
    s
}

#[test]
fn persist_then_load_is_deep_equal() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let e = engine();
    let s = three_iterations(&e);
    store.persist(&s).unwrap();
    let loaded = store.load("s0001").unwrap();
    assert_eq!(loaded, s);
    assert_eq!(loaded.iterations().len(), 3);
    for (a, b) in loaded.head_snapshot().images.iter().zip(&s.head_snapshot().images) {
        assert_eq!(a.content, b.content);
        let bits = |r: &divprompt_core::session::ImageRecord| r.embedding.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn incremental_persist_appends() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let e = engine();
    let mut s = e.create_session("s0001", "a bird", 4, 1).unwrap();
    store.persist(&s).unwrap();
    let log_len = fs::metadata(dir.path().join("s0001/log")).unwrap().len();
    e.regenerate(&mut s, None).unwrap();
    store.persist(&s).unwrap();
    assert!(fs::metadata(dir.path().join("s0001/log")).unwrap().len() > log_len);
    assert_eq!(store.load("s0001").unwrap(), s);
    assert_eq!(store.events("s0001").unwrap(), s.history());
    assert_eq!(store.session_ids().unwrap(), ["s0001"]);
}

#[test]
fn uncommitted_log_tail_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let e = engine();
    let mut s = e.create_session("s0001", "a bird", 4, 1).unwrap();
    store.persist(&s).unwrap();
    // Simulate a crash after the log append but before the state commit.
    let log = dir.path().join("s0001/log");
    let mut bytes = fs::read(&log).unwrap();
    bytes.extend_from_slice(b"{\"schema_version\":1,\"seq\":1,\"event\":{\"op\":\"regenerated\",\"seed\":5}}\n");
    fs::write(&log, bytes).unwrap();
    assert_eq!(store.load("s0001").unwrap(), s);

    e.regenerate(&mut s, Some(9)).unwrap();
    store.persist(&s).unwrap();
    assert_eq!(store.load("s0001").unwrap(), s);
}

#[test]
fn missing_session_is_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    assert!(matches!(store.load("s0404"), Err(SessionError::UnknownSession(_))));
    assert!(matches!(store.load("../etc"), Err(SessionError::UnknownSession(_))));
}

#[test]
fn truncated_files_are_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let e = engine();
    store.persist(&three_iterations(&e)).unwrap();
    let root = dir.path().join("s0001");

    for victim in ["state", "log", "snapshots/1"] {
        let path = root.join(victim);
        let original = fs::read(&path).unwrap();
        fs::write(&path, &original[..original.len() / 2]).unwrap();
        let err = store.load("s0001").unwrap_err();
        assert!(matches!(err, SessionError::CorruptStore(_)), "{victim}: {err}");
        fs::write(&path, original).unwrap();
    }

    let image = fs::read_dir(root.join("images")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(image).unwrap();
    assert!(matches!(store.load("s0001"), Err(SessionError::CorruptStore(_))));
}

#[test]
fn manager_persists_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let manager = SessionManager::new(engine(), Some(Store::open(dir.path()).unwrap())).unwrap();
    let s = manager.create("a picture of a car", 6, 3).unwrap();
    assert_eq!(s.id(), "s0001");
    manager
        .update(s.id(), |e, s| e.add_attribute(s, "color", Some(vec![Label::new("red").unwrap(), Label::new("blue").unwrap()])))
        .unwrap();
    let err = manager.update(s.id(), |e, s| e.add_attribute(s, "color", None)).unwrap_err();
    assert!(matches!(err, SessionError::DuplicateAttribute(_)));
    let (k, after) = manager.update(s.id(), |e, s| e.regenerate(s, None)).unwrap();
    assert_eq!(k, 1);
    let image_id = after.head_snapshot().images[0].image_id.clone();

    let reopened = SessionManager::new(engine(), Some(Store::open(dir.path()).unwrap())).unwrap();
    assert_eq!(reopened.get("s0001").unwrap(), after);
    assert_eq!(reopened.image(&image_id).unwrap().0.content, after.head_snapshot().images[0].content);
    assert!(matches!(reopened.image("nope"), Err(SessionError::UnknownImage(_))));
    assert_eq!(reopened.create("a bird", 2, 1).unwrap().id(), "s0002");
}

#[test]
fn replaying_the_stored_log_reproduces_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let e = engine();
    let mut s = three_iterations(&e);
    e.branch(&mut s, 1).unwrap();
    e.regenerate(&mut s, None).unwrap();
    e.regenerate(&mut s, None).unwrap();
    store.persist(&s).unwrap();

    let replayed = engine().replay(&store.events("s0001").unwrap()).unwrap();
    for (a, b) in replayed.iterations().iter().zip(s.iterations()) {
        assert_eq!(serde_json::to_vec(a.as_ref()).unwrap(), serde_json::to_vec(b.as_ref()).unwrap());
    }
}
