//! Per-session directory store: an append-only event log, one JSON file per
//! iteration snapshot, raw image payloads, and a small state file that acts
//! as the commit point.
//!
//! ```text
//! {root}/{session_id}/log              one JSON record per line
//! {root}/{session_id}/snapshots/{k}    IterationSnapshot
//! {root}/{session_id}/images/{id}      payload bytes
//! {root}/{session_id}/state            committed log length + mutable state
//! ```
//!
//! Anything written after the last `state` update is ignored on load and
//! overwritten by the next persist, so a crash mid-write never surfaces a
//! partial session.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Event, IterationSnapshot, Result, Session, SessionError, SessionHeader};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LogRecord {
    schema_version: u32,
    seq: usize,
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    schema_version: u32,
    snapshot: IterationSnapshot,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    schema_version: u32,
    log_bytes: u64,
    session: SessionHeader,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn corrupt(what: impl std::fmt::Display) -> SessionError {
    SessionError::CorruptStore(what.to_string())
}

/// Ids become directory and file names, so only a conservative alphabet is
/// accepted.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(SessionError::UnknownSession(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    /// Ids of every session with a committed state file.
    pub fn session_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && entry.path().join("state").is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).map(|d| d.join("state").is_file()).unwrap_or(false)
    }

    fn committed(&self, dir: &Path) -> Result<Option<StateFile>> {
        let path = dir.join("state");
        if !path.is_file() {
            return Ok(None);
        }
        let bytes = fs::read(&path)?;
        let state: StateFile = serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("state: {e}")))?;
        if state.schema_version != SCHEMA_VERSION {
            return Err(corrupt(format!("unsupported schema version {}", state.schema_version)));
        }
        Ok(Some(state))
    }

    /// Writes whatever `session` has that the store does not, then commits.
    pub fn persist(&self, session: &Session) -> Result<()> {
        let dir = self.dir(session.id())?;
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::create_dir_all(dir.join("images"))?;
        let previous = self.committed(&dir)?;
        let (stored_events, stored_iterations, mut log_bytes) = match &previous {
            Some(s) => (s.session.event_count, s.session.iteration_count, s.log_bytes),
            None => (0, 0, 0),
        };
        if stored_events > session.history().len() || stored_iterations > session.iterations().len() {
            return Err(corrupt("stored session is ahead of the one being persisted"));
        }

        for snapshot in &session.iterations()[stored_iterations..] {
            for image in &snapshot.images {
                write_atomic(&dir.join(&image.payload_ref), &image.content)?;
            }
            let file = SnapshotFile { schema_version: SCHEMA_VERSION, snapshot: snapshot.as_ref().clone() };
            let bytes = serde_json::to_vec_pretty(&file).map_err(|e| corrupt(e))?;
            write_atomic(&dir.join("snapshots").join(snapshot.index.to_string()), &bytes)?;
        }

        let log = OpenOptions::new().create(true).write(true).truncate(false).open(dir.join("log"))?;
        log.set_len(log_bytes)?;
        let mut log = OpenOptions::new().append(true).open(dir.join("log"))?;
        let mut buf = Vec::new();
        for (seq, event) in session.history().iter().enumerate().skip(stored_events) {
            let record = LogRecord { schema_version: SCHEMA_VERSION, seq, event: event.clone() };
            serde_json::to_writer(&mut buf, &record).map_err(|e| corrupt(e))?;
            buf.push(b'\n');
        }
        log.write_all(&buf)?;
        log.sync_all()?;
        log_bytes += buf.len() as u64;

        let state = StateFile { schema_version: SCHEMA_VERSION, log_bytes, session: session.header() };
        let bytes = serde_json::to_vec_pretty(&state).map_err(|e| corrupt(e))?;
        write_atomic(&dir.join("state"), &bytes)?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Session> {
        let dir = self.dir(id)?;
        let state = self.committed(&dir)?.ok_or_else(|| SessionError::UnknownSession(id.to_string()))?;
        let header = state.session;
        if header.id != id {
            return Err(corrupt(format!("state belongs to session {:?}", header.id)));
        }

        let events = self.read_log(&dir, state.log_bytes, header.event_count)?;
        match events.first() {
            Some(Event::Created { session_id, .. }) if session_id == id => {}
            _ => return Err(corrupt("log does not start with the session's creation")),
        }

        let mut iterations = Vec::with_capacity(header.iteration_count);
        for k in 0..header.iteration_count {
            let bytes = fs::read(dir.join("snapshots").join(k.to_string())).map_err(|e| corrupt(format!("snapshot {k}: {e}")))?;
            let file: SnapshotFile = serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("snapshot {k}: {e}")))?;
            if file.schema_version != SCHEMA_VERSION || file.snapshot.index != k {
                return Err(corrupt(format!("snapshot {k} has wrong version or index")));
            }
            let mut snapshot = file.snapshot;
            for image in &mut snapshot.images {
                if !valid_id(&image.image_id) || image.payload_ref != format!("images/{}", image.image_id) {
                    return Err(corrupt(format!("bad payload reference {:?}", image.payload_ref)));
                }
                image.content = fs::read(dir.join(&image.payload_ref)).map_err(|e| corrupt(format!("image {}: {e}", image.image_id)))?;
            }
            iterations.push(Arc::new(snapshot));
        }
        if header.head >= iterations.len() {
            return Err(corrupt("head points past the last iteration"));
        }
        Ok(Session::from_parts(header, iterations, events))
    }

    fn read_log(&self, dir: &Path, log_bytes: u64, expected: usize) -> Result<Vec<Event>> {
        let mut bytes = Vec::new();
        File::open(dir.join("log"))
            .map_err(|e| corrupt(format!("log: {e}")))?
            .take(log_bytes)
            .read_to_end(&mut bytes)?;
        if (bytes.len() as u64) < log_bytes {
            return Err(corrupt("log is shorter than its committed length"));
        }
        let text = std::str::from_utf8(&bytes).map_err(|e| corrupt(format!("log: {e}")))?;
        let mut events = Vec::with_capacity(expected);
        for (i, line) in text.lines().enumerate() {
            let record: LogRecord = serde_json::from_str(line).map_err(|e| corrupt(format!("log line {}: {e}", i + 1)))?;
            if record.schema_version != SCHEMA_VERSION || record.seq != i {
                return Err(corrupt(format!("log line {} out of sequence", i + 1)));
            }
            events.push(record.event);
        }
        if events.len() != expected {
            return Err(corrupt(format!("log has {} events, state expects {expected}", events.len())));
        }
        Ok(events)
    }

    /// Raw event log of a stored session, for replay.
    pub fn events(&self, id: &str) -> Result<Vec<Event>> {
        let dir = self.dir(id)?;
        let state = self.committed(&dir)?.ok_or_else(|| SessionError::UnknownSession(id.to_string()))?;
        self.read_log(&dir, state.log_bytes, state.session.event_count)
    }
}
