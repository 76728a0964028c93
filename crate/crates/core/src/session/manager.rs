//! Registry of live sessions with one writer per session.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::store::valid_id;
use super::{Engine, ImageRecord, Result, Session, SessionError, Store};
use crate::distribution::AttributeSpec;

type Slot = Arc<Mutex<Session>>;

pub struct SessionManager {
    engine: Engine,
    store: Option<Store>,
    sessions: Mutex<HashMap<String, Slot>>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for SessionManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionManager").field("store", &self.store).finish_non_exhaustive()
    }
}

fn parse_sequence(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

impl SessionManager {
    pub fn new(engine: Engine, store: Option<Store>) -> Result<Self> {
        let mut next = 1;
        if let Some(store) = &store {
            for id in store.session_ids()? {
                if let Some(n) = parse_sequence(&id) {
                    next = next.max(n + 1);
                }
            }
        }
        Ok(Self {
            engine,
            store,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(next),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn store(&self) -> Option<&Store> {
        self.store.as_ref()
    }

    fn lock_map(&self) -> std::sync::MutexGuard<'_, HashMap<String, Slot>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn slot(&self, id: &str) -> Result<Slot> {
        if !valid_id(id) {
            return Err(SessionError::UnknownSession(id.to_string()));
        }
        if let Some(slot) = self.lock_map().get(id) {
            return Ok(slot.clone());
        }
        let store = self.store.as_ref().ok_or_else(|| SessionError::UnknownSession(id.to_string()))?;
        let session = store.load(id)?;
        let mut map = self.lock_map();
        Ok(map.entry(id.to_string()).or_insert_with(|| Arc::new(Mutex::new(session))).clone())
    }

    pub fn create(&self, context: &str, image_count: usize, seed: u64) -> Result<Session> {
        let id = format!("s{:04}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = self.engine.create_session(id.clone(), context, image_count, seed)?;
        if let Some(store) = &self.store {
            store.persist(&session)?;
        }
        self.lock_map().insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    /// A copy of the session's current state.
    pub fn get(&self, id: &str) -> Result<Session> {
        let slot = self.slot(id)?;
        let session = slot.lock().unwrap_or_else(|p| p.into_inner());
        Ok(session.clone())
    }

    /// Runs `f` on a working copy; the copy replaces the session only if
    /// `f` and persistence both succeed.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&Engine, &mut Session) -> Result<T>) -> Result<(T, Session)> {
        let slot = self.slot(id)?;
        let mut session = slot.lock().unwrap_or_else(|p| p.into_inner());
        let mut working = session.clone();
        let out = f(&self.engine, &mut working)?;
        if let Some(store) = &self.store {
            store.persist(&working)?;
        }
        *session = working;
        Ok((out, session.clone()))
    }

    /// Looks an image up by id; ids carry their session id as a prefix.
    pub fn image(&self, image_id: &str) -> Result<(ImageRecord, Vec<AttributeSpec>)> {
        let unknown = || SessionError::UnknownImage(image_id.to_string());
        let mut parts = image_id.rsplitn(3, '-');
        let (_, _, session_id) = (parts.next(), parts.next().ok_or_else(unknown)?, parts.next().ok_or_else(unknown)?);
        let session = self.get(session_id).map_err(|e| match e {
            SessionError::UnknownSession(_) => unknown(),
            other => other,
        })?;
        session
            .find_image(image_id)
            .map(|(snapshot, image)| (image.clone(), snapshot.attributes.clone()))
            .ok_or_else(unknown)
    }
}
