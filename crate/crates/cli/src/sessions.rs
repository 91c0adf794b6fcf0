//! Authoring sessions persisted as append-only JSON-lines event logs.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use matformer_core::{graphfile, Library, MaterialGraph, NodeId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub graph: String,
    /// For each candidate node, the session node it was pinned from.
    pub sources: Vec<Option<NodeId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        graph: String,
    },
    Completed {
        round: u64,
        pinned: Vec<NodeId>,
        temperature: f64,
        seed: u64,
        candidates: Vec<CandidateRecord>,
    },
    Accepted {
        round: u64,
        candidate: usize,
        kept: Vec<NodeId>,
        graph: String,
    },
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub graph: MaterialGraph,
    /// Bumped whenever the partial graph changes.
    pub version: u64,
    pub rounds: u64,
    /// Candidates of the latest round, until one is accepted.
    pub pending: Option<(u64, Vec<MaterialGraph>)>,
    pub events: Vec<Event>,
}

impl Session {
    fn parse(&self, text: &str) -> Result<MaterialGraph, ServiceError> {
        graphfile::parse(text, self.graph.library().clone()).map_err(|e| ServiceError::Internal(format!("stored graph: {e}")))
    }

    /// Applies an event already known to be valid.
    pub fn apply(&mut self, event: Event) -> Result<(), ServiceError> {
        match &event {
            Event::Created { graph } => {
                self.graph = self.parse(graph)?;
                self.version += 1;
            }
            Event::Completed { round, candidates, .. } => {
                let graphs = candidates.iter().map(|c| self.parse(&c.graph)).collect::<Result<Vec<_>, _>>()?;
                self.rounds = *round;
                self.pending = Some((*round, graphs));
            }
            Event::Accepted { graph, .. } => {
                self.graph = self.parse(graph)?;
                self.pending = None;
                self.version += 1;
            }
        }
        self.events.push(event);
        Ok(())
    }
}

#[derive(Debug)]
pub struct SessionStore {
    library: Arc<Library>,
    dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric())
}

impl SessionStore {
    /// Sessions live in memory only when `dir` is `None`.
    pub fn new(library: Arc<Library>, dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(SessionStore { library, dir, sessions: Mutex::new(HashMap::new()), counter: AtomicU64::new(0) })
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn new_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let digest = Sha256::digest(format!("{n}:{t}:{}", std::process::id()));
        hex::encode(&digest[..8])
    }

    fn empty(&self, id: String) -> Session {
        Session { id, graph: MaterialGraph::new(self.library.clone()), version: 0, rounds: 0, pending: None, events: Vec::new() }
    }

    pub fn create(&self, graph: &MaterialGraph) -> Result<Arc<Mutex<Session>>, ServiceError> {
        let mut session = self.empty(self.new_id());
        let event = Event::Created { graph: graphfile::to_string(graph) };
        self.append(&session.id, &event)?;
        session.apply(event)?;
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.lock().expect("session map poisoned").insert(id, handle.clone());
        Ok(handle)
    }

    /// Looks a session up in memory, then replays its log from disk.
    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::NotFound(format!("session `{id}`")));
        }
        let mut map = self.sessions.lock().expect("session map poisoned");
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let path = self.log_path(id).filter(|p| p.exists()).ok_or_else(|| ServiceError::NotFound(format!("session `{id}`")))?;
        let mut session = self.empty(id.to_string());
        let file = std::fs::File::open(&path).map_err(|e| ServiceError::Internal(e.to_string()))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| ServiceError::Internal(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
            session.apply(event)?;
        }
        let handle = Arc::new(Mutex::new(session));
        map.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Writes `event` to the session log; callers apply it only after this succeeds.
    pub fn append(&self, id: &str, event: &Event) -> Result<(), ServiceError> {
        let Some(path) = self.log_path(id) else { return Ok(()) };
        let mut line = serde_json::to_string(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push('\n');
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        f.write_all(line.as_bytes()).and_then(|_| f.sync_data()).map_err(|e| ServiceError::Internal(e.to_string()))
    }

    /// Forgets in-memory state so the next lookup replays from disk.
    pub fn evict_all(&self) {
        self.sessions.lock().expect("session map poisoned").clear();
    }
}
