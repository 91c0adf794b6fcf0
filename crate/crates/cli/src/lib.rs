//! HTTP service for guided authoring: sessions hold a partial graph, clients
//! request completions of pinned nodes and accept a candidate's kept nodes.

pub mod sessions;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use matformer_core::{evaluate_graph, graphfile, validate, Library, MaterialChannel, MaterialGraph, NodeId, OperatorSchema};
use matformer_gen::{autocomplete, pinned_order, CompletionRequest, Models, SamplerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sessions::{CandidateRecord, Event, Session, SessionStore};

/// Environment variable naming the directory that holds session logs.
pub const DATA_DIR_ENV: &str = "MATFORMER_DATA_DIR";
pub const THUMBNAIL_SIZE: usize = 128;
pub const MAX_CANDIDATES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug)]
pub struct AppState {
    pub library: Arc<Library>,
    pub models: Option<Arc<Models>>,
    pub sessions: SessionStore,
}

impl AppState {
    pub fn new(library: Arc<Library>, models: Option<Arc<Models>>, data_dir: Option<PathBuf>) -> Result<Self, ServiceError> {
        if let Some(m) = &models {
            if m.codec.library.content_hash() != library.content_hash() {
                return Err(ServiceError::Invalid("models were trained on a different operator library".into()));
            }
        }
        let sessions = SessionStore::new(library.clone(), data_dir).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(AppState { library, models, sessions })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/library", get(library))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/complete", post(complete))
        .route("/v1/sessions/{id}/accept", post(accept))
        .with_state(state)
}

pub fn graph_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LibraryView {
    pub version: String,
    pub hash: String,
    pub operators: Vec<OperatorSchema>,
}

async fn library(State(state): State<Arc<AppState>>) -> Json<LibraryView> {
    Json(LibraryView {
        version: state.library.version().into(),
        hash: state.library.content_hash().into(),
        operators: state.library.schemas().cloned().collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphView {
    pub graph: String,
    pub hash: String,
    pub nodes: usize,
    pub edges: usize,
}

impl GraphView {
    fn of(g: &MaterialGraph) -> Self {
        let graph = graphfile::to_string(g);
        GraphView { hash: graph_hash(&graph), graph, nodes: g.node_count(), edges: g.edge_count() }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub graph: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub version: u64,
    pub graph: GraphView,
    /// Round whose candidates can still be accepted.
    pub pending_round: Option<u64>,
    pub history: Vec<Event>,
}

fn view(s: &Session) -> SessionView {
    SessionView {
        id: s.id.clone(),
        version: s.version,
        graph: GraphView::of(&s.graph),
        pending_round: s.pending.as_ref().map(|(r, _)| *r),
        history: s.events.clone(),
    }
}

fn lock(s: &Mutex<Session>) -> std::sync::MutexGuard<'_, Session> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

fn json_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, ServiceError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::Invalid(format!("request body: {e}")))
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let req: CreateSession = json_body(&body)?;
    let graph = match req.graph {
        Some(text) => {
            let g = graphfile::parse(&text, state.library.clone()).map_err(|e| ServiceError::Invalid(format!("graph: {e}")))?;
            validate(&g).map_err(|e| ServiceError::Invalid(format!("graph: {e}")))?;
            g
        }
        None => MaterialGraph::new(state.library.clone()),
    };
    let handle = state.sessions.create(&graph)?;
    let v = view(&lock(&handle));
    Ok((StatusCode::CREATED, Json(v)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    let handle = state.sessions.get(&id)?;
    let v = view(&lock(&handle));
    Ok(Json(v))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteRequest {
    #[serde(default)]
    pub pinned: Vec<NodeId>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    3
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for CompleteRequest {
    fn default() -> Self {
        CompleteRequest { pinned: Vec::new(), count: default_count(), temperature: default_temperature(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pinned,
    Generated,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub op: String,
    pub provenance: Provenance,
    /// Session node id this node was pinned from.
    pub source: Option<NodeId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub graph: GraphView,
    pub nodes: Vec<NodeInfo>,
    /// Base64 PNG per channel name.
    pub thumbnails: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub round: u64,
    pub candidates: Vec<Candidate>,
}

fn thumbnails(g: &MaterialGraph) -> Result<std::collections::BTreeMap<String, String>, ServiceError> {
    let out = evaluate_graph(g, THUMBNAIL_SIZE).map_err(|e| ServiceError::Internal(format!("render: {e}")))?;
    let b64 = base64::engine::general_purpose::STANDARD;
    Ok(MaterialChannel::ALL.iter().map(|&c| (c.name().to_string(), b64.encode(out.get(c).to_png_bytes()))).collect())
}

async fn complete(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<CompleteResponse>, ServiceError> {
    let req: CompleteRequest = json_body(&body)?;
    let models = state.models.clone().ok_or_else(|| ServiceError::Unavailable("no models loaded".into()))?;
    let handle = state.sessions.get(&id)?;
    let (graph, version) = {
        let s = lock(&handle);
        (s.graph.clone(), s.version)
    };
    if req.count == 0 || req.count > MAX_CANDIDATES {
        return Err(ServiceError::Invalid(format!("count must be between 1 and {MAX_CANDIDATES}")));
    }
    if !(req.temperature.is_finite() && req.temperature >= 0.0) {
        return Err(ServiceError::Invalid("temperature must be finite and non-negative".into()));
    }
    let mut pinned = req.pinned.clone();
    pinned.sort_unstable();
    pinned.dedup();
    if let Some(bad) = pinned.iter().find(|&&p| p >= graph.node_count()) {
        return Err(ServiceError::Invalid(format!("pinned node {bad} is not in the session graph")));
    }

    let work = {
        let pinned = pinned.clone();
        move || -> Result<Vec<(CandidateRecord, Candidate)>, ServiceError> {
            let order = pinned_order(&graph, &pinned, models.ordering);
            let request = CompletionRequest {
                graph: graph.clone(),
                pinned,
                count: req.count,
                sampler: SamplerConfig::with_temperature(req.temperature, req.seed),
            };
            let generated = autocomplete(&models, &request).map_err(|e| match e {
                matformer_gen::GenError::Request(m) => ServiceError::Invalid(m),
                other => ServiceError::Internal(other.to_string()),
            })?;
            generated
                .into_iter()
                .enumerate()
                .map(|(index, g)| {
                    validate(&g.graph).map_err(|e| ServiceError::Internal(format!("generated graph invalid: {e}")))?;
                    let sources: Vec<Option<NodeId>> =
                        (0..g.graph.node_count()).map(|j| (j < g.pinned).then(|| order[j])).collect();
                    let nodes = g
                        .graph
                        .nodes()
                        .iter()
                        .zip(&sources)
                        .map(|(n, src)| NodeInfo {
                            id: n.id,
                            op: g.graph.schema(n.id).name.clone(),
                            provenance: if src.is_some() { Provenance::Pinned } else { Provenance::Generated },
                            source: *src,
                        })
                        .collect();
                    let view = GraphView::of(&g.graph);
                    let record = CandidateRecord { graph: view.graph.clone(), sources };
                    Ok((record, Candidate { index, graph: view, nodes, thumbnails: thumbnails(&g.graph)? }))
                })
                .collect()
        }
    };
    let results = tokio::task::spawn_blocking(work).await.map_err(|e| ServiceError::Internal(e.to_string()))??;

    let mut s = lock(&handle);
    if s.version != version {
        return Err(ServiceError::Conflict("the session graph changed while completing".into()));
    }
    let round = s.rounds + 1;
    let (records, candidates): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let event = Event::Completed { round, pinned, temperature: req.temperature, seed: req.seed, candidates: records };
    state.sessions.append(&s.id, &event)?;
    s.apply(event)?;
    Ok(Json(CompleteResponse { round, candidates }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptRequest {
    pub candidate: usize,
    pub kept: Vec<NodeId>,
    /// Round the candidate came from; defaults to the latest.
    #[serde(default)]
    pub round: Option<u64>,
}

async fn accept(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<AcceptRequest>,
) -> Result<Json<SessionView>, ServiceError> {
    let handle = state.sessions.get(&id)?;
    let mut s = lock(&handle);
    let (round, candidates) =
        s.pending.as_ref().ok_or_else(|| ServiceError::Conflict("no open completion round to accept from".into()))?;
    let round = *round;
    if req.round.is_some_and(|r| r != round) {
        return Err(ServiceError::Conflict(format!("round {} is no longer open (latest is {round})", req.round.unwrap_or(0))));
    }
    let chosen = candidates
        .get(req.candidate)
        .ok_or_else(|| ServiceError::Invalid(format!("round {round} has no candidate {}", req.candidate)))?;
    if let Some(bad) = req.kept.iter().find(|&&k| k >= chosen.node_count()) {
        return Err(ServiceError::Invalid(format!("kept node {bad} is not in candidate {}", req.candidate)));
    }
    let (graph, _) = chosen.induced_subgraph(&req.kept);
    let mut kept = req.kept.clone();
    kept.sort_unstable();
    kept.dedup();
    let event = Event::Accepted { round, candidate: req.candidate, kept, graph: graphfile::to_string(&graph) };
    state.sessions.append(&s.id, &event)?;
    s.apply(event)?;
    Ok(Json(view(&s)))
}
