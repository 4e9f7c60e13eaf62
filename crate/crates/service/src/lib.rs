//! HTTP API for the mapping companion UI.
//!
//! Sessions hold a schema, sample documents and a draft mapping. Every write
//! accepts an optional `expectedVersion`; a stale value is rejected with 409
//! and leaves the draft untouched. Dictionaries follow the same scheme with
//! their own version counter. Parse previews and corpus scans run on a bounded
//! pool of blocking workers.

mod dictionaries;
mod error;
mod records;
mod sessions;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use kex::archive::Archive;
use kex::dictionary::Dictionary;
use kex::mapping::MappingSession;
use kex::pipeline::{PipelineDef, StepRegistry};

pub use error::ApiError;

/// Startup settings of the service.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Archive holding the records that samples, previews and coverage read.
    pub archive: Option<PathBuf>,
    /// Pipeline definition turning records into XML; passthrough when absent.
    pub pipeline: Option<PathBuf>,
    /// Directory of `<lang>.json` dictionaries; edits are written back.
    pub dictionaries: Option<PathBuf>,
    /// Built UI bundle served for every path the API does not claim.
    pub static_dir: Option<PathBuf>,
    /// Upper bound on concurrently running previews and corpus scans.
    pub preview_workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { archive: None, pipeline: None, dictionaries: None, static_dir: None, preview_workers: 4 }
    }
}

pub(crate) type Shared<T> = Arc<Mutex<T>>;

pub struct AppState {
    pub(crate) sessions: RwLock<HashMap<String, Shared<MappingSession>>>,
    next_session: AtomicU64,
    pub(crate) dictionaries: RwLock<BTreeMap<String, Shared<Dictionary>>>,
    pub(crate) dictionary_dir: Option<PathBuf>,
    pub(crate) archive: Option<Arc<Archive>>,
    pub(crate) pipeline: Arc<PipelineDef>,
    pub(crate) workers: Arc<Semaphore>,
    static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Result<Self, ApiError> {
        let archive = config.archive.as_ref().map(Archive::open).transpose()?.map(Arc::new);
        let pipeline = match &config.pipeline {
            Some(path) => PipelineDef::load(path, &StepRegistry::with_builtins())?,
            None => PipelineDef::passthrough(),
        };
        let mut dictionaries = BTreeMap::new();
        if let Some(dir) = &config.dictionaries {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::Internal(e.to_string()))?;
            let entries = std::fs::read_dir(dir).map_err(|e| ApiError::Internal(e.to_string()))?;
            for entry in entries {
                let path = entry.map_err(|e| ApiError::Internal(e.to_string()))?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let d = Dictionary::load(&path)?;
                    dictionaries.insert(d.language.clone(), Arc::new(Mutex::new(d)));
                }
            }
        }
        Ok(Self {
            sessions: RwLock::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            dictionaries: RwLock::new(dictionaries),
            dictionary_dir: config.dictionaries.clone(),
            archive,
            pipeline: Arc::new(pipeline),
            workers: Arc::new(Semaphore::new(config.preview_workers.max(1))),
            static_dir: config.static_dir.clone(),
        })
    }

    pub(crate) fn new_session_id(&self) -> String {
        format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed))
    }

    pub(crate) fn session(&self, id: &str) -> Result<Shared<MappingSession>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id}")))
    }

    pub(crate) fn archive(&self) -> Result<&Arc<Archive>, ApiError> {
        self.archive
            .as_ref()
            .ok_or_else(|| ApiError::BadRequest("the service was started without an archive".into()))
    }

    /// Run `f` on the blocking pool once a worker slot is free.
    pub(crate) async fn blocking<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        F: FnOnce() -> Result<T, ApiError> + Send + 'static,
        T: Send + 'static,
    {
        let _permit = self.workers.acquire().await.map_err(|e| ApiError::Internal(e.to_string()))?;
        tokio::task::spawn_blocking(f)
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/sessions", post(sessions::create))
        .route("/sessions/{id}", get(sessions::get).delete(sessions::remove))
        .route("/sessions/{id}/samples", post(sessions::add_samples))
        .route("/sessions/{id}/bind", post(sessions::bind).delete(sessions::unbind))
        .route("/sessions/{id}/conversion", post(sessions::set_conversion).delete(sessions::remove_conversion))
        .route("/sessions/{id}/edits", post(sessions::edit))
        .route("/sessions/{id}/mapping", get(sessions::mapping))
        .route("/sessions/{id}/log", get(sessions::log))
        .route("/sessions/{id}/parse-preview", post(sessions::parse_preview))
        .route("/dictionaries", get(dictionaries::list))
        .route("/dictionaries/{lang}", get(dictionaries::get).put(dictionaries::put).post(dictionaries::edit))
        .route("/dictionaries/{lang}/synsets/{sid}", get(dictionaries::synset).delete(dictionaries::remove_synset))
        .route("/records", get(records::list))
        .route("/records/{id}", get(records::get))
        .route("/records/{id}/documents", get(records::documents))
        .route("/validation/coverage", get(records::coverage))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Bind `addr` and serve until the process is stopped.
pub async fn serve(config: &ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::new(config).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
