//! Axum service for the edge and cloud tiers.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use fieldsync_core::model::{
    format_timestamp, parse_schema, validate_record, Record, RecordDraft, Schema,
};
use fieldsync_core::sync::{Delta, SyncCursor, SyncError, Tier};
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::oneshot;

use crate::blobs::{BlobError, BlobStore};
use crate::client::{ErrorBody, FieldError, Health};
use crate::config::{ConfigError, ServiceConfig};
use crate::storage::{DurableStore, StoreError};
use crate::upstream::{self, Upstream, UpstreamError};

pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug)]
pub struct LoadedSchema {
    pub schema: Schema,
    pub bytes: Vec<u8>,
}

/// Everything a running service shares between handlers and the upstream task.
#[derive(Debug)]
pub struct AppState {
    pub tier: Tier,
    pub store_id: String,
    pub data_dir: PathBuf,
    pub(crate) store: Mutex<DurableStore>,
    pub blobs: BlobStore,
    pub schema: Option<LoadedSchema>,
    pub(crate) upstream: Option<Upstream>,
}

impl AppState {
    /// Checks the config, loads the schema and replays the log.
    pub fn open(config: &ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        config.check()?;
        let schema = match &config.schema {
            None => None,
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                let schema = parse_schema(&bytes)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
                Some(LoadedSchema { schema, bytes })
            }
        };
        let store_id = config.store_id();
        let store = DurableStore::open(&config.data_dir, config.tier, &store_id)?;
        let recovery = store.recovery();
        if recovery.truncated_bytes > 0 {
            tracing::warn!(
                bytes = recovery.truncated_bytes,
                "dropped torn tail of record log"
            );
        }
        let blobs = BlobStore::open(config.data_dir.join(BLOB_DIR))?;
        let upstream = match &config.upstream {
            Some(url) => Some(Upstream::open(url, &config.data_dir, &blobs)?),
            None => None,
        };
        Ok(Arc::new(AppState {
            tier: config.tier,
            store_id,
            data_dir: config.data_dir.clone(),
            store: Mutex::new(store),
            blobs,
            schema,
            upstream,
        }))
    }

    pub fn health(&self) -> Health {
        let (records, max_seq) = {
            let s = lock(&self.store);
            (s.store().len(), s.store().max_seq())
        };
        let (last_upstream_sync, last_upstream_error) = match &self.upstream {
            Some(u) => {
                let st = u.status();
                (st.last_sync.as_ref().map(format_timestamp), st.last_error)
            }
            None => (None, None),
        };
        Health {
            tier: self.tier,
            store_id: self.store_id.clone(),
            records,
            max_seq,
            last_upstream_sync,
            last_upstream_error,
        }
    }

    /// Every record in seq order.
    pub fn dump(&self) -> Vec<Record> {
        lock(&self.store).store().iter().cloned().collect()
    }

    /// Parses and validates a POST /records body.
    pub fn decode_batch(&self, body: &[u8]) -> Result<Vec<Record>, Response> {
        #[derive(Deserialize)]
        struct Incoming {
            records: Vec<serde_json::Value>,
        }
        let incoming: Incoming = serde_json::from_slice(body)
            .map_err(|e| error(StatusCode::BAD_REQUEST, "MalformedBody", e.to_string()))?;
        let mut records = Vec::with_capacity(incoming.records.len());
        let mut errors = Vec::new();
        for (i, value) in incoming.records.into_iter().enumerate() {
            let bad = |e: serde_json::Error| {
                error(
                    StatusCode::BAD_REQUEST,
                    "MalformedBody",
                    format!("records[{i}]: {e}"),
                )
            };
            match &self.schema {
                None => records.push(serde_json::from_value::<Record>(value).map_err(bad)?),
                Some(s) => {
                    let draft: RecordDraft = serde_json::from_value(value).map_err(bad)?;
                    let id = draft.id.clone();
                    match validate_record(&s.schema, draft) {
                        Ok(r) => records.push(r),
                        Err(e) => errors.push(FieldError {
                            id,
                            field: e.field().map(str::to_string),
                            message: e.to_string(),
                        }),
                    }
                }
            }
        }
        if !errors.is_empty() {
            let message = errors
                .iter()
                .map(|e| format!("{}: {}", e.id, e.message))
                .collect::<Vec<_>>()
                .join("; ");
            let body = ErrorBody {
                error: "ValidationError".into(),
                message,
                id: None,
                errors,
            };
            return Err((StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response());
        }
        Ok(records)
    }

    /// Runs one edge-to-cloud session now.
    pub fn sync_upstream(&self) -> Result<fieldsync_core::sync::SyncReport, UpstreamError> {
        upstream::run_once(self)
    }
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = ErrorBody {
        error: kind.into(),
        message: message.into(),
        id: None,
        errors: Vec::new(),
    };
    (status, Json(body)).into_response()
}

fn store_error(e: StoreError) -> Response {
    match e {
        StoreError::Sync(SyncError::PayloadConflict(id)) => {
            let body = ErrorBody {
                error: "PayloadConflict".into(),
                message: format!("{id} already stored with a different payload"),
                id: Some(id),
                errors: Vec::new(),
            };
            (StatusCode::CONFLICT, Json(body)).into_response()
        }
        other => error(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", other.to_string()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/schema", get(get_schema))
        .route("/records", get(get_records).post(post_records))
        .route("/blobs/{hash}", get(get_blob).put(put_blob))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn get_schema(State(state): State<Arc<AppState>>) -> Response {
    match &state.schema {
        Some(s) => ([(header::CONTENT_TYPE, "application/json")], s.bytes.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, "NoSchema", "no schema configured"),
    }
}

async fn get_records(
    State(state): State<Arc<AppState>>,
    Query(query): Query<BTreeMap<String, String>>,
) -> Response {
    let after = match query.get("after").map(|a| a.parse::<u64>()) {
        None => 0,
        Some(Ok(a)) => a,
        Some(Err(_)) => {
            return error(
                StatusCode::BAD_REQUEST,
                "BadCursor",
                "after must be a non-negative integer",
            )
        }
    };
    let (records, cursor) = lock(&state.store).store().delta_since(&SyncCursor {
        peer_store_id: String::new(),
        last_seq_seen: after,
    });
    Json(Delta {
        records,
        cursor: cursor.last_seq_seen,
    })
    .into_response()
}

async fn post_records(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let batch = match state.decode_batch(&body) {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    let result = tokio::task::spawn_blocking(move || lock(&state.store).push(&batch)).await;
    match result {
        Ok(Ok(ack)) => Json(ack).into_response(),
        Ok(Err(e)) => store_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()),
    }
}

async fn put_blob(
    State(state): State<Arc<AppState>>,
    Path(hash): Path<String>,
    body: Bytes,
) -> Response {
    let st = state.clone();
    let h = hash.clone();
    let result = tokio::task::spawn_blocking(move || st.blobs.put(&h, &body)).await;
    match result {
        Ok(Ok(created)) => {
            if let Some(u) = &state.upstream {
                u.queue_blob(&hash);
            }
            if created {
                StatusCode::CREATED.into_response()
            } else {
                StatusCode::OK.into_response()
            }
        }
        Ok(Err(e @ (BlobError::BadHash(_) | BlobError::HashMismatch { .. }))) => {
            error(StatusCode::BAD_REQUEST, "HashMismatch", e.to_string())
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()),
    }
}

async fn get_blob(State(state): State<Arc<AppState>>, Path(hash): Path<String>) -> Response {
    match state.blobs.get(&hash) {
        Ok(Some(bytes)) => (
            [(header::CONTENT_TYPE, "application/octet-stream")],
            bytes,
        )
            .into_response(),
        Ok(None) | Err(BlobError::BadHash(_)) => {
            error(StatusCode::NOT_FOUND, "UnknownBlob", format!("no blob {hash}"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string()),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    Json(state.health()).into_response()
}

async fn upstream_loop(state: Arc<AppState>, every: Duration) {
    loop {
        tokio::time::sleep(every).await;
        let st = state.clone();
        match tokio::task::spawn_blocking(move || st.sync_upstream()).await {
            Ok(Ok(report)) if !report.is_quiet() => tracing::info!(%report, "upstream sync"),
            Ok(Ok(_)) => tracing::debug!("upstream sync: nothing to do"),
            Ok(Err(e)) => tracing::warn!(error = %e, "upstream sync failed; retrying next interval"),
            Err(e) => tracing::error!(error = %e, "upstream task panicked"),
        }
    }
}

/// A service running on its own thread and runtime.
#[derive(Debug)]
pub struct RunningService {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl RunningService {
    /// Binds and starts serving; an edge also starts its upstream loop.
    pub fn start(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let state = AppState::open(config)?;
        let listener =
            std::net::TcpListener::bind(&config.bind).map_err(|source| ServiceError::Bind {
                addr: config.bind.clone(),
                source,
            })?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(state.clone());
        let loop_state = (state.upstream.is_some()).then(|| (state.clone(), config.interval()));
        let thread = std::thread::Builder::new()
            .name(format!("fieldsync-{}", state.store_id))
            .spawn(move || {
                runtime.block_on(async move {
                    if let Some((st, every)) = loop_state {
                        tokio::spawn(upstream_loop(st, every));
                    }
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            tracing::error!(error = %e, "listener setup failed");
                            return;
                        }
                    };
                    let shutdown = async {
                        let _ = rx.await;
                    };
                    if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                        tracing::error!(error = %e, "server stopped");
                    }
                });
                runtime.shutdown_timeout(Duration::from_secs(2));
            })?;
        Ok(RunningService {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}
