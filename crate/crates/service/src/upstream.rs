//! Edge-to-cloud relay: one sync session per interval, then blob transfer.
//!
//! The store lock is held only while planning the push and while merging the
//! pulled delta, never across network calls.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use fieldsync_core::model::Record;
use fieldsync_core::sync::{
    conclude_session, plan_push, Ack, CursorBook, FreshnessLedger, SessionOutcome, SyncError,
    SyncPeer, SyncReport,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blobs::BlobStore;
use crate::client::HttpPeer;
use crate::server::{lock, AppState};
use crate::storage::StoreError;

pub const UPSTREAM_STATE_FILE: &str = "upstream.json";
const TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum UpstreamError {
    #[error("no upstream configured")]
    NotConfigured,
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Store(StoreError),
    #[error("saving upstream state: {0}")]
    Io(#[from] std::io::Error),
}

impl From<StoreError> for UpstreamError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Sync(s) => UpstreamError::Sync(s),
            other => UpstreamError::Store(other),
        }
    }
}

/// Session state persisted between restarts.
#[derive(Debug, Default, Serialize, Deserialize)]
struct Session {
    cursors: CursorBook,
    ledger: FreshnessLedger,
}

#[derive(Debug, Clone, Default)]
pub struct UpstreamStatus {
    pub last_sync: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
}

#[derive(Debug, Default)]
struct BlobQueues {
    /// Held locally, not yet confirmed upstream.
    outgoing: BTreeSet<String>,
    /// Referenced by pulled records, not yet held locally.
    wanted: BTreeSet<String>,
}

#[derive(Debug)]
pub struct Upstream {
    url: String,
    state_path: PathBuf,
    session: Mutex<Session>,
    status: Mutex<UpstreamStatus>,
    blobs: Mutex<BlobQueues>,
}

impl Upstream {
    pub(crate) fn open(url: &str, data_dir: &Path, blobs: &BlobStore) -> std::io::Result<Self> {
        let state_path = data_dir.join(UPSTREAM_STATE_FILE);
        let session = match std::fs::read(&state_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_else(|e| {
                tracing::warn!(error = %e, "unreadable upstream state; starting from zero cursors");
                Session::default()
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Session::default(),
            Err(e) => return Err(e),
        };
        // Anything held locally may not have made it upstream before a restart.
        let mut outgoing = BTreeSet::new();
        for entry in std::fs::read_dir(blobs.dir())? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if blobs.contains(&name) {
                outgoing.insert(name);
            }
        }
        Ok(Upstream {
            url: url.to_string(),
            state_path,
            session: Mutex::new(session),
            status: Mutex::new(UpstreamStatus::default()),
            blobs: Mutex::new(BlobQueues {
                outgoing,
                wanted: BTreeSet::new(),
            }),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn status(&self) -> UpstreamStatus {
        lock(&self.status).clone()
    }

    pub(crate) fn queue_blob(&self, hash: &str) {
        lock(&self.blobs).outgoing.insert(hash.to_string());
    }

    fn save(&self, session: &Session) -> std::io::Result<()> {
        let dir = self.state_path.parent().unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec(session).expect("session serializes"))?;
        tmp.persist(&self.state_path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// One session against the upstream, followed by blob relay.
pub(crate) fn run_once(state: &AppState) -> Result<SyncReport, UpstreamError> {
    let up = state.upstream.as_ref().ok_or(UpstreamError::NotConfigured)?;
    let result = session(state, up);
    let mut status = lock(&up.status);
    match &result {
        Ok(_) => {
            status.last_sync = Some(Utc::now());
            status.last_error = None;
        }
        Err(e) => status.last_error = Some(e.to_string()),
    }
    result
}

fn session(state: &AppState, up: &Upstream) -> Result<SyncReport, UpstreamError> {
    let mut sess = lock(&up.session);
    let mut peer = HttpPeer::connect_with_timeout(&up.url, TIMEOUT)?;
    let peer_id = peer.store_id();

    let (batch, push_cursor) = plan_push(lock(&state.store).store(), &sess.cursors, &peer_id);
    let ack = if batch.is_empty() {
        Ack::default()
    } else {
        peer.push(&batch)?
    };
    let delta = peer.pull(sess.cursors.pull_cursor(&peer_id).last_seq_seen)?;

    let report = {
        let mut store = lock(&state.store);
        let newly_added = store.merge(&delta.records)?;
        let Session { cursors, ledger } = &mut *sess;
        conclude_session(
            store.store(),
            ledger,
            cursors,
            SessionOutcome {
                peer_id: &peer_id,
                peer_tier: peer.tier(),
                push_cursor,
                ack,
                pulled: &delta.records,
                pull_cursor: delta.cursor,
                newly_added: &newly_added,
            },
        )
    };
    up.save(&sess)?;
    drop(sess);

    relay_blobs(state, up, &peer, &batch, &delta.records);
    Ok(report)
}

/// Best effort: failures stay queued for the next session.
fn relay_blobs(state: &AppState, up: &Upstream, peer: &HttpPeer, pushed: &[Record], pulled: &[Record]) {
    let (outgoing, wanted) = {
        let mut q = lock(&up.blobs);
        for h in pushed.iter().flat_map(|r| &r.image_refs) {
            if state.blobs.contains(h) {
                q.outgoing.insert(h.clone());
            }
        }
        for h in pulled.iter().flat_map(|r| &r.image_refs) {
            if !state.blobs.contains(h) {
                q.wanted.insert(h.clone());
            }
        }
        (q.outgoing.clone(), q.wanted.clone())
    };

    for hash in outgoing {
        let sent = match state.blobs.get(&hash) {
            Ok(Some(bytes)) => peer.put_blob(&hash, &bytes),
            Ok(None) => Ok(()),
            Err(e) => {
                tracing::warn!(%hash, error = %e, "cannot read blob for relay");
                continue;
            }
        };
        match sent {
            Ok(()) => {
                lock(&up.blobs).outgoing.remove(&hash);
            }
            Err(e) => {
                tracing::warn!(%hash, error = %e, "blob upload failed");
                if matches!(e, SyncError::PeerUnreachable(_)) {
                    return;
                }
            }
        }
    }

    for hash in wanted {
        match peer.get_blob(&hash) {
            Ok(Some(bytes)) => match state.blobs.put(&hash, &bytes) {
                Ok(_) => {
                    lock(&up.blobs).wanted.remove(&hash);
                }
                Err(e) => tracing::warn!(%hash, error = %e, "upstream blob rejected"),
            },
            Ok(None) => {}
            Err(e) => {
                tracing::warn!(%hash, error = %e, "blob download failed");
                if matches!(e, SyncError::PeerUnreachable(_)) {
                    return;
                }
            }
        }
    }
}
