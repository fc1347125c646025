//! A device's data directory: record log, freshness ledger, sync cursors and
//! blobs waiting for upload.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fieldsync_core::model::{next_record_id, Record, RecordId};
use fieldsync_core::sync::{
    conclude_session, plan_push, Ack, CursorBook, FreshnessLedger, FreshnessState, SessionOutcome,
    SyncError, SyncPeer, SyncReport, Tier,
};
use fieldsync_service::blobs::BlobStore;
use fieldsync_service::storage::{DurableStore, StoreError};
use fieldsync_service::HttpPeer;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const LEDGER_FILE: &str = "ledger.json";
pub const CURSORS_FILE: &str = "cursors.json";
pub const STAGED_FILE: &str = "staged.json";
pub const BLOB_DIR: &str = "blobs";

pub struct Device {
    dir: PathBuf,
    pub store: DurableStore,
    pub ledger: FreshnessLedger,
    pub cursors: CursorBook,
    pub blobs: BlobStore,
    /// Blob hashes not yet uploaded to any peer.
    pub staged: BTreeSet<String>,
}

fn read_json<T: DeserializeOwned + Default>(path: &Path) -> anyhow::Result<T> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// Writes via a temp file and rename so a crash leaves the old or new file.
pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n")?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

impl Device {
    pub fn open(dir: &Path, device_id: &str) -> anyhow::Result<Self> {
        let store = DurableStore::open(dir, Tier::Device, device_id)?;
        Ok(Device {
            dir: dir.to_path_buf(),
            store,
            ledger: read_json(&dir.join(LEDGER_FILE))?,
            cursors: read_json(&dir.join(CURSORS_FILE))?,
            blobs: BlobStore::open(dir.join(BLOB_DIR))?,
            staged: read_json(&dir.join(STAGED_FILE))?,
        })
    }

    pub fn save(&self) -> anyhow::Result<()> {
        write_json(&self.dir.join(LEDGER_FILE), &self.ledger)?;
        write_json(&self.dir.join(CURSORS_FILE), &self.cursors)?;
        write_json(&self.dir.join(STAGED_FILE), &self.staged)?;
        Ok(())
    }

    /// Id for the next record authored as `device_id`.
    pub fn next_id(&self, device_id: &str) -> anyhow::Result<RecordId> {
        let last = self
            .store
            .store()
            .ids()
            .filter(|id| id.device_id() == device_id)
            .map(|id| id.counter() as i64)
            .max()
            .unwrap_or(-1);
        Ok(next_record_id(device_id, last)?)
    }

    /// Stores a locally authored record as UNSYNCED.
    pub fn insert(&mut self, record: Record) -> Result<(), StoreError> {
        self.store.merge(std::slice::from_ref(&record))?;
        self.ledger.observe(&record.id, FreshnessState::Unsynced);
        Ok(())
    }

    /// One session against `peer`; the log, ledger and cursors change only on success.
    pub fn sync(&mut self, peer: &mut HttpPeer) -> Result<SyncReport, SyncError> {
        let peer_id = peer.store_id();
        let (batch, push_cursor) = plan_push(self.store.store(), &self.cursors, &peer_id);
        let ack = if batch.is_empty() {
            Ack::default()
        } else {
            peer.push(&batch)?
        };
        let delta = peer.pull(self.cursors.pull_cursor(&peer_id).last_seq_seen)?;
        let newly_added = self.store.merge(&delta.records).map_err(|e| match e {
            StoreError::Sync(s) => s,
            other => SyncError::Protocol(other.to_string()),
        })?;
        Ok(conclude_session(
            self.store.store(),
            &mut self.ledger,
            &mut self.cursors,
            SessionOutcome {
                peer_id: &peer_id,
                peer_tier: peer.tier(),
                push_cursor,
                ack,
                pulled: &delta.records,
                pull_cursor: delta.cursor,
                newly_added: &newly_added,
            },
        ))
    }

    /// Uploads staged blobs; returns how many went up. Stops at the first failure.
    pub fn upload_staged(&mut self, peer: &HttpPeer) -> usize {
        let mut sent = 0;
        for hash in self.staged.clone() {
            match self.blobs.get(&hash) {
                Ok(Some(bytes)) => {
                    if peer.put_blob(&hash, &bytes).is_err() {
                        break;
                    }
                    sent += 1;
                }
                // Gone locally; nothing left to send.
                Ok(None) => {}
                Err(_) => continue,
            }
            self.staged.remove(&hash);
        }
        sent
    }
}
