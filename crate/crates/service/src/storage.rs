//! Append-only record log and the durable store built on it.
//!
//! Frames are a little-endian `u32` byte length followed by one record as
//! JSON. Replay stops at the first frame that is short or does not parse and
//! truncates the file there, which discards a write torn by a crash.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use fieldsync_core::model::{Record, RecordId};
use fieldsync_core::sync::{Ack, SyncError, Tier, TierStore};
use thiserror::Error;

pub const LOG_FILE: &str = "records.log";

const LEN_BYTES: usize = 4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("log {path}: frame at byte {offset} holds an invalid record sequence: {source}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        source: SyncError,
    },
}

/// What startup replay found.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recovery {
    pub records: usize,
    /// Bytes dropped from a torn tail.
    pub truncated_bytes: u64,
}

#[derive(Debug)]
pub struct PersistentLog {
    path: PathBuf,
    file: File,
    len: u64,
}

impl PersistentLog {
    /// Opens (creating if needed) the log at `path` and replays it.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<(Self, Vec<Record>, Recovery)> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let (records, valid) = decode_frames(&bytes);
        let truncated_bytes = bytes.len() as u64 - valid;
        if truncated_bytes > 0 {
            file.set_len(valid)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::Start(valid))?;
        let recovery = Recovery {
            records: records.len(),
            truncated_bytes,
        };
        Ok((
            PersistentLog {
                path,
                file,
                len: valid,
            },
            records,
            recovery,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Length in bytes of the intact log.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `records` as consecutive frames and syncs to disk.
    pub fn append(&mut self, records: &[&Record]) -> io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records {
            encode_frame(&mut buf, r);
        }
        if let Err(e) = self.file.write_all(&buf).and_then(|_| self.file.sync_data()) {
            // Leave no half frame behind for the next append to build on.
            let _ = self.file.set_len(self.len);
            let _ = self.file.seek(SeekFrom::Start(self.len));
            return Err(e);
        }
        self.len += buf.len() as u64;
        Ok(())
    }
}

pub fn encode_frame(buf: &mut Vec<u8>, record: &Record) {
    let body = record.canonical_bytes();
    let len = u32::try_from(body.len()).expect("record under 4 GiB");
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&body);
}

/// Decodes whole frames from the front of `bytes`; returns them and the
/// byte length they occupy.
pub fn decode_frames(bytes: &[u8]) -> (Vec<Record>, u64) {
    let mut records = Vec::new();
    let mut at = 0usize;
    while bytes.len() - at >= LEN_BYTES {
        let len = u32::from_le_bytes(bytes[at..at + LEN_BYTES].try_into().unwrap()) as usize;
        let start = at + LEN_BYTES;
        let Some(body) = bytes.get(start..start + len) else {
            break;
        };
        match serde_json::from_slice::<Record>(body) {
            Ok(r) => records.push(r),
            Err(_) => break,
        }
        at = start + len;
    }
    (records, at as u64)
}

/// A [`TierStore`] whose every accepted record is logged before it becomes
/// visible.
#[derive(Debug)]
pub struct DurableStore {
    store: TierStore,
    log: PersistentLog,
    recovery: Recovery,
}

impl DurableStore {
    pub fn open(dir: &Path, tier: Tier, store_id: &str) -> Result<Self, StoreError> {
        let path = dir.join(LOG_FILE);
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let (log, records, recovery) = PersistentLog::open(&path).map_err(io_err)?;
        let mut store = TierStore::new(tier, store_id);
        let mut offset = 0u64;
        for r in records {
            let frame = (LEN_BYTES + r.canonical_bytes().len()) as u64;
            store.merge(std::slice::from_ref(&r)).map_err(|source| StoreError::Corrupt {
                path: path.clone(),
                offset,
                source,
            })?;
            offset += frame;
        }
        Ok(DurableStore {
            store,
            log,
            recovery,
        })
    }

    pub fn store(&self) -> &TierStore {
        &self.store
    }

    pub fn recovery(&self) -> Recovery {
        self.recovery
    }

    pub fn log_len(&self) -> u64 {
        self.log.len()
    }

    /// All-or-nothing merge; new records reach disk before memory.
    pub fn merge(&mut self, batch: &[Record]) -> Result<Vec<RecordId>, StoreError> {
        let fresh = self.store.plan_merge(batch)?;
        self.log.append(&fresh).map_err(|source| StoreError::Io {
            path: self.log.path().to_path_buf(),
            source,
        })?;
        Ok(self.store.merge(batch)?)
    }

    /// Merge that reports which ids were new and which were already held.
    pub fn push(&mut self, batch: &[Record]) -> Result<Ack, StoreError> {
        let accepted_ids = self.merge(batch)?;
        Ok(ack_for(batch, accepted_ids))
    }
}

/// Splits a merged batch into newly accepted and already known ids.
pub fn ack_for(batch: &[Record], accepted_ids: Vec<RecordId>) -> Ack {
    let fresh: std::collections::HashSet<&RecordId> = accepted_ids.iter().collect();
    let mut seen = std::collections::HashSet::new();
    let known_ids = batch
        .iter()
        .filter(|r| !fresh.contains(&r.id) && seen.insert(&r.id))
        .map(|r| r.id.clone())
        .collect();
    Ack {
        accepted_ids,
        known_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fieldsync_core::fixtures::record;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn replay_restores_order() {
        let d = dir();
        let batch = vec![record("a", 0, 1.0), record("b", 0, 2.0), record("a", 1, 3.0)];
        {
            let mut s = DurableStore::open(d.path(), Tier::Cloud, "cloud").unwrap();
            s.merge(&batch[..2]).unwrap();
            s.merge(&batch).unwrap();
        }
        let s = DurableStore::open(d.path(), Tier::Cloud, "cloud").unwrap();
        let ids: Vec<String> = s.store().ids().map(|i| i.to_string()).collect();
        assert_eq!(ids, ["a/0", "b/0", "a/1"]);
        assert_eq!(s.recovery().truncated_bytes, 0);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let d = dir();
        let batch = vec![record("a", 0, 1.0), record("a", 1, 2.0)];
        let full = {
            let mut s = DurableStore::open(d.path(), Tier::Cloud, "cloud").unwrap();
            s.merge(&batch).unwrap();
            s.log_len()
        };
        let path = d.path().join(LOG_FILE);
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(full - 3).unwrap();
        drop(f);

        let mut s = DurableStore::open(d.path(), Tier::Cloud, "cloud").unwrap();
        assert_eq!(s.store().len(), 1);
        assert!(s.recovery().truncated_bytes > 0);
        s.merge(&batch).unwrap();
        drop(s);
        let s = DurableStore::open(d.path(), Tier::Cloud, "cloud").unwrap();
        assert_eq!(s.store().len(), 2);
        assert_eq!(s.recovery().truncated_bytes, 0);
    }

    #[test]
    fn garbage_frame_is_dropped() {
        let mut bytes = Vec::new();
        encode_frame(&mut bytes, &record("a", 0, 1.0));
        let good = bytes.len() as u64;
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(b"{nope");
        let (records, valid) = decode_frames(&bytes);
        assert_eq!(records.len(), 1);
        assert_eq!(valid, good);
    }

    #[test]
    fn conflict_writes_nothing() {
        let d = dir();
        let mut s = DurableStore::open(d.path(), Tier::Edge, "edge").unwrap();
        s.merge(&[record("a", 0, 1.0)]).unwrap();
        let len = s.log_len();
        let err = s.merge(&[record("a", 1, 1.0), record("a", 0, 9.0)]).unwrap_err();
        assert!(matches!(err, StoreError::Sync(SyncError::PayloadConflict(_))));
        assert_eq!(s.log_len(), len);
        assert_eq!(s.store().len(), 1);
    }

    #[test]
    fn push_splits_ack() {
        let d = dir();
        let mut s = DurableStore::open(d.path(), Tier::Edge, "edge").unwrap();
        s.push(&[record("a", 0, 1.0)]).unwrap();
        let ack = s.push(&[record("a", 0, 1.0), record("a", 1, 1.0)]).unwrap();
        assert_eq!(ack.accepted_ids, vec![RecordId::new("a", 1).unwrap()]);
        assert_eq!(ack.known_ids, vec![RecordId::new("a", 0).unwrap()]);
    }
}
