//! Content-addressed blob storage keyed by SHA-256.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use fieldsync_core::model::is_content_hash;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("not a content hash: {0:?}")]
    BadHash(String),
    #[error("hash mismatch: expected {expected}, content digests to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("blob store: {0}")]
    Io(#[from] io::Error),
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BlobStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(hash)
    }

    pub fn contains(&self, hash: &str) -> bool {
        is_content_hash(hash) && self.path(hash).is_file()
    }

    /// Stores `bytes` under `hash`. Returns false when it was already present.
    pub fn put(&self, hash: &str, bytes: &[u8]) -> Result<bool, BlobError> {
        if !is_content_hash(hash) {
            return Err(BlobError::BadHash(hash.to_string()));
        }
        let actual = digest(bytes);
        if actual != hash {
            return Err(BlobError::HashMismatch {
                expected: hash.to_string(),
                actual,
            });
        }
        if self.contains(hash) {
            return Ok(false);
        }
        // Write beside the target and rename so readers never see a partial blob.
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_data()?;
        tmp.persist(self.path(hash)).map_err(|e| e.error)?;
        Ok(true)
    }

    /// Hashes and stores `bytes`, returning the hash.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<String, BlobError> {
        let hash = digest(bytes);
        self.put(&hash, bytes)?;
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> Result<Option<Vec<u8>>, BlobError> {
        if !is_content_hash(hash) {
            return Err(BlobError::BadHash(hash.to_string()));
        }
        match fs::read(self.path(hash)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            digest(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn put_get_and_mismatch() {
        let d = tempfile::tempdir().unwrap();
        let s = BlobStore::open(d.path()).unwrap();
        let h = digest(b"photo");
        assert!(s.put(&h, b"photo").unwrap());
        assert!(!s.put(&h, b"photo").unwrap());
        assert_eq!(s.get(&h).unwrap().unwrap(), b"photo");
        assert!(matches!(s.put(&h, b"other"), Err(BlobError::HashMismatch { .. })));
        assert!(s.get(&digest(b"missing")).unwrap().is_none());
        assert!(matches!(s.get("../etc"), Err(BlobError::BadHash(_))));
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
