//! Blocking HTTP client for a tier service, usable as a [`SyncPeer`].

use std::time::Duration;

use fieldsync_core::model::{Record, RecordId};
use fieldsync_core::sync::{Ack, Delta, SyncError, SyncPeer, Tier};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::http::{Response, StatusCode};
use ureq::{Agent, Body};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Body of GET /healthz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub tier: Tier,
    pub store_id: String,
    pub records: usize,
    pub max_seq: u64,
    #[serde(default)]
    pub last_upstream_sync: Option<String>,
    #[serde(default)]
    pub last_upstream_error: Option<String>,
}

/// Error body returned with 4xx/5xx statuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<RecordId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<FieldError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub id: RecordId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

#[derive(Serialize)]
struct PostBody<'a> {
    records: &'a [Record],
}

#[derive(Debug, Clone)]
pub struct HttpPeer {
    base: String,
    agent: Agent,
    store_id: String,
    tier: Tier,
}

impl HttpPeer {
    /// Contacts the service at `base_url` to learn its identity.
    pub fn connect(base_url: &str) -> Result<Self, SyncError> {
        Self::connect_with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(base_url: &str, timeout: Duration) -> Result<Self, SyncError> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut peer = HttpPeer {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
            store_id: String::new(),
            tier: Tier::Cloud,
        };
        let health = peer.health()?;
        peer.store_id = health.store_id;
        peer.tier = health.tier;
        Ok(peer)
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn unreachable(&self, e: ureq::Error) -> SyncError {
        SyncError::PeerUnreachable(format!("{}: {e}", self.base))
    }

    fn read_body(&self, resp: &mut Response<Body>) -> Result<Vec<u8>, SyncError> {
        resp.body_mut()
            .with_config()
            .read_to_vec()
            .map_err(|e| self.unreachable(e))
    }

    fn json<T: DeserializeOwned>(&self, mut resp: Response<Body>) -> Result<T, SyncError> {
        let status = resp.status();
        let bytes = self.read_body(&mut resp)?;
        if !status.is_success() {
            return Err(status_error(status, &bytes));
        }
        serde_json::from_slice(&bytes)
            .map_err(|e| SyncError::Protocol(format!("{}: bad response body: {e}", self.base)))
    }

    pub fn health(&self) -> Result<Health, SyncError> {
        let resp = self
            .agent
            .get(self.url("/healthz"))
            .call()
            .map_err(|e| self.unreachable(e))?;
        self.json(resp)
    }

    /// The served schema document, or None when the service has none.
    pub fn schema(&self) -> Result<Option<Vec<u8>>, SyncError> {
        let mut resp = self
            .agent
            .get(self.url("/schema"))
            .call()
            .map_err(|e| self.unreachable(e))?;
        let status = resp.status();
        let bytes = self.read_body(&mut resp)?;
        match status {
            StatusCode::OK => Ok(Some(bytes)),
            StatusCode::NOT_FOUND => Ok(None),
            s => Err(status_error(s, &bytes)),
        }
    }

    pub fn put_blob(&self, hash: &str, bytes: &[u8]) -> Result<(), SyncError> {
        let mut resp = self
            .agent
            .put(self.url(&format!("/blobs/{hash}")))
            .send(bytes)
            .map_err(|e| self.unreachable(e))?;
        let status = resp.status();
        let body = self.read_body(&mut resp)?;
        if status.is_success() {
            Ok(())
        } else {
            Err(status_error(status, &body))
        }
    }

    pub fn get_blob(&self, hash: &str) -> Result<Option<Vec<u8>>, SyncError> {
        let mut resp = self
            .agent
            .get(self.url(&format!("/blobs/{hash}")))
            .call()
            .map_err(|e| self.unreachable(e))?;
        let status = resp.status();
        let bytes = self.read_body(&mut resp)?;
        match status {
            StatusCode::OK => Ok(Some(bytes)),
            StatusCode::NOT_FOUND => Ok(None),
            s => Err(status_error(s, &bytes)),
        }
    }

    /// Raw POST /records, exposing status and body.
    pub fn post_records_raw(&self, body: &[u8]) -> Result<(u16, Vec<u8>), SyncError> {
        let mut resp = self
            .agent
            .post(self.url("/records"))
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        Ok((status, self.read_body(&mut resp)?))
    }

    /// Raw GET /records with an arbitrary `after` string.
    pub fn get_records_raw(&self, after: &str) -> Result<(u16, Vec<u8>), SyncError> {
        let mut resp = self
            .agent
            .get(self.url("/records"))
            .query("after", after)
            .call()
            .map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        Ok((status, self.read_body(&mut resp)?))
    }
}

fn status_error(status: StatusCode, body: &[u8]) -> SyncError {
    let parsed: Option<ErrorBody> = serde_json::from_slice(body).ok();
    if status == StatusCode::CONFLICT {
        if let Some(id) = parsed.as_ref().and_then(|b| b.id.clone()) {
            return SyncError::PayloadConflict(id);
        }
    }
    let detail = parsed
        .map(|b| b.message)
        .unwrap_or_else(|| String::from_utf8_lossy(body).into_owned());
    SyncError::Protocol(format!("HTTP {}: {detail}", status.as_u16()))
}

impl SyncPeer for HttpPeer {
    fn store_id(&self) -> String {
        self.store_id.clone()
    }

    fn tier(&self) -> Tier {
        self.tier
    }

    fn push(&mut self, batch: &[Record]) -> Result<Ack, SyncError> {
        let resp = self
            .agent
            .post(self.url("/records"))
            .send_json(PostBody { records: batch })
            .map_err(|e| self.unreachable(e))?;
        self.json(resp)
    }

    fn pull(&mut self, after: u64) -> Result<Delta, SyncError> {
        let resp = self
            .agent
            .get(self.url("/records"))
            .query("after", after.to_string())
            .call()
            .map_err(|e| self.unreachable(e))?;
        self.json(resp)
    }
}
