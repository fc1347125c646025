use std::path::{Path, PathBuf};
use std::time::Duration;

use fieldsync_core::sync::Tier;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATA_DIR_ENV: &str = "FIELDSYNC_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_interval() -> f64 {
    30.0
}

/// Settings for one edge or cloud service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub tier: Tier,
    /// `host:port`; port 0 picks a free port.
    pub bind: String,
    pub data_dir: PathBuf,
    /// Cloud base URL; required for an edge, forbidden for the cloud.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
    #[serde(default = "default_interval")]
    pub upstream_sync_interval_secs: f64,
    /// Schema document served at /schema and used to validate posts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Identity reported to peers; defaults to the lowercase tier name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_id: Option<String>,
}

impl ServiceConfig {
    pub fn new(tier: Tier, bind: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            tier,
            bind: bind.into(),
            data_dir: data_dir.into(),
            upstream: None,
            upstream_sync_interval_secs: default_interval(),
            schema: None,
            store_id: None,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        serde_json::from_slice(bytes).map_err(|e| ConfigError::Malformed(e.to_string()))
    }

    /// Reads a config file; relative paths in it are taken relative to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(schema) = cfg.schema.as_mut().filter(|s| s.is_relative()) {
            *schema = base.join(&*schema);
        }
        Ok(cfg)
    }

    /// Applies `FIELDSYNC_DATA_DIR` if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            self.data_dir = dir.into();
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        match (self.tier, &self.upstream) {
            (Tier::Device, _) => {
                return Err(ConfigError::Invalid("tier must be EDGE or CLOUD".into()));
            }
            (Tier::Edge, None) => {
                return Err(ConfigError::Invalid("EDGE requires an upstream URL".into()));
            }
            (Tier::Cloud, Some(_)) => {
                return Err(ConfigError::Invalid("CLOUD must not have an upstream".into()));
            }
            _ => {}
        }
        if !(self.upstream_sync_interval_secs.is_finite() && self.upstream_sync_interval_secs > 0.0) {
            return Err(ConfigError::Invalid(
                "upstream_sync_interval_secs must be positive".into(),
            ));
        }
        if self.bind.is_empty() {
            return Err(ConfigError::Invalid("bind address is empty".into()));
        }
        if let Some(id) = &self.store_id {
            if id.is_empty() {
                return Err(ConfigError::Invalid("store_id is empty".into()));
            }
        }
        Ok(())
    }

    pub fn store_id(&self) -> String {
        self.store_id
            .clone()
            .unwrap_or_else(|| self.tier.as_str().to_ascii_lowercase())
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.upstream_sync_interval_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_upstream_rules() {
        let mut c = ServiceConfig::new(Tier::Edge, "127.0.0.1:0", "/tmp/x");
        assert!(c.check().is_err());
        c.upstream = Some("http://cloud".into());
        c.check().unwrap();
        c.tier = Tier::Cloud;
        assert!(c.check().is_err());
        c.upstream = None;
        c.check().unwrap();
        assert_eq!(c.store_id(), "cloud");
    }

    #[test]
    fn parses_json() {
        let c = ServiceConfig::from_json(
            br#"{"tier":"EDGE","bind":"0.0.0.0:8080","data_dir":"d","upstream":"http://c:1","upstream_sync_interval_secs":5}"#,
        )
        .unwrap();
        assert_eq!(c.interval(), Duration::from_secs(5));
        assert!(ServiceConfig::from_json(br#"{"tier":"EDGE"}"#).is_err());
        assert!(ServiceConfig::from_json(br#"{"tier":"EDGE","bind":"a","data_dir":"d","extra":1}"#).is_err());
    }
}
