//! Settings shared by the device-side commands.
//!
//! Each setting resolves as flag, then `FIELDSYNC_*` environment variable
//! (both handled by clap), then the JSON config file.

use std::path::{Path, PathBuf};

use fieldsync_core::geo::GridSpec;
use fieldsync_core::model::{parse_schema, validate_device_id, Schema};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
}

impl CliConfig {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: CliConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.schema].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Global flags after clap has folded in the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub device_id: Option<String>,
    pub edge_url: Option<String>,
    pub cloud_url: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub device_id: Option<String>,
    pub team: String,
    pub data_dir: Option<PathBuf>,
    pub edge_url: Option<String>,
    pub cloud_url: Option<String>,
    pub grid: Option<GridSpec>,
    pub schema_path: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(o: Overrides) -> Result<Self, CliError> {
        let file_path = match &o.config {
            Some(p) => Some(p.clone()),
            None => o
                .data_dir
                .as_ref()
                .map(|d| d.join(CONFIG_FILE))
                .filter(|p| p.is_file()),
        };
        let file = match &file_path {
            Some(p) => CliConfig::load(p)?,
            None => CliConfig::default(),
        };
        Ok(Settings {
            device_id: o.device_id.or(file.device_id),
            team: file.team.unwrap_or_else(|| "team".to_string()),
            data_dir: o.data_dir.or(file.data_dir),
            edge_url: o.edge_url.or(file.edge_url),
            cloud_url: o.cloud_url.or(file.cloud_url),
            grid: file.grid,
            schema_path: file.schema,
        })
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no data dir: pass --data-dir or set FIELDSYNC_DATA_DIR".into()))
    }

    pub fn device_id(&self) -> Result<&str, CliError> {
        let id = self
            .device_id
            .as_deref()
            .ok_or_else(|| CliError::Config("no device id: pass --device-id or set FIELDSYNC_DEVICE_ID".into()))?;
        validate_device_id(id).map_err(|e| CliError::Config(format!("device id {id:?}: {e}")))?;
        Ok(id)
    }

    pub fn grid(&self) -> Result<&GridSpec, CliError> {
        let grid = self
            .grid
            .as_ref()
            .ok_or_else(|| CliError::Config("no grid configured".into()))?;
        grid.check().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(grid)
    }

    /// The configured schema, else `schema.json` in the data dir.
    pub fn schema(&self) -> Result<Schema, CliError> {
        let path = match &self.schema_path {
            Some(p) => p.clone(),
            None => self.data_dir()?.join(SCHEMA_FILE),
        };
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Config(format!("no schema at {}: {e}", path.display())))?;
        parse_schema(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn peer_url(&self, peer: PeerKind) -> Result<&str, CliError> {
        let (url, flag) = match peer {
            PeerKind::Edge => (&self.edge_url, "--edge-url"),
            PeerKind::Cloud => (&self.cloud_url, "--cloud-url"),
        };
        url.as_deref()
            .ok_or_else(|| CliError::Config(format!("no {} URL configured ({flag})", peer.name())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PeerKind {
    Edge,
    Cloud,
}

impl PeerKind {
    pub fn name(self) -> &'static str {
        match self {
            PeerKind::Edge => "edge",
            PeerKind::Cloud => "cloud",
        }
    }
}
