//! Edge relay and cloud datastore services.
//!
//! Both tiers expose the same HTTP API over a [`storage::DurableStore`]; an
//! edge additionally syncs with its upstream cloud on a fixed interval.

pub mod blobs;
pub mod client;
pub mod config;
pub mod server;
pub mod storage;
pub mod upstream;

pub use client::HttpPeer;
pub use config::ServiceConfig;
pub use server::{AppState, RunningService, ServiceError};
