#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fieldsync_core::fixtures::{self, SCORCH_SCHEMA_JSON};
use fieldsync_core::model::Record;
use fieldsync_core::sync::Tier;
use fieldsync_service::{RunningService, ServiceConfig};
use rand::Rng;

pub fn schema_file(dir: &Path) -> PathBuf {
    let path = dir.join("schema.json");
    std::fs::write(&path, SCORCH_SCHEMA_JSON).unwrap();
    path
}

pub fn cloud_config(dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(Tier::Cloud, "127.0.0.1:0", dir.join("cloud"));
    c.schema = Some(schema_file(dir));
    c
}

pub fn edge_config(dir: &Path, upstream: &str, interval_secs: f64) -> ServiceConfig {
    let mut c = ServiceConfig::new(Tier::Edge, "127.0.0.1:0", dir.join("edge"));
    c.upstream = Some(upstream.to_string());
    c.upstream_sync_interval_secs = interval_secs;
    c.schema = Some(schema_file(dir));
    c
}

pub fn start(config: &ServiceConfig) -> RunningService {
    RunningService::start(config).expect("service starts")
}

/// A local port with nothing listening on it (at the time of the call).
pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

pub fn wait_for(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    cond()
}

/// Random batch over a small id space; payload is a function of the id, so
/// batches never conflict with each other.
pub fn random_batch(rng: &mut impl Rng) -> Vec<Record> {
    let n = rng.random_range(0..8);
    (0..n)
        .map(|_| {
            let d = rng.random_range(0..3usize);
            let c = rng.random_range(0..12u64);
            fixtures::record(["alpha", "bravo", "charlie"][d], c, (c * 7 % 100) as f64)
        })
        .collect()
}

pub fn post_body(batch: &[Record]) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({ "records": batch })).unwrap()
}
