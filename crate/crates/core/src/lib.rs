//! Offline-first field data: record model, three-tier replication,
//! grid analytics, off-screen view geometry and a connectivity simulator.

pub mod color;
pub mod fixtures;
pub mod geo;
pub mod model;
pub mod sim;
pub mod sync;
pub mod view;

pub use model::{Record, RecordId, Schema};
pub use sync::{FreshnessLedger, FreshnessState, Tier, TierStore};
