//! The scorch-sampling schema used by the demo scenario, and small record
//! builders for tests.

use chrono::{DateTime, Duration, TimeZone, Utc};

use crate::model::{parse_schema, Record, RecordId, Schema, Source, Value};

pub const SCORCH_SCHEMA_JSON: &str = r#"{
  "schema_id": "scorch",
  "version": 1,
  "fields": [
    {"name": "scorch", "kind": "numeric", "unit": "percent", "required": true, "numeric_range": [0, 100]},
    {"name": "note", "kind": "text", "required": false},
    {"name": "site_photo", "kind": "image", "required": false}
  ]
}
"#;

pub fn scorch_schema() -> Schema {
    parse_schema(SCORCH_SCHEMA_JSON.as_bytes()).expect("bundled schema is valid")
}

pub fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()
}

/// A scorch record at a fixed place; `counter` also offsets the timestamp in seconds.
pub fn record(device: &str, counter: u64, scorch: f64) -> Record {
    record_at(device, counter, scorch, 40.0, -105.0)
}

pub fn record_at(device: &str, counter: u64, scorch: f64, lat: f64, lon: f64) -> Record {
    Record {
        id: RecordId::new(device, counter).expect("valid device id"),
        schema_id: "scorch".into(),
        schema_version: 1,
        ts: base_time() + Duration::seconds(counter as i64),
        lat,
        lon,
        author: device.to_string(),
        team: "teamA".into(),
        source: Source::Manual,
        values: [("scorch".to_string(), Value::Number(scorch))].into_iter().collect(),
        image_refs: vec![],
    }
}
