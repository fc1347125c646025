//! Schemas, records and their validation.
//!
//! A [`Schema`] is the pre-planned list of typed fields a team agrees on
//! before going into the field. Every [`Record`] is validated against it
//! once, at creation, and never changes afterwards.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Length of a lowercase hex SHA-256 digest.
pub const CONTENT_HASH_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("MalformedDocument: {0}")]
    MalformedDocument(String),
    #[error("InvalidSchema {field}: {reason}")]
    InvalidSchema { field: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("MissingField {0}")]
    MissingField(String),
    #[error("TypeMismatch {name}: expected {expected}")]
    TypeMismatch { name: String, expected: FieldKind },
    #[error("OutOfRange {name}: {value} not in [{}, {}]", .range[0], .range[1])]
    OutOfRange {
        name: String,
        value: f64,
        range: [f64; 2],
    },
    #[error("NonFinite {0}")]
    NonFinite(String),
    #[error("UnknownField {0}")]
    UnknownField(String),
    #[error("BadCoordinate {axis}: {value}")]
    BadCoordinate { axis: &'static str, value: f64 },
    #[error("SchemaMismatch: record targets {found}, schema is {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("BadImageRef {0}")]
    BadImageRef(String),
}

impl ValidationError {
    /// Name of the offending field or coordinate, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ValidationError::MissingField(n)
            | ValidationError::NonFinite(n)
            | ValidationError::UnknownField(n) => Some(n),
            ValidationError::TypeMismatch { name, .. } | ValidationError::OutOfRange { name, .. } => {
                Some(name)
            }
            ValidationError::BadCoordinate { axis, .. } => Some(axis),
            ValidationError::SchemaMismatch { .. } | ValidationError::BadImageRef(_) => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordIdError {
    #[error("InvalidDeviceId {0:?}: must be nonempty and contain no '/'")]
    InvalidDeviceId(String),
    #[error("InvalidCounter {0}")]
    InvalidCounter(i64),
    #[error("malformed record id {0:?}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Numeric,
    Text,
    Time,
    Gps,
    Image,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Numeric => "numeric",
            FieldKind::Text => "text",
            FieldKind::Time => "time",
            FieldKind::Gps => "gps",
            FieldKind::Image => "image",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(FieldKind::Numeric),
            "text" => Ok(FieldKind::Text),
            "time" => Ok(FieldKind::Time),
            "gps" => Ok(FieldKind::Gps),
            "image" => Ok(FieldKind::Image),
            other => Err(format!("unknown kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schema {
    pub schema_id: String,
    pub version: u32,
    pub fields: Vec<FieldSpec>,
}

// Wire shape before validation; `kind` stays a string so an unknown kind can
// be reported against the field that carries it.
#[derive(Deserialize)]
struct RawSchema {
    schema_id: String,
    version: i64,
    fields: Vec<RawField>,
}

#[derive(Deserialize)]
struct RawField {
    name: String,
    kind: String,
    #[serde(default)]
    unit: Option<String>,
    required: bool,
    #[serde(default)]
    numeric_range: Option<Vec<f64>>,
}

impl Schema {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Checks the schema invariants on an already-built value.
    pub fn check(&self) -> Result<(), SchemaError> {
        let invalid = |field: &str, reason: &str| SchemaError::InvalidSchema {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.schema_id.is_empty() {
            return Err(invalid("schema_id", "must be nonempty"));
        }
        if self.version == 0 {
            return Err(invalid("version", "must be >= 1"));
        }
        if self.fields.is_empty() {
            return Err(invalid("fields", "at least one field is required"));
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            if f.name.is_empty() {
                return Err(invalid("fields", "field name must be nonempty"));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(invalid(&f.name, "duplicate field name"));
            }
            if let Some([lo, hi]) = f.numeric_range {
                if f.kind != FieldKind::Numeric {
                    return Err(invalid(&f.name, "numeric_range only allowed on numeric fields"));
                }
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(invalid(&f.name, "numeric_range must be finite with min <= max"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("schema serializes")
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawSchema::deserialize(deserializer)?;
        Schema::from_raw(raw).map_err(serde::de::Error::custom)
    }
}

impl Schema {
    fn from_raw(raw: RawSchema) -> Result<Schema, SchemaError> {
        let invalid = |field: &str, reason: String| SchemaError::InvalidSchema {
            field: field.to_string(),
            reason,
        };
        if raw.version < 1 || raw.version > i64::from(u32::MAX) {
            return Err(invalid("version", format!("{} is not a positive version", raw.version)));
        }
        let mut fields = Vec::with_capacity(raw.fields.len());
        for f in raw.fields {
            let kind = FieldKind::from_str(&f.kind).map_err(|e| invalid(&f.name, e))?;
            let numeric_range = match f.numeric_range {
                None => None,
                Some(v) if v.len() == 2 => Some([v[0], v[1]]),
                Some(v) => {
                    return Err(invalid(
                        &f.name,
                        format!("numeric_range needs 2 bounds, got {}", v.len()),
                    ))
                }
            };
            fields.push(FieldSpec {
                name: f.name,
                kind,
                unit: f.unit,
                required: f.required,
                numeric_range,
            });
        }
        let schema = Schema {
            schema_id: raw.schema_id,
            version: raw.version as u32,
            fields,
        };
        schema.check()?;
        Ok(schema)
    }
}

/// Parses the JSON schema document.
pub fn parse_schema(document: &[u8]) -> Result<Schema, SchemaError> {
    let raw: RawSchema = serde_json::from_slice(document)
        .map_err(|e| SchemaError::MalformedDocument(e.to_string()))?;
    Schema::from_raw(raw)
}

pub fn serialize_schema(schema: &Schema) -> Vec<u8> {
    schema.to_json_bytes()
}

/// Device-scoped record identifier, written `device_id/counter`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordId {
    device_id: String,
    counter: u64,
}

impl RecordId {
    pub fn new(device_id: impl Into<String>, counter: u64) -> Result<Self, RecordIdError> {
        let device_id = device_id.into();
        validate_device_id(&device_id)?;
        Ok(RecordId { device_id, counter })
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }
}

pub fn validate_device_id(device_id: &str) -> Result<(), RecordIdError> {
    if device_id.is_empty() || device_id.contains('/') {
        return Err(RecordIdError::InvalidDeviceId(device_id.to_string()));
    }
    Ok(())
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.device_id, self.counter)
    }
}

impl FromStr for RecordId {
    type Err = RecordIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (device, counter) = s
            .rsplit_once('/')
            .ok_or_else(|| RecordIdError::Malformed(s.to_string()))?;
        // Reject "+1", "01" and friends so the text form stays canonical.
        let canonical = !counter.is_empty()
            && counter.bytes().all(|b| b.is_ascii_digit())
            && (counter == "0" || !counter.starts_with('0'));
        if !canonical {
            return Err(RecordIdError::Malformed(s.to_string()));
        }
        let counter = counter
            .parse::<u64>()
            .map_err(|_| RecordIdError::Malformed(s.to_string()))?;
        RecordId::new(device, counter)
    }
}

impl Serialize for RecordId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Returns the id following `last_counter`; pass -1 when the device has no records yet.
pub fn next_record_id(device_id: &str, last_counter: i64) -> Result<RecordId, RecordIdError> {
    validate_device_id(device_id)?;
    if last_counter < -1 {
        return Err(RecordIdError::InvalidCounter(last_counter));
    }
    RecordId::new(device_id, (last_counter + 1) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Manual,
    Sensor,
    Archival,
}

/// A field value as carried on the wire.
///
/// Time and image values travel as strings (RFC 3339 and content hash); the
/// schema decides how a string is interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
    Gps { lat: f64, lon: f64 },
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

mod rfc3339 {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// A validated, immutable observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: RecordId,
    pub schema_id: String,
    pub schema_version: u32,
    #[serde(with = "rfc3339")]
    pub ts: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub author: String,
    pub team: String,
    pub source: Source,
    pub values: BTreeMap<String, Value>,
    pub image_refs: Vec<String>,
}

impl Record {
    /// Canonical JSON encoding; two records are the same payload iff these bytes match.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("record serializes")
    }

    pub fn value(&self, field: &str) -> Option<&Value> {
        self.values.get(field)
    }

    pub fn to_draft(&self) -> RecordDraft {
        RecordDraft {
            id: self.id.clone(),
            schema_id: self.schema_id.clone(),
            schema_version: self.schema_version,
            ts: self.ts,
            lat: self.lat,
            lon: self.lon,
            author: self.author.clone(),
            team: self.team.clone(),
            source: self.source,
            values: self.values.clone(),
            image_refs: self.image_refs.clone(),
        }
    }
}

/// Candidate record, not yet checked against a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDraft {
    pub id: RecordId,
    pub schema_id: String,
    pub schema_version: u32,
    #[serde(with = "rfc3339")]
    pub ts: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub author: String,
    pub team: String,
    pub source: Source,
    pub values: BTreeMap<String, Value>,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

pub fn is_content_hash(s: &str) -> bool {
    s.len() == CONTENT_HASH_LEN && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

fn check_coordinate(axis: &'static str, value: f64, limit: f64) -> Result<(), ValidationError> {
    if !value.is_finite() || value.abs() > limit {
        return Err(ValidationError::BadCoordinate { axis, value });
    }
    Ok(())
}

fn check_value(spec: &FieldSpec, value: &Value) -> Result<(), ValidationError> {
    let mismatch = || ValidationError::TypeMismatch {
        name: spec.name.clone(),
        expected: spec.kind,
    };
    match (spec.kind, value) {
        (FieldKind::Numeric, Value::Number(v)) => {
            if !v.is_finite() {
                return Err(ValidationError::NonFinite(spec.name.clone()));
            }
            if let Some(range @ [lo, hi]) = spec.numeric_range {
                if *v < lo || *v > hi {
                    return Err(ValidationError::OutOfRange {
                        name: spec.name.clone(),
                        value: *v,
                        range,
                    });
                }
            }
            Ok(())
        }
        (FieldKind::Text, Value::Text(_)) => Ok(()),
        (FieldKind::Time, Value::Text(s)) => DateTime::parse_from_rfc3339(s)
            .map(|_| ())
            .map_err(|_| mismatch()),
        (FieldKind::Image, Value::Text(s)) if is_content_hash(s) => Ok(()),
        (FieldKind::Gps, Value::Gps { lat, lon }) => {
            check_coordinate("lat", *lat, 90.0)?;
            check_coordinate("lon", *lon, 180.0)
        }
        _ => Err(mismatch()),
    }
}

/// Checks a draft against its schema and freezes it into a [`Record`].
pub fn validate_record(schema: &Schema, draft: RecordDraft) -> Result<Record, ValidationError> {
    if draft.schema_id != schema.schema_id || draft.schema_version != schema.version {
        return Err(ValidationError::SchemaMismatch {
            expected: format!("{}@{}", schema.schema_id, schema.version),
            found: format!("{}@{}", draft.schema_id, draft.schema_version),
        });
    }
    check_coordinate("lat", draft.lat, 90.0)?;
    check_coordinate("lon", draft.lon, 180.0)?;
    for spec in &schema.fields {
        match draft.values.get(&spec.name) {
            Some(v) => check_value(spec, v)?,
            None if spec.required => return Err(ValidationError::MissingField(spec.name.clone())),
            None => {}
        }
    }
    if let Some(extra) = draft.values.keys().find(|k| schema.field(k).is_none()) {
        return Err(ValidationError::UnknownField(extra.clone()));
    }
    if let Some(bad) = draft.image_refs.iter().find(|h| !is_content_hash(h)) {
        return Err(ValidationError::BadImageRef(bad.clone()));
    }
    Ok(Record {
        id: draft.id,
        schema_id: draft.schema_id,
        schema_version: draft.schema_version,
        ts: draft.ts,
        lat: draft.lat,
        lon: draft.lon,
        author: draft.author,
        team: draft.team,
        source: draft.source,
        values: draft.values,
        image_refs: draft.image_refs,
    })
}
