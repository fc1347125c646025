use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::{DateTime, Utc};
use fieldsync_core::geo::{
    coverage, detect_anomalies, missing_cells, under_sampled_cells, AnomalyParams,
};
use fieldsync_core::model::{
    is_content_hash, serialize_schema, validate_record, FieldKind, Record, RecordDraft, Schema,
    Source, Value,
};
use fieldsync_core::sim::{check_trace, load_scenario, run, Node, SimError};
use fieldsync_core::sync::{SyncError, Tier, TierStore};
use fieldsync_core::view::{render_plan, Point, RenderOptions, ViewerPose, Viewport};
use fieldsync_service::blobs::digest;
use fieldsync_service::storage::DurableStore;
use fieldsync_service::{HttpPeer, RunningService, ServiceConfig, ServiceError};
use serde::Serialize;
use serde_json::json;

use crate::config::{CliConfig, PeerKind, Settings, CONFIG_FILE, SCHEMA_FILE};
use crate::device::{write_json, Device};
use crate::error::CliError;
use crate::report::{self, StatusRow};

pub const BUNDLED_DEMO: &[u8] = include_bytes!("../scenarios/scorch-demo.json");
pub const SERVICE_CONFIG_FILE: &str = "service.json";

/// Text or JSON rendering of a command's result.
pub struct Output {
    pub text: String,
    pub json: serde_json::Value,
}

impl Output {
    fn new(text: String, json: impl Serialize) -> Self {
        Output {
            text,
            json: serde_json::to_value(json).expect("report serializes"),
        }
    }
}

fn device_store_id(settings: &Settings) -> &str {
    settings.device_id.as_deref().unwrap_or("device")
}

fn open_device(settings: &Settings) -> Result<Device, CliError> {
    Ok(Device::open(settings.data_dir()?, device_store_id(settings))?)
}

fn records(settings: &Settings) -> Result<Vec<Record>, CliError> {
    Ok(open_device(settings)?.store.store().iter().cloned().collect())
}

fn parse_value(kind: Option<FieldKind>, raw: &str) -> Value {
    match kind {
        Some(FieldKind::Numeric) => raw
            .trim()
            .parse::<f64>()
            .map(Value::Number)
            .unwrap_or_else(|_| Value::Text(raw.to_string())),
        Some(FieldKind::Gps) => {
            let parsed = raw
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            match parsed {
                Some((lat, lon)) => Value::Gps { lat, lon },
                None => Value::Text(raw.to_string()),
            }
        }
        _ => Value::Text(raw.to_string()),
    }
}

fn read_image(path: &Path) -> Result<(String, Vec<u8>), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read image {}: {e}", path.display())))?;
    Ok((digest(&bytes), bytes))
}

pub struct CollectArgs {
    pub values: Vec<String>,
    pub lat: f64,
    pub lon: f64,
    pub images: Vec<PathBuf>,
    pub ts: Option<String>,
    pub source: Source,
}

pub fn collect(settings: &Settings, args: CollectArgs) -> Result<Output, CliError> {
    let schema = settings.schema()?;
    let device_id = settings.device_id()?;
    let mut device = Device::open(settings.data_dir()?, device_id)?;

    let mut values = BTreeMap::new();
    let mut images = Vec::new();
    for pair in &args.values {
        let (name, raw) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected FIELD=VALUE, got {pair:?}")))?;
        let kind = schema.field(name).map(|f| f.kind);
        let value = if kind == Some(FieldKind::Image) && !is_content_hash(raw) {
            let (hash, bytes) = read_image(Path::new(raw))?;
            images.push((hash.clone(), bytes));
            Value::Text(hash)
        } else {
            parse_value(kind, raw)
        };
        values.insert(name.to_string(), value);
    }
    for path in &args.images {
        images.push(read_image(path)?);
    }
    let ts: DateTime<Utc> = match &args.ts {
        Some(t) => DateTime::parse_from_rfc3339(t)
            .map_err(|e| CliError::Validation(format!("bad --ts {t:?}: {e}")))?
            .with_timezone(&Utc),
        None => Utc::now(),
    };
    let mut image_refs: Vec<String> = images.iter().map(|(h, _)| h.clone()).collect();
    image_refs.dedup();

    let draft = RecordDraft {
        id: device.next_id(device_id)?,
        schema_id: schema.schema_id.clone(),
        schema_version: schema.version,
        ts,
        lat: args.lat,
        lon: args.lon,
        author: device_id.to_string(),
        team: settings.team.clone(),
        source: args.source,
        values,
        image_refs,
    };
    let record = validate_record(&schema, draft).map_err(|e| CliError::Validation(e.to_string()))?;

    for (hash, bytes) in &images {
        device.blobs.put(hash, bytes).map_err(|e| anyhow!(e))?;
        device.staged.insert(hash.clone());
    }
    let id = record.id.clone();
    device.insert(record)?;
    device.save()?;
    Ok(Output::new(
        format!("{id} UNSYNCED\n"),
        json!({ "id": id, "state": "UNSYNCED" }),
    ))
}

pub fn sync(settings: &Settings, peer: PeerKind, timeout_secs: f64) -> Result<Output, CliError> {
    let url = settings.peer_url(peer)?;
    let device_id = settings.device_id()?;
    let timeout = std::time::Duration::try_from_secs_f64(timeout_secs)
        .map_err(|_| CliError::Config(format!("bad timeout {timeout_secs}")))?;
    let mut device = Device::open(settings.data_dir()?, device_id)?;

    let offline_or = |e: SyncError| match e {
        SyncError::PeerUnreachable(m) => CliError::Offline(m),
        other => CliError::Other(anyhow!(other).context(format!("sync with {url}"))),
    };
    let mut http = HttpPeer::connect_with_timeout(url, timeout).map_err(offline_or)?;
    let report = device.sync(&mut http).map_err(offline_or)?;
    let uploaded = device.upload_staged(&http);
    device.save()?;

    let mut text = format!("{report}\n");
    if uploaded > 0 {
        text.push_str(&format!("uploaded {uploaded} blob(s)\n"));
    }
    Ok(Output::new(
        text,
        json!({ "report": report, "blobs_uploaded": uploaded }),
    ))
}

pub fn status(settings: &Settings) -> Result<Output, CliError> {
    let device = open_device(settings)?;
    let rows: Vec<StatusRow> = device
        .store
        .store()
        .ids()
        .map(|id| {
            let state = device.ledger.get(id);
            StatusRow {
                id: id.clone(),
                state,
                color: state.map_or('?', |s| s.color().letter()),
            }
        })
        .collect();
    Ok(Output::new(report::status(&rows), &rows))
}

pub fn coverage_cmd(settings: &Settings) -> Result<Output, CliError> {
    let grid = settings.grid()?;
    let recs = records(settings)?;
    let counts = coverage(&recs, grid);
    Ok(Output::new(report::coverage(&counts, grid), &counts))
}

pub fn missing(settings: &Settings, under: bool) -> Result<Output, CliError> {
    let grid = settings.grid()?;
    let counts = coverage(&records(settings)?, grid);
    if under {
        let d = under_sampled_cells(&counts, grid);
        return Ok(Output::new(report::under_sampled(&d), &d));
    }
    let cells = missing_cells(&counts);
    Ok(Output::new(report::missing(&cells, grid.cell_count()), &cells))
}

fn default_numeric_field(schema: &Schema) -> Result<String, CliError> {
    schema
        .fields
        .iter()
        .find(|f| f.kind == FieldKind::Numeric)
        .map(|f| f.name.clone())
        .ok_or_else(|| CliError::Config("schema has no numeric field; pass --field".into()))
}

pub fn anomalies(settings: &Settings, field: Option<String>, threshold: f64) -> Result<Output, CliError> {
    let grid = settings.grid()?;
    let schema = settings.schema()?;
    let field = match field {
        Some(f) => f,
        None => default_numeric_field(&schema)?,
    };
    let params = AnomalyParams {
        field,
        z_threshold: threshold,
    };
    let found = detect_anomalies(&records(settings)?, grid, &schema, &params)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Output::new(report::anomalies(&found), &found))
}

fn parse_floats<const N: usize>(what: &str, raw: &str) -> Result<[f64; N], CliError> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("{what}: expected {N} comma-separated numbers, got {raw:?}")))?;
    parts
        .try_into()
        .map_err(|_| CliError::Config(format!("{what}: expected {N} comma-separated numbers, got {raw:?}")))
}

pub struct RenderArgs {
    pub viewer: String,
    pub field: Option<String>,
    pub range: Option<String>,
    pub viewport: String,
    pub out: Option<PathBuf>,
}

pub fn renderplan(settings: &Settings, args: RenderArgs) -> Result<Output, CliError> {
    let [x, y, heading, fov] = parse_floats::<4>("--viewer", &args.viewer)?;
    let [w, h] = parse_floats::<2>("--viewport", &args.viewport)?;
    let viewer = ViewerPose::new(Point::new(x, y), heading, fov)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let viewport = Viewport::new(w, h).map_err(|e| CliError::Config(e.to_string()))?;
    let grid = settings.grid()?;
    let schema = settings.schema().ok();
    let field = match (args.field, &schema) {
        (Some(f), _) => f,
        (None, Some(s)) => default_numeric_field(s)?,
        (None, None) => return Err(CliError::Config("no schema; pass --field".into())),
    };
    let recs = records(settings)?;
    let value_range = match &args.range {
        Some(r) => parse_floats::<2>("--range", r)?,
        None => schema
            .as_ref()
            .and_then(|s| s.field(&field))
            .and_then(|f| f.numeric_range)
            .unwrap_or_else(|| data_range(&recs, &field)),
    };
    let plan = render_plan(
        &recs,
        &viewer,
        grid,
        &RenderOptions {
            field,
            value_range,
            viewport,
        },
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let doc = serde_json::to_string_pretty(&plan).expect("plan serializes") + "\n";
    match &args.out {
        Some(path) => {
            std::fs::write(path, &doc).with_context(|| format!("writing {}", path.display()))?;
            Ok(Output::new(
                format!(
                    "wrote {} wedge(s), {} hud mark(s) to {}\n",
                    plan.wedges.len(),
                    plan.hud.len(),
                    path.display()
                ),
                &plan,
            ))
        }
        None => Ok(Output::new(doc, &plan)),
    }
}

fn data_range(recs: &[Record], field: &str) -> [f64; 2] {
    let vals = recs.iter().filter_map(|r| r.value(field)?.as_number());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() && hi > lo {
        [lo, hi]
    } else if lo.is_finite() {
        [lo, lo + 1.0]
    } else {
        [0.0, 1.0]
    }
}

fn scenario_bytes(arg: &str) -> Result<Vec<u8>, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        return std::fs::read(path).map_err(|e| CliError::Config(format!("{arg}: {e}")));
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or(arg);
    if name == "scorch-demo" || name == "scorch-demo.json" {
        return Ok(BUNDLED_DEMO.to_vec());
    }
    Err(CliError::Config(format!("no scenario file {arg}")))
}

pub fn simulate(arg: &str, export: Option<&Path>, trace_out: Option<&Path>) -> Result<Output, CliError> {
    let scenario = load_scenario(&scenario_bytes(arg)?).map_err(|e| CliError::Config(e.to_string()))?;
    let outcome = run(scenario.clone()).map_err(|e| match e {
        SimError::Scenario(s) => CliError::Config(s.to_string()),
        other => CliError::Other(other.into()),
    })?;
    let props = check_trace(&outcome.trace);
    if let Some(path) = trace_out {
        std::fs::write(path, outcome.trace.to_json_lines())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = export {
        export_outcome(dir, &scenario, &outcome.devices, &outcome.edge.store, &outcome.cloud)?;
    }
    let mut text = format!(
        "{}trace_events: {}\ntrace_checks: {}\n",
        outcome.report,
        props.events,
        if props.passed() { "passed" } else { "failed" }
    );
    if let Some(v) = props.first_violation() {
        text.push_str(&format!("  tick {}: {}\n", v.tick, v.detail));
    }
    Ok(Output::new(
        text,
        json!({ "report": outcome.report, "trace": props }),
    ))
}

fn write_store(dir: &Path, store: &TierStore) -> Result<(), CliError> {
    let log = dir.join(fieldsync_service::storage::LOG_FILE);
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let mut durable = DurableStore::open(dir, store.tier(), store.store_id())?;
    durable.merge(&store.iter().cloned().collect::<Vec<_>>())?;
    Ok(())
}

/// Writes every simulated store as a data dir the other commands can open.
fn export_outcome(
    dir: &Path,
    scenario: &fieldsync_core::sim::Scenario,
    devices: &[Node],
    edge: &TierStore,
    cloud: &TierStore,
) -> Result<(), CliError> {
    let schema_bytes = serialize_schema(&scenario.schema);
    for (plan, node) in scenario.devices.iter().zip(devices) {
        let d = dir.join(&plan.device_id);
        std::fs::create_dir_all(&d)?;
        write_store(&d, &node.store)?;
        write_json(&d.join("ledger.json"), &node.ledger)?;
        write_json(&d.join("cursors.json"), &node.cursors)?;
        std::fs::write(d.join(SCHEMA_FILE), &schema_bytes)?;
        let cfg = CliConfig {
            device_id: Some(plan.device_id.clone()),
            team: Some(plan.team.clone()),
            data_dir: Some(".".into()),
            edge_url: Some("http://127.0.0.1:8081".into()),
            cloud_url: Some("http://127.0.0.1:8082".into()),
            grid: Some(scenario.grid.clone()),
            schema: Some(SCHEMA_FILE.into()),
        };
        write_json(&d.join(CONFIG_FILE), &cfg)?;
    }
    for (store, bind, upstream) in [
        (edge, "127.0.0.1:8081", Some("http://127.0.0.1:8082")),
        (cloud, "127.0.0.1:8082", None),
    ] {
        let d = dir.join(store.store_id());
        std::fs::create_dir_all(&d)?;
        write_store(&d, store)?;
        std::fs::write(d.join(SCHEMA_FILE), &schema_bytes)?;
        let mut cfg = ServiceConfig::new(store.tier(), bind, ".");
        cfg.upstream = upstream.map(str::to_string);
        cfg.schema = Some(SCHEMA_FILE.into());
        cfg.store_id = Some(store.store_id().to_string());
        write_json(&d.join(SERVICE_CONFIG_FILE), &cfg)?;
    }
    Ok(())
}

pub struct ServeArgs {
    pub tier: Tier,
    pub service_config: Option<PathBuf>,
    pub bind: Option<String>,
    pub upstream: Option<String>,
    pub interval: Option<f64>,
    pub schema: Option<PathBuf>,
    pub store_id: Option<String>,
}

/// Builds the service config: flags, then environment, then the config file.
pub fn service_config(settings: &Settings, data_dir_flag: Option<&Path>, args: ServeArgs) -> Result<ServiceConfig, CliError> {
    let mut cfg = match &args.service_config {
        Some(path) => ServiceConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => {
            let dir = settings.data_dir.clone().unwrap_or_default();
            ServiceConfig::new(args.tier, "127.0.0.1:8080", dir)
        }
    };
    cfg.tier = args.tier;
    cfg.apply_env();
    if let Some(d) = data_dir_flag {
        cfg.data_dir = d.to_path_buf();
    }
    if cfg.data_dir.as_os_str().is_empty() {
        return Err(CliError::Config("no data dir: pass --data-dir or set FIELDSYNC_DATA_DIR".into()));
    }
    if let Some(b) = args.bind {
        cfg.bind = b;
    }
    if let Some(u) = args.upstream {
        cfg.upstream = Some(u);
    } else if cfg.upstream.is_none() && args.tier == Tier::Edge {
        cfg.upstream = settings.cloud_url.clone();
    }
    if let Some(i) = args.interval {
        cfg.upstream_sync_interval_secs = i;
    }
    if let Some(s) = args.schema {
        cfg.schema = Some(s);
    }
    if let Some(id) = args.store_id {
        cfg.store_id = Some(id);
    }
    cfg.check().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn serve(cfg: &ServiceConfig) -> Result<(), CliError> {
    let svc = RunningService::start(cfg).map_err(|e| match e {
        ServiceError::Config(c) => CliError::Config(c.to_string()),
        other => CliError::Service(other.to_string()),
    })?;
    let recovery = svc.state().health();
    println!(
        "serving {} {} on {} ({} records)",
        cfg.tier,
        svc.state().store_id,
        svc.url(),
        recovery.records
    );
    svc.wait();
    Err(CliError::Service("server stopped".into()))
}
