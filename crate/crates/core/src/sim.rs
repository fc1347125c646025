//! Deterministic discrete-tick simulator of field teams, a portable edge
//! relay and an intermittently reachable cloud.
//!
//! Every tick runs the same fixed phases: move devices, apply data entry,
//! device/edge sessions for devices in radio range, the edge/cloud session on
//! interval ticks while the cloud is up, then direct device/cloud links.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GridSpec;
use crate::model::{
    validate_record, FieldKind, Record, RecordDraft, RecordId, Schema, Source, ValidationError,
    Value,
};
use crate::sync::{
    insert_local, sync_session_traced, CursorBook, FreshnessLedger, FreshnessState, SyncError,
    SyncReport, Tier, TierStore,
};
use crate::view::Point;

pub const EDGE_ID: &str = "edge";
pub const CLOUD_ID: &str = "cloud";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("MalformedScenario: {0}")]
    Malformed(String),
    #[error("InvalidInterval {0}")]
    InvalidInterval(String),
    #[error("UnknownField {field} (device {device}, tick {tick})")]
    UnknownField {
        device: String,
        tick: u64,
        field: String,
    },
    #[error("InvalidScenario: {0}")]
    Invalid(String),
    #[error("invalid entry for {device} at tick {tick}: {source}")]
    InvalidEntry {
        device: String,
        tick: u64,
        source: ValidationError,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("sync failed at tick {tick}: {source}")]
    Sync { tick: u64, source: SyncError },
    #[error("simulation already finished")]
    Finished,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Half-open tick window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window(pub u64, pub u64);

impl Window {
    pub fn contains(&self, tick: u64) -> bool {
        self.0 <= tick && tick < self.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint(pub u64, pub f64, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub tick: u64,
    pub values: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePlan {
    pub device_id: String,
    #[serde(default = "default_team")]
    pub team: String,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub entries: Vec<Entry>,
    /// Windows with a direct cloud link (e.g. cell coverage).
    #[serde(default)]
    pub cloud_links: Vec<Window>,
}

fn default_team() -> String {
    "team".to_string()
}

impl DevicePlan {
    /// Position at `tick`, linearly interpolated and held constant outside the waypoints.
    pub fn position(&self, tick: u64) -> Point {
        let wp = &self.waypoints;
        let first = wp[0];
        if tick <= first.0 {
            return Point::new(first.1, first.2);
        }
        for pair in wp.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if tick <= b.0 {
                let f = (tick - a.0) as f64 / (b.0 - a.0) as f64;
                return Point::new(a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2));
            }
        }
        let last = wp[wp.len() - 1];
        Point::new(last.1, last.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePlan {
    pub x_m: f64,
    pub y_m: f64,
    pub range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub ticks: u64,
    pub grid: GridSpec,
    pub schema: Schema,
    pub devices: Vec<DevicePlan>,
    pub edge: EdgePlan,
    pub cloud_uptime: Vec<Window>,
    pub edge_sync_interval: u64,
}

fn check_windows(what: &str, windows: &[Window], ticks: u64) -> Result<(), ScenarioError> {
    let mut sorted = windows.to_vec();
    sorted.sort_by_key(|w| w.0);
    for w in &sorted {
        if w.0 >= w.1 || w.1 > ticks {
            return Err(ScenarioError::InvalidInterval(format!(
                "{what} [{}, {}] must satisfy start < end <= {ticks}",
                w.0, w.1
            )));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(ScenarioError::InvalidInterval(format!(
                "{what} [{}, {}] overlaps [{}, {}]",
                pair[0].0, pair[0].1, pair[1].0, pair[1].1
            )));
        }
    }
    Ok(())
}

/// Parses and validates a JSON scenario document.
pub fn load_scenario(document: &[u8]) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario =
        serde_json::from_slice(document).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
    scenario.check()?;
    Ok(scenario)
}

impl Scenario {
    pub fn check(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.ticks == 0 {
            return invalid("ticks must be >= 1".into());
        }
        if self.edge_sync_interval == 0 {
            return invalid("edge_sync_interval must be >= 1".into());
        }
        if !(self.edge.range_m >= 0.0) {
            return invalid("edge range_m must be >= 0".into());
        }
        self.grid
            .check()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.schema
            .check()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        check_windows("cloud_uptime", &self.cloud_uptime, self.ticks)?;

        let mut ids = HashSet::new();
        for d in &self.devices {
            crate::model::validate_device_id(&d.device_id)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            if d.device_id == EDGE_ID || d.device_id == CLOUD_ID {
                return invalid(format!("device id {:?} is reserved", d.device_id));
            }
            if !ids.insert(d.device_id.as_str()) {
                return invalid(format!("duplicate device {}", d.device_id));
            }
            if d.waypoints.is_empty() {
                return invalid(format!("device {} has no waypoints", d.device_id));
            }
            if d.waypoints.windows(2).any(|w| w[0].0 >= w[1].0) {
                return invalid(format!("device {} waypoint ticks must increase", d.device_id));
            }
            check_windows(&format!("{} cloud_links", d.device_id), &d.cloud_links, self.ticks)?;
            for e in &d.entries {
                if e.tick >= self.ticks {
                    return invalid(format!("device {} entry at tick {} is past the end", d.device_id, e.tick));
                }
                if let Some(f) = e.values.keys().find(|k| self.schema.field(k).is_none()) {
                    return Err(ScenarioError::UnknownField {
                        device: d.device_id.clone(),
                        tick: e.tick,
                        field: f.clone(),
                    });
                }
            }
        }
        // Materializing validates every entry against the schema.
        self.records().map(|_| ())
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap() + Duration::seconds(self.seed as i64 % 86_400)
    }

    /// Every record the scenario will create, per device in entry order.
    pub fn records(&self) -> Result<Vec<Vec<Record>>, ScenarioError> {
        let start = self.start_time();
        self.devices
            .iter()
            .map(|d| {
                let mut entries: Vec<&Entry> = d.entries.iter().collect();
                entries.sort_by_key(|e| e.tick);
                entries
                    .into_iter()
                    .enumerate()
                    .map(|(k, e)| {
                        let p = d.position(e.tick);
                        let (lat, lon) = self.grid.unproject(p.x, p.y);
                        let draft = RecordDraft {
                            id: RecordId::new(d.device_id.clone(), k as u64)
                                .map_err(|err| ScenarioError::Invalid(err.to_string()))?,
                            schema_id: self.schema.schema_id.clone(),
                            schema_version: self.schema.version,
                            ts: start + Duration::minutes(e.tick as i64),
                            lat,
                            lon,
                            author: d.device_id.clone(),
                            team: d.team.clone(),
                            source: Source::Manual,
                            values: e.values.clone(),
                            image_refs: vec![],
                        };
                        validate_record(&self.schema, draft).map_err(|source| {
                            ScenarioError::InvalidEntry {
                                device: d.device_id.clone(),
                                tick: e.tick,
                                source,
                            }
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn cloud_up(&self, tick: u64) -> bool {
        self.cloud_uptime.iter().any(|w| w.contains(tick))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "UPPERCASE")]
pub enum TraceEvent {
    Enter {
        tick: u64,
        device: String,
        record_id: RecordId,
    },
    Sync {
        tick: u64,
        a: String,
        b: String,
        report: SyncReport,
        /// Newly added at `b`.
        pushed_ids: Vec<RecordId>,
        /// Newly added at `a`.
        pulled_ids: Vec<RecordId>,
    },
    Promote {
        tick: u64,
        device: String,
        record_id: RecordId,
        state: FreshnessState,
    },
}

impl TraceEvent {
    pub fn tick(&self) -> u64 {
        match self {
            TraceEvent::Enter { tick, .. }
            | TraceEvent::Sync { tick, .. }
            | TraceEvent::Promote { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Trace, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }
}

/// Store, ledger and cursors of one replicating node.
#[derive(Debug, Clone)]
pub struct Node {
    pub store: TierStore,
    pub ledger: FreshnessLedger,
    pub cursors: CursorBook,
}

impl Node {
    fn new(tier: Tier, id: &str) -> Self {
        Node {
            store: TierStore::new(tier, id),
            ledger: FreshnessLedger::new(),
            cursors: CursorBook::default(),
        }
    }
}

pub struct Simulator {
    scenario: Scenario,
    tick: u64,
    pending: Vec<std::collections::VecDeque<(u64, Record)>>,
    devices: Vec<Node>,
    positions: Vec<Point>,
    edge: Node,
    cloud: TierStore,
    trace: Trace,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.check()?;
        let records = scenario.records()?;
        let pending = scenario
            .devices
            .iter()
            .zip(records)
            .map(|(d, rs)| {
                let mut ticks: Vec<u64> = d.entries.iter().map(|e| e.tick).collect();
                ticks.sort_unstable();
                ticks.into_iter().zip(rs).collect()
            })
            .collect();
        let devices = scenario
            .devices
            .iter()
            .map(|d| Node::new(Tier::Device, &d.device_id))
            .collect();
        let positions = scenario.devices.iter().map(|d| d.position(0)).collect();
        Ok(Simulator {
            scenario,
            tick: 0,
            pending,
            devices,
            positions,
            edge: Node::new(Tier::Edge, EDGE_ID),
            cloud: TierStore::new(Tier::Cloud, CLOUD_ID),
            trace: Trace::default(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Next tick to run.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.scenario.ticks
    }

    pub fn device(&self, device_id: &str) -> Option<&Node> {
        self.scenario
            .devices
            .iter()
            .position(|d| d.device_id == device_id)
            .map(|i| &self.devices[i])
    }

    pub fn devices(&self) -> impl Iterator<Item = &Node> + '_ {
        self.devices.iter()
    }

    pub fn edge(&self) -> &Node {
        &self.edge
    }

    pub fn cloud(&self) -> &TierStore {
        &self.cloud
    }

    pub fn position(&self, device_index: usize) -> Point {
        self.positions[device_index]
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    fn record_session(
        trace: &mut Trace,
        tick: u64,
        a: &str,
        b: &str,
        result: Result<(SyncReport, crate::sync::SessionIds), SyncError>,
    ) -> Result<(), SimError> {
        let (report, ids) = result.map_err(|source| SimError::Sync { tick, source })?;
        let promotions: Vec<TraceEvent> = report
            .promoted
            .iter()
            .map(|(id, state)| TraceEvent::Promote {
                tick,
                device: a.to_string(),
                record_id: id.clone(),
                state: *state,
            })
            .collect();
        trace.events.push(TraceEvent::Sync {
            tick,
            a: a.to_string(),
            b: b.to_string(),
            report,
            pushed_ids: ids.pushed,
            pulled_ids: ids.pulled,
        });
        trace.events.extend(promotions);
        Ok(())
    }

    /// Runs one tick through all phases.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.is_finished() {
            return Err(SimError::Finished);
        }
        let tick = self.tick;

        for (i, plan) in self.scenario.devices.iter().enumerate() {
            self.positions[i] = plan.position(tick);
        }

        for (i, plan) in self.scenario.devices.iter().enumerate() {
            while self.pending[i].front().is_some_and(|(t, _)| *t == tick) {
                let (_, record) = self.pending[i].pop_front().expect("front checked");
                let id = record.id.clone();
                let node = &mut self.devices[i];
                insert_local(&mut node.store, record, &mut node.ledger)
                    .map_err(|source| SimError::Sync { tick, source })?;
                self.trace.events.push(TraceEvent::Enter {
                    tick,
                    device: plan.device_id.clone(),
                    record_id: id,
                });
            }
        }

        let edge_at = Point::new(self.scenario.edge.x_m, self.scenario.edge.y_m);
        for (i, plan) in self.scenario.devices.iter().enumerate() {
            if self.positions[i].distance(edge_at) > self.scenario.edge.range_m {
                continue;
            }
            let node = &mut self.devices[i];
            let result = sync_session_traced(
                &mut node.store,
                &mut node.ledger,
                &mut node.cursors,
                &mut self.edge.store,
            );
            if let Ok((_, ids)) = &result {
                for id in &ids.pushed {
                    self.edge.ledger.observe(id, FreshnessState::EdgeCached);
                }
            }
            Self::record_session(&mut self.trace, tick, &plan.device_id, EDGE_ID, result)?;
        }

        if tick % self.scenario.edge_sync_interval == 0 && self.scenario.cloud_up(tick) {
            let edge = &mut self.edge;
            let result =
                sync_session_traced(&mut edge.store, &mut edge.ledger, &mut edge.cursors, &mut self.cloud);
            Self::record_session(&mut self.trace, tick, EDGE_ID, CLOUD_ID, result)?;
        }

        for (i, plan) in self.scenario.devices.iter().enumerate() {
            if !plan.cloud_links.iter().any(|w| w.contains(tick)) {
                continue;
            }
            let node = &mut self.devices[i];
            let result =
                sync_session_traced(&mut node.store, &mut node.ledger, &mut node.cursors, &mut self.cloud);
            Self::record_session(&mut self.trace, tick, &plan.device_id, CLOUD_ID, result)?;
        }

        self.tick += 1;
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> SimOutcome {
        let report = ConvergenceReport::compute(
            self.devices
                .iter()
                .map(|n| &n.store)
                .chain([&self.edge.store, &self.cloud]),
        );
        SimOutcome {
            devices: self.devices,
            edge: self.edge,
            cloud: self.cloud,
            trace: self.trace,
            report,
        }
    }
}

pub struct SimOutcome {
    pub devices: Vec<Node>,
    pub edge: Node,
    pub cloud: TierStore,
    pub trace: Trace,
    pub report: ConvergenceReport,
}

impl SimOutcome {
    pub fn stores(&self) -> impl Iterator<Item = &TierStore> + '_ {
        self.devices
            .iter()
            .map(|n| &n.store)
            .chain([&self.edge.store, &self.cloud])
    }
}

/// Runs the whole scenario.
pub fn run(scenario: Scenario) -> Result<SimOutcome, SimError> {
    let mut sim = Simulator::new(scenario)?;
    sim.run_to_end()?;
    Ok(sim.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Straggler {
    pub store: String,
    pub missing: Vec<RecordId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Every store holds the same id set.
    pub converged: bool,
    /// Every device holds exactly the edge's id set.
    pub devices_match_edge: bool,
    pub edge_matches_cloud: bool,
    pub records: usize,
    pub stragglers: Vec<Straggler>,
}

impl ConvergenceReport {
    /// Compares stores against the union of their ids. The last two stores
    /// must be the edge and the cloud.
    pub fn compute<'a>(stores: impl IntoIterator<Item = &'a TierStore>) -> Self {
        let stores: Vec<&TierStore> = stores.into_iter().collect();
        let sets: Vec<BTreeSet<&RecordId>> = stores.iter().map(|s| s.ids().collect()).collect();
        let union: BTreeSet<&RecordId> = sets.iter().flatten().copied().collect();
        let stragglers: Vec<Straggler> = stores
            .iter()
            .zip(&sets)
            .filter(|(_, set)| set.len() != union.len())
            .map(|(s, set)| Straggler {
                store: s.store_id().to_string(),
                missing: union.difference(set).map(|id| (*id).clone()).collect(),
            })
            .collect();
        let n = sets.len();
        let (edge, cloud) = (n.checked_sub(2), n.checked_sub(1));
        let devices_match_edge = match edge {
            Some(e) => sets[..e].iter().all(|s| *s == sets[e]),
            None => true,
        };
        let edge_matches_cloud = match (edge, cloud) {
            (Some(e), Some(c)) => sets[e] == sets[c],
            _ => true,
        };
        ConvergenceReport {
            converged: stragglers.is_empty(),
            devices_match_edge,
            edge_matches_cloud,
            records: union.len(),
            stragglers,
        }
    }
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "converged: {}", self.converged)?;
        writeln!(f, "devices_match_edge: {}", self.devices_match_edge)?;
        writeln!(f, "edge_matches_cloud: {}", self.edge_matches_cloud)?;
        writeln!(f, "records: {}", self.records)?;
        writeln!(f, "stragglers: {}", self.stragglers.len())?;
        for s in &self.stragglers {
            writeln!(f, "  {:<16} missing {}", s.store, s.missing.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub tick: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub events: usize,
    pub ledger_monotonicity: Option<Violation>,
    pub unique_ids: Option<Violation>,
    pub exactly_once: Option<Violation>,
    pub tick_order: Option<Violation>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.ledger_monotonicity.is_none()
            && self.unique_ids.is_none()
            && self.exactly_once.is_none()
            && self.tick_order.is_none()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        [&self.tick_order, &self.ledger_monotonicity, &self.unique_ids, &self.exactly_once]
            .into_iter()
            .flatten()
            .min_by_key(|v| v.tick)
    }
}

/// Checks the protocol properties a trace must satisfy and reports the first
/// violation of each.
pub fn check_trace(trace: &Trace) -> PropertyReport {
    let mut report = PropertyReport {
        events: trace.events.len(),
        ..Default::default()
    };
    let mut states: HashMap<(&str, &RecordId), FreshnessState> = HashMap::new();
    let mut entered: HashSet<&RecordId> = HashSet::new();
    let mut held: HashSet<(&str, &RecordId)> = HashSet::new();
    let mut last_tick = 0;

    fn note(slot: &mut Option<Violation>, tick: u64, detail: String) {
        if slot.is_none() {
            *slot = Some(Violation { tick, detail });
        }
    }

    for event in &trace.events {
        let tick = event.tick();
        if tick < last_tick {
            note(&mut report.tick_order, tick, format!("tick {tick} after {last_tick}"));
        }
        last_tick = last_tick.max(tick);
        match event {
            TraceEvent::Enter { device, record_id, .. } => {
                if !entered.insert(record_id) {
                    note(&mut report.unique_ids, tick, format!("{record_id} entered twice"));
                }
                if !held.insert((device.as_str(), record_id)) {
                    note(&mut report.exactly_once, tick, format!("{record_id} re-added at {device}"));
                }
                states.insert((device.as_str(), record_id), FreshnessState::Unsynced);
            }
            TraceEvent::Sync {
                a, b, pushed_ids, pulled_ids, ..
            } => {
                for (store, ids) in [(b, pushed_ids), (a, pulled_ids)] {
                    for id in ids {
                        if !held.insert((store.as_str(), id)) {
                            note(
                                &mut report.exactly_once,
                                tick,
                                format!("{id} delivered to {store} more than once"),
                            );
                        }
                    }
                }
            }
            TraceEvent::Promote {
                device,
                record_id,
                state,
                ..
            } => {
                let key = (device.as_str(), record_id);
                if let Some(prev) = states.get(&key) {
                    if state < prev {
                        note(
                            &mut report.ledger_monotonicity,
                            tick,
                            format!("{record_id} on {device}: {prev} -> {state}"),
                        );
                    }
                }
                let next = states.get(&key).map_or(*state, |p| (*p).max(*state));
                states.insert(key, next);
            }
        }
    }
    report
}

/// Rebuilds every store from a trace alone, using the scenario only for
/// record payloads. Stores are returned devices first, then edge and cloud.
pub fn replay_trace(scenario: &Scenario, trace: &Trace) -> Result<Vec<TierStore>, SyncError> {
    let payloads: HashMap<RecordId, Record> = scenario
        .records()
        .map_err(|e| SyncError::Protocol(e.to_string()))?
        .into_iter()
        .flatten()
        .map(|r| (r.id.clone(), r))
        .collect();
    let mut stores: Vec<TierStore> = scenario
        .devices
        .iter()
        .map(|d| TierStore::new(Tier::Device, &d.device_id))
        .chain([TierStore::new(Tier::Edge, EDGE_ID), TierStore::new(Tier::Cloud, CLOUD_ID)])
        .collect();
    let index: HashMap<String, usize> = stores
        .iter()
        .enumerate()
        .map(|(i, s)| (s.store_id().to_string(), i))
        .collect();
    let lookup = |store: &str| {
        index
            .get(store)
            .copied()
            .ok_or_else(|| SyncError::Protocol(format!("unknown store {store}")))
    };
    let payload = |id: &RecordId| {
        payloads
            .get(id)
            .cloned()
            .ok_or_else(|| SyncError::UnknownRecord(id.clone()))
    };
    for event in &trace.events {
        match event {
            TraceEvent::Enter { device, record_id, .. } => {
                let i = lookup(device)?;
                stores[i].merge(&[payload(record_id)?])?;
            }
            TraceEvent::Sync {
                a, b, pushed_ids, pulled_ids, ..
            } => {
                let pushed: Vec<Record> = pushed_ids.iter().map(payload).collect::<Result<_, _>>()?;
                let pulled: Vec<Record> = pulled_ids.iter().map(payload).collect::<Result<_, _>>()?;
                let (ia, ib) = (lookup(a)?, lookup(b)?);
                stores[ib].merge(&pushed)?;
                stores[ia].merge(&pulled)?;
            }
            TraceEvent::Promote { .. } => {}
        }
    }
    Ok(stores)
}

/// Bounds for [`random_scenario`].
#[derive(Debug, Clone)]
pub struct RandomScenarioParams {
    pub max_devices: usize,
    pub max_ticks: u64,
    pub max_records: usize,
}

impl Default for RandomScenarioParams {
    fn default() -> Self {
        RandomScenarioParams {
            max_devices: 5,
            max_ticks: 500,
            max_records: 200,
        }
    }
}

/// Seeded random scenario that ends with a full-connectivity epoch of
/// `2 * edge_sync_interval + 2` ticks: every device parked at the edge and
/// the cloud up. All data entry happens before that epoch.
pub fn random_scenario(seed: u64, params: &RandomScenarioParams, schema: &Schema, field: &str) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interval = rng.random_range(1..=5u64);
    let epoch = 2 * interval + 2;
    let ticks = rng.random_range((epoch + 20).min(params.max_ticks)..=params.max_ticks.max(epoch + 1));
    let quiet_from = ticks - epoch;
    let n_devices = rng.random_range(1..=params.max_devices.max(1));
    let n_records = rng.random_range(0..=params.max_records);
    let edge = EdgePlan {
        x_m: 50.0,
        y_m: 50.0,
        range_m: 100.0,
    };
    let grid = GridSpec {
        origin_lat: 40.0,
        origin_lon: -105.0,
        cell_size_m: 20.0,
        rows: 5,
        cols: 5,
        target_per_cell: 2,
    };

    let mut counts = vec![0usize; n_devices];
    for _ in 0..n_records {
        counts[rng.random_range(0..n_devices)] += 1;
    }
    let numeric_range = schema
        .field(field)
        .and_then(|f| f.numeric_range)
        .unwrap_or([0.0, 100.0]);
    let value = |rng: &mut ChaCha8Rng| -> BTreeMap<String, Value> {
        let spec = schema.field(field).filter(|f| f.kind == FieldKind::Numeric);
        let mut values = BTreeMap::new();
        if spec.is_some() {
            let v = rng.random_range(numeric_range[0]..=numeric_range[1]);
            values.insert(field.to_string(), Value::Number((v * 10.0).round() / 10.0));
        }
        values
    };

    let mut devices = Vec::with_capacity(n_devices);
    for (d, &n) in counts.iter().enumerate() {
        let mut wp_ticks: BTreeSet<u64> = BTreeSet::new();
        for _ in 0..rng.random_range(1..=6) {
            wp_ticks.insert(rng.random_range(0..quiet_from.max(1)));
        }
        let mut waypoints: Vec<Waypoint> = wp_ticks
            .into_iter()
            .filter(|t| *t < quiet_from)
            .map(|t| Waypoint(t, rng.random_range(-250.0..350.0), rng.random_range(-250.0..350.0)))
            .collect();
        waypoints.push(Waypoint(quiet_from, edge.x_m, edge.y_m));
        let entries = (0..n)
            .map(|_| Entry {
                tick: rng.random_range(0..quiet_from.max(1)),
                values: value(&mut rng),
            })
            .collect();
        let cloud_links = if rng.random_bool(0.3) && quiet_from > 2 {
            let s = rng.random_range(0..quiet_from - 1);
            let e = rng.random_range(s + 1..=quiet_from);
            vec![Window(s, e)]
        } else {
            vec![]
        };
        devices.push(DevicePlan {
            device_id: format!("dev{d}"),
            team: format!("team{}", d % 2),
            waypoints,
            entries,
            cloud_links,
        });
    }

    let mut cloud_uptime = Vec::new();
    let mut t = 0;
    while t < quiet_from {
        let gap = rng.random_range(1..=40);
        let up = rng.random_range(1..=40);
        let start = t + gap;
        let end = (start + up).min(quiet_from);
        if start < end {
            cloud_uptime.push(Window(start, end));
        }
        t = end.max(start);
    }
    match cloud_uptime.last_mut() {
        Some(last) if last.1 == quiet_from => last.1 = ticks,
        _ => cloud_uptime.push(Window(quiet_from, ticks)),
    }

    Scenario {
        name: format!("random-{seed}"),
        seed,
        ticks,
        grid,
        schema: schema.clone(),
        devices,
        edge,
        cloud_uptime,
        edge_sync_interval: interval,
    }
}
