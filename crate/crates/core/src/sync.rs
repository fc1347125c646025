//! Three-tier replication: grow-only record sets exchanged as cursor deltas.
//!
//! Each tier (device, edge, cloud) holds a [`TierStore`]. A session between a
//! local store and a peer pushes the local delta the peer has not seen, pulls
//! the peer's delta, and promotes the local [`FreshnessLedger`] for every
//! record the peer is now known to hold.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Record, RecordId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("PayloadConflict {0}: same id, different payload")]
    PayloadConflict(RecordId),
    #[error("PeerUnreachable {0}")]
    PeerUnreachable(String),
    #[error("UnknownRecord {0}")]
    UnknownRecord(RecordId),
    #[error("peer protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    Device,
    Edge,
    Cloud,
}

impl Tier {
    /// Freshness implied by a copy of a record living on this tier.
    pub fn implied_freshness(self) -> FreshnessState {
        match self {
            Tier::Device => FreshnessState::Unsynced,
            Tier::Edge => FreshnessState::EdgeCached,
            Tier::Cloud => FreshnessState::Remote,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Device => "DEVICE",
            Tier::Edge => "EDGE",
            Tier::Cloud => "CLOUD",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FreshnessState {
    Unsynced,
    EdgeCached,
    Remote,
}

impl FreshnessState {
    pub fn as_str(self) -> &'static str {
        match self {
            FreshnessState::Unsynced => "UNSYNCED",
            FreshnessState::EdgeCached => "EDGE_CACHED",
            FreshnessState::Remote => "REMOTE",
        }
    }

    pub fn color(self) -> ColorClass {
        match self {
            FreshnessState::Unsynced => ColorClass::Red,
            FreshnessState::EdgeCached => ColorClass::Green,
            FreshnessState::Remote => ColorClass::Blue,
        }
    }
}

impl fmt::Display for FreshnessState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Display class of a record's freshness: red unsynced, green edge-cached, blue remote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorClass {
    Red,
    Green,
    Blue,
}

impl ColorClass {
    pub fn letter(self) -> char {
        match self {
            ColorClass::Red => 'R',
            ColorClass::Green => 'G',
            ColorClass::Blue => 'B',
        }
    }
}

/// Append-only record set with a store-local insertion sequence.
#[derive(Debug, Clone)]
pub struct TierStore {
    tier: Tier,
    store_id: String,
    records: HashMap<RecordId, Record>,
    seq: HashMap<RecordId, u64>,
    // order[i] holds the id with seq i + 1
    order: Vec<RecordId>,
}

impl TierStore {
    pub fn new(tier: Tier, store_id: impl Into<String>) -> Self {
        TierStore {
            tier,
            store_id: store_id.into(),
            records: HashMap::new(),
            seq: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn store_id(&self) -> &str {
        &self.store_id
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.order.len() as u64 + 1
    }

    pub fn max_seq(&self) -> u64 {
        self.order.len() as u64
    }

    pub fn get(&self, id: &RecordId) -> Option<&Record> {
        self.records.get(id)
    }

    pub fn contains(&self, id: &RecordId) -> bool {
        self.records.contains_key(id)
    }

    pub fn seq_of(&self, id: &RecordId) -> Option<u64> {
        self.seq.get(id).copied()
    }

    /// Records in insertion (seq) order.
    pub fn iter(&self) -> impl Iterator<Item = &Record> + '_ {
        self.order.iter().map(move |id| &self.records[id])
    }

    pub fn ids(&self) -> impl Iterator<Item = &RecordId> + '_ {
        self.order.iter()
    }

    pub fn id_set(&self) -> HashSet<RecordId> {
        self.order.iter().cloned().collect()
    }

    /// Checks whether adding `record` would collide with a different payload already stored.
    pub fn check(&self, record: &Record) -> Result<bool, SyncError> {
        match self.records.get(&record.id) {
            None => Ok(true),
            Some(existing) if existing.canonical_bytes() == record.canonical_bytes() => Ok(false),
            Some(_) => Err(SyncError::PayloadConflict(record.id.clone())),
        }
    }

    /// Which records of `batch` are new, after rejecting the whole batch on any conflict.
    ///
    /// Duplicates inside the batch count once; the first occurrence wins.
    pub fn plan_merge<'a>(&self, batch: &'a [Record]) -> Result<Vec<&'a Record>, SyncError> {
        let mut fresh: Vec<&Record> = Vec::new();
        let mut in_batch: HashMap<&RecordId, &Record> = HashMap::new();
        for r in batch {
            if let Some(prev) = in_batch.get(&r.id) {
                if prev.canonical_bytes() != r.canonical_bytes() {
                    return Err(SyncError::PayloadConflict(r.id.clone()));
                }
                continue;
            }
            in_batch.insert(&r.id, r);
            if self.check(r)? {
                fresh.push(r);
            }
        }
        Ok(fresh)
    }

    // Caller guarantees the id is new.
    fn append(&mut self, record: Record) -> u64 {
        let seq = self.next_seq();
        self.seq.insert(record.id.clone(), seq);
        self.order.push(record.id.clone());
        self.records.insert(record.id.clone(), record);
        seq
    }

    /// Set union with `batch`; new records get fresh seqs in batch order.
    ///
    /// All-or-nothing: a conflict anywhere in the batch leaves the store untouched.
    pub fn merge(&mut self, batch: &[Record]) -> Result<Vec<RecordId>, SyncError> {
        let fresh: Vec<Record> = self.plan_merge(batch)?.into_iter().cloned().collect();
        Ok(fresh
            .into_iter()
            .map(|r| {
                let id = r.id.clone();
                self.append(r);
                id
            })
            .collect())
    }

    /// Records with seq greater than the cursor, in seq order, plus the advanced cursor.
    pub fn delta_since(&self, cursor: &SyncCursor) -> (Vec<Record>, SyncCursor) {
        let start = cursor.last_seq_seen.min(self.max_seq()) as usize;
        let batch: Vec<Record> = self.order[start..]
            .iter()
            .map(|id| self.records[id].clone())
            .collect();
        let next = if batch.is_empty() {
            cursor.clone()
        } else {
            SyncCursor {
                peer_store_id: cursor.peer_store_id.clone(),
                last_seq_seen: self.max_seq(),
            }
        };
        (batch, next)
    }
}

/// Adds a record authored on this node.
///
/// Returns whether the record was new. Re-inserting an identical payload is a no-op.
pub fn insert_local(
    store: &mut TierStore,
    record: Record,
    ledger: &mut FreshnessLedger,
) -> Result<bool, SyncError> {
    if !store.check(&record)? {
        return Ok(false);
    }
    let id = record.id.clone();
    store.append(record);
    ledger.observe(&id, store.tier().implied_freshness());
    Ok(true)
}

/// Position in a peer's sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncCursor {
    pub peer_store_id: String,
    pub last_seq_seen: u64,
}

impl SyncCursor {
    pub fn start(peer_store_id: impl Into<String>) -> Self {
        SyncCursor {
            peer_store_id: peer_store_id.into(),
            last_seq_seen: 0,
        }
    }

    /// Moves forward to `other`, never backward.
    pub fn advance(&mut self, other: &SyncCursor) {
        self.last_seq_seen = self.last_seq_seen.max(other.last_seq_seen);
    }
}

/// Per-peer cursors kept by the local side of a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CursorBook {
    /// How far into the local sequence each peer has acknowledged.
    pub pushed: BTreeMap<String, u64>,
    /// How far into each peer's sequence we have pulled.
    pub pulled: BTreeMap<String, u64>,
}

impl CursorBook {
    pub fn push_cursor(&self, peer: &str) -> SyncCursor {
        SyncCursor {
            peer_store_id: peer.to_string(),
            last_seq_seen: self.pushed.get(peer).copied().unwrap_or(0),
        }
    }

    pub fn pull_cursor(&self, peer: &str) -> SyncCursor {
        SyncCursor {
            peer_store_id: peer.to_string(),
            last_seq_seen: self.pulled.get(peer).copied().unwrap_or(0),
        }
    }

    fn bump(map: &mut BTreeMap<String, u64>, peer: &str, seq: u64) {
        let slot = map.entry(peer.to_string()).or_insert(0);
        *slot = (*slot).max(seq);
    }
}

/// Per-node freshness of every record the node knows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshnessLedger {
    entries: BTreeMap<RecordId, FreshnessState>,
}

impl FreshnessLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &RecordId) -> Option<FreshnessState> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RecordId, FreshnessState)> + '_ {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    /// Records `state` for `id` unless the ledger already holds an equal or higher one.
    /// Returns the new state when it changed an existing entry upward.
    pub fn observe(&mut self, id: &RecordId, state: FreshnessState) -> Option<FreshnessState> {
        match self.entries.get_mut(id) {
            None => {
                self.entries.insert(id.clone(), state);
                None
            }
            Some(cur) if *cur < state => {
                *cur = state;
                Some(state)
            }
            Some(_) => None,
        }
    }
}

pub fn classify_freshness(ledger: &FreshnessLedger, id: &RecordId) -> Result<ColorClass, SyncError> {
    ledger
        .get(id)
        .map(FreshnessState::color)
        .ok_or_else(|| SyncError::UnknownRecord(id.clone()))
}

/// Peer reply to a pushed batch. Both lists acknowledge possession.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted_ids: Vec<RecordId>,
    pub known_ids: Vec<RecordId>,
}

/// Peer reply to a pull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub records: Vec<Record>,
    pub cursor: u64,
}

/// Remote end of a sync session.
pub trait SyncPeer {
    fn store_id(&self) -> String;
    fn tier(&self) -> Tier;
    fn push(&mut self, batch: &[Record]) -> Result<Ack, SyncError>;
    fn pull(&mut self, after: u64) -> Result<Delta, SyncError>;
}

/// An in-process store acting as a peer, as the edge and cloud do in simulation.
impl SyncPeer for TierStore {
    fn store_id(&self) -> String {
        self.store_id.clone()
    }

    fn tier(&self) -> Tier {
        self.tier
    }

    fn push(&mut self, batch: &[Record]) -> Result<Ack, SyncError> {
        let accepted = self.merge(batch)?;
        let fresh: HashSet<&RecordId> = accepted.iter().collect();
        let mut seen = HashSet::new();
        let known_ids = batch
            .iter()
            .filter(|r| !fresh.contains(&r.id) && seen.insert(&r.id))
            .map(|r| r.id.clone())
            .collect();
        Ok(Ack {
            accepted_ids: accepted,
            known_ids,
        })
    }

    fn pull(&mut self, after: u64) -> Result<Delta, SyncError> {
        let (records, cursor) = self.delta_since(&SyncCursor {
            peer_store_id: String::new(),
            last_seq_seen: after,
        });
        Ok(Delta {
            records,
            cursor: cursor.last_seq_seen,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub peer: String,
    pub pushed: usize,
    pub pulled: usize,
    pub promoted: Vec<(RecordId, FreshnessState)>,
    pub duration_ticks: u64,
}

impl SyncReport {
    pub fn is_quiet(&self) -> bool {
        self.pushed == 0 && self.pulled == 0 && self.promoted.is_empty()
    }
}

impl fmt::Display for SyncReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pushed {}, pulled {}", self.pushed, self.pulled)?;
        let mut by_state: BTreeMap<FreshnessState, usize> = BTreeMap::new();
        for (_, s) in &self.promoted {
            *by_state.entry(*s).or_default() += 1;
        }
        for (state, n) in by_state {
            write!(f, ", promoted {n}\u{2192}{state}")?;
        }
        Ok(())
    }
}

/// Ids moved during a session, for tracing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionIds {
    /// Newly added at the peer.
    pub pushed: Vec<RecordId>,
    /// Newly added locally.
    pub pulled: Vec<RecordId>,
}

/// The push half of a session: local delta for `peer`, and the cursor to
/// record once the peer acknowledges it.
pub fn plan_push(local: &TierStore, cursors: &CursorBook, peer: &str) -> (Vec<Record>, SyncCursor) {
    local.delta_since(&cursors.push_cursor(peer))
}

/// Everything a session observed on the wire.
#[derive(Debug, Clone)]
pub struct SessionOutcome<'a> {
    pub peer_id: &'a str,
    pub peer_tier: Tier,
    pub push_cursor: SyncCursor,
    pub ack: Ack,
    pub pulled: &'a [Record],
    pub pull_cursor: u64,
    /// Ids from `pulled` that the local merge added.
    pub newly_added: &'a [RecordId],
}

/// Commits a finished session: cursors advance and ledger entries rise to
/// what the peer's possession implies.
pub fn conclude_session(
    local: &TierStore,
    ledger: &mut FreshnessLedger,
    cursors: &mut CursorBook,
    outcome: SessionOutcome<'_>,
) -> SyncReport {
    let peer_state = outcome.peer_tier.implied_freshness();
    let own_state = local.tier().implied_freshness();
    let fresh: HashSet<&RecordId> = outcome.newly_added.iter().collect();

    // Pulled records enter at whatever the peer's copy implies.
    for id in outcome.newly_added {
        ledger.observe(id, peer_state.max(own_state));
    }

    let mut promoted = Vec::new();
    let mut seen = HashSet::new();
    let acked = outcome
        .ack
        .accepted_ids
        .iter()
        .chain(&outcome.ack.known_ids)
        .chain(outcome.pulled.iter().map(|r| &r.id));
    for id in acked {
        if fresh.contains(id) || !seen.insert(id) || !local.contains(id) {
            continue;
        }
        if ledger.get(id).is_none() {
            ledger.observe(id, own_state);
        }
        if let Some(state) = ledger.observe(id, peer_state) {
            promoted.push((id.clone(), state));
        }
    }

    CursorBook::bump(&mut cursors.pushed, outcome.peer_id, outcome.push_cursor.last_seq_seen);
    CursorBook::bump(&mut cursors.pulled, outcome.peer_id, outcome.pull_cursor);

    SyncReport {
        peer: outcome.peer_id.to_string(),
        pushed: outcome.ack.accepted_ids.len(),
        pulled: outcome.newly_added.len(),
        promoted,
        duration_ticks: 0,
    }
}

/// Runs one bidirectional session against `peer`.
///
/// On any error the local store, ledger and cursors are left unchanged.
pub fn sync_session(
    local: &mut TierStore,
    ledger: &mut FreshnessLedger,
    cursors: &mut CursorBook,
    peer: &mut dyn SyncPeer,
) -> Result<SyncReport, SyncError> {
    sync_session_traced(local, ledger, cursors, peer).map(|(report, _)| report)
}

pub fn sync_session_traced(
    local: &mut TierStore,
    ledger: &mut FreshnessLedger,
    cursors: &mut CursorBook,
    peer: &mut dyn SyncPeer,
) -> Result<(SyncReport, SessionIds), SyncError> {
    let peer_id = peer.store_id();
    let (batch, push_cursor) = plan_push(local, cursors, &peer_id);
    let ack = if batch.is_empty() {
        Ack::default()
    } else {
        peer.push(&batch)?
    };
    let delta = peer.pull(cursors.pull_cursor(&peer_id).last_seq_seen)?;
    let newly_added = local.merge(&delta.records)?;
    let pushed = ack.accepted_ids.clone();
    let report = conclude_session(
        local,
        ledger,
        cursors,
        SessionOutcome {
            peer_id: &peer_id,
            peer_tier: peer.tier(),
            push_cursor,
            ack,
            pulled: &delta.records,
            pull_cursor: delta.cursor,
            newly_added: &newly_added,
        },
    );
    Ok((
        report,
        SessionIds {
            pushed,
            pulled: newly_added,
        },
    ))
}
