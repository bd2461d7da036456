//! Client-side middleware: tracks position and section, gathers access metadata and
//! geo-hints, and hands the edge node a compact report.
//!
//! Raw position history never leaves the client; a report carries only section
//! transitions, access counts and inter-access intervals, pending hints and the last
//! few position samples needed for dead reckoning.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{AccessKind, KeygroupId};
use crate::topology::{NodeId, Point, Topology, TopologyError};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("non-monotonic trace: time {at} precedes {last}")]
    NonMonotonic { at: f64, last: f64 },
    #[error("malformed hint: {0}")]
    MalformedHint(&'static str),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub client: ClientId,
    pub keygroup: KeygroupId,
    pub at: f64,
    pub node: NodeId,
    pub kind: AccessKind,
}

/// Application hint that the client expects to be near `target` during `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoHint {
    pub target: NodeId,
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
}

impl GeoHint {
    pub fn new(target: NodeId, start: f64, end: f64, confidence: f64) -> Result<Self, ClientError> {
        let hint = GeoHint {
            target,
            start,
            end,
            confidence,
        };
        hint.check()?;
        Ok(hint)
    }

    fn check(&self) -> Result<(), ClientError> {
        if !(self.start.is_finite() && self.end.is_finite()) {
            return Err(ClientError::MalformedHint("window bounds must be finite"));
        }
        if !(self.start < self.end) {
            return Err(ClientError::MalformedHint("window start must precede end"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(ClientError::MalformedHint("confidence must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn overlaps(&self, from: f64, to: f64) -> bool {
        self.start <= to && self.end >= from
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTransition {
    pub from: NodeId,
    pub to: NodeId,
    pub at: f64,
    /// The sections are not adjacent: the client disconnected and reappeared elsewhere.
    pub teleport: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionSample {
    pub at: f64,
    pub position: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HistoryEntry {
    at: f64,
    position: Point,
    node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub history_capacity: usize,
    pub velocity_samples: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            history_capacity: 32,
            velocity_samples: 5,
        }
    }
}

/// What the middleware relays to the edge node of the client's current section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MiddlewareReport {
    pub client: ClientId,
    /// Addressee: the client's current node when the report was flushed.
    pub to: NodeId,
    pub at: f64,
    pub recent_transitions: Vec<NodeTransition>,
    pub access_counts: BTreeMap<KeygroupId, u64>,
    /// Inter-access intervals (seconds) observed since the previous report.
    pub access_intervals: BTreeMap<KeygroupId, Vec<f64>>,
    pub hints: Vec<GeoHint>,
    pub velocity_samples: Vec<PositionSample>,
}

impl MiddlewareReport {
    pub fn is_empty(&self) -> bool {
        self.recent_transitions.is_empty() && self.access_counts.is_empty() && self.hints.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    position: Point,
    current_node: NodeId,
    history: VecDeque<HistoryEntry>,
    config: ClientConfig,
    pending_hints: Vec<GeoHint>,
    pending_transitions: Vec<NodeTransition>,
    pending_counts: BTreeMap<KeygroupId, u64>,
    pending_intervals: BTreeMap<KeygroupId, Vec<f64>>,
    last_access: BTreeMap<KeygroupId, f64>,
    last_record_at: Option<f64>,
    hints_dropped: u64,
}

impl ClientState {
    pub fn new(
        id: ClientId,
        position: Point,
        at: f64,
        topology: &Topology,
        config: ClientConfig,
    ) -> Self {
        let node = topology.closest_node(position);
        let mut history = VecDeque::with_capacity(config.history_capacity.max(1));
        history.push_back(HistoryEntry { at, position, node });
        ClientState {
            id,
            position,
            current_node: node,
            history,
            config,
            pending_hints: Vec::new(),
            pending_transitions: Vec::new(),
            pending_counts: BTreeMap::new(),
            pending_intervals: BTreeMap::new(),
            last_access: BTreeMap::new(),
            last_record_at: None,
            hints_dropped: 0,
        }
    }

    pub fn position(&self) -> Point {
        self.position
    }

    pub fn current_node(&self) -> NodeId {
        self.current_node
    }

    pub fn hints_dropped(&self) -> u64 {
        self.hints_dropped
    }

    pub fn pending_hints(&self) -> &[GeoHint] {
        &self.pending_hints
    }

    fn last_seen(&self) -> f64 {
        self.history.back().map_or(f64::NEG_INFINITY, |h| h.at)
    }

    /// Records a new position; returns the section change, if any.
    pub fn move_to(
        &mut self,
        position: Point,
        at: f64,
        topology: &Topology,
    ) -> Result<Option<NodeTransition>, ClientError> {
        let last = self.last_seen();
        if at < last {
            return Err(ClientError::NonMonotonic { at, last });
        }
        let node = topology.closest_node(position);
        if self.history.len() == self.config.history_capacity.max(1) {
            self.history.pop_front();
        }
        self.history.push_back(HistoryEntry { at, position, node });
        self.position = position;

        if node == self.current_node {
            return Ok(None);
        }
        let from = self.current_node;
        self.current_node = node;
        let transition = NodeTransition {
            from,
            to: node,
            at,
            teleport: !topology.is_adjacent_move(from, node)?,
        };
        self.pending_transitions.push(transition);
        Ok(Some(transition))
    }

    pub fn record_access(
        &mut self,
        keygroup: KeygroupId,
        kind: AccessKind,
        at: f64,
    ) -> Result<AccessRecord, ClientError> {
        if let Some(last) = self.last_record_at {
            if at < last {
                return Err(ClientError::NonMonotonic { at, last });
            }
        }
        self.last_record_at = Some(at);
        *self.pending_counts.entry(keygroup).or_default() += 1;
        if let Some(prev) = self.last_access.insert(keygroup, at) {
            let interval = at - prev;
            if interval > 0.0 {
                self.pending_intervals
                    .entry(keygroup)
                    .or_default()
                    .push(interval);
            }
        }
        Ok(AccessRecord {
            client: self.id,
            keygroup,
            at,
            node: self.current_node,
            kind,
        })
    }

    pub fn submit_hint(&mut self, hint: GeoHint) -> Result<(), ClientError> {
        hint.check()?;
        self.pending_hints.push(hint);
        Ok(())
    }

    /// Everything gathered since the previous flush; accumulators start over afterwards.
    /// Hints whose window already ended are dropped and counted.
    pub fn flush_report(&mut self, now: f64) -> MiddlewareReport {
        let (live, expired): (Vec<_>, Vec<_>) =
            self.pending_hints.drain(..).partition(|h| h.end >= now);
        self.hints_dropped += expired.len() as u64;

        let k = self.config.velocity_samples;
        let skip = self.history.len().saturating_sub(k);
        let velocity_samples = self
            .history
            .iter()
            .skip(skip)
            .map(|h| PositionSample {
                at: h.at,
                position: h.position,
            })
            .collect();

        MiddlewareReport {
            client: self.id,
            to: self.current_node,
            at: now,
            recent_transitions: std::mem::take(&mut self.pending_transitions),
            access_counts: std::mem::take(&mut self.pending_counts),
            access_intervals: std::mem::take(&mut self.pending_intervals),
            hints: live,
            velocity_samples,
        }
    }
}
