//! Mobility/access traces: the CSV row format and synthetic generators.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientId, GeoHint};
use crate::store::KeygroupId;
use crate::topology::{NodeId, Point, Topology};

pub const TRACE_HEADER: &str = "client_id,t,x,y,access_kg,hint_node,hint_start,hint_end,hint_conf";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("nodes {0} and {1} are consecutive in the commute but not adjacent")]
    NonAdjacentSequence(NodeId, NodeId),
}

/// One position sample, optionally with an access and/or a geo-hint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub client_id: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub access_kg: Option<u32>,
    pub hint_node: Option<u32>,
    pub hint_start: Option<f64>,
    pub hint_end: Option<f64>,
    pub hint_conf: Option<f64>,
}

impl TraceRow {
    pub fn new(client: ClientId, t: f64, position: Point) -> Self {
        TraceRow {
            client_id: client.0,
            t,
            x: position.x,
            y: position.y,
            access_kg: None,
            hint_node: None,
            hint_start: None,
            hint_end: None,
            hint_conf: None,
        }
    }

    pub fn with_access(mut self, keygroup: KeygroupId) -> Self {
        self.access_kg = Some(keygroup.0);
        self
    }

    pub fn with_hint(mut self, hint: GeoHint) -> Self {
        self.hint_node = Some(hint.target.0);
        self.hint_start = Some(hint.start);
        self.hint_end = Some(hint.end);
        self.hint_conf = Some(hint.confidence);
        self
    }

    pub fn client(&self) -> ClientId {
        ClientId(self.client_id)
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn access(&self) -> Option<KeygroupId> {
        self.access_kg.map(KeygroupId)
    }

    /// The row's hint; all four hint fields must be present or all absent.
    pub fn hint(&self) -> Result<Option<GeoHint>, String> {
        match (
            self.hint_node,
            self.hint_start,
            self.hint_end,
            self.hint_conf,
        ) {
            (None, None, None, None) => Ok(None),
            (Some(n), Some(s), Some(e), Some(c)) => GeoHint::new(NodeId(n), s, e, c)
                .map(Some)
                .map_err(|e| e.to_string()),
            _ => Err("hint fields must be all present or all empty".into()),
        }
    }
}

/// Structural checks: finite values, consistent hints, per-client time order.
pub fn check_rows(rows: &[TraceRow]) -> Result<(), TraceError> {
    let mut last: BTreeMap<u32, f64> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let err = |msg: String| TraceError::Row { row: i + 1, msg };
        if !(row.t.is_finite() && row.x.is_finite() && row.y.is_finite()) {
            return Err(err("time and position must be finite".into()));
        }
        row.hint().map_err(err)?;
        if let Some(prev) = last.insert(row.client_id, row.t) {
            if row.t < prev {
                return Err(err(format!(
                    "client {} goes back in time ({} < {prev})",
                    row.client_id, row.t
                )));
            }
        }
    }
    Ok(())
}

pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<TraceRow>, csv::Error>>()?;
    check_rows(&rows)?;
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, TraceError> {
    parse_trace(std::fs::File::open(path)?)
}

pub fn write_trace<W: Write>(writer: W, rows: &[TraceRow]) -> Result<(), TraceError> {
    let mut wtr = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        wtr.write_record(TRACE_HEADER.split(','))?;
    }
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn emit_trace(rows: &[TraceRow]) -> Result<String, TraceError> {
    let mut buf = Vec::new();
    write_trace(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// A mobile client and the keygroup it reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Walker {
    pub client: u32,
    pub keygroup: u32,
    pub start_node: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub clients: Vec<Walker>,
    pub duration_s: f64,
    pub dwell_min_s: f64,
    pub dwell_max_s: f64,
    pub access_interval_s: f64,
    /// Max offset of a waypoint from its node's position; 0 puts waypoints on the node.
    #[serde(default)]
    pub jitter_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub client: u32,
    pub at_s: f64,
    pub node: u32,
}

/// Synthetic trace recipes. Every row carries one access by the walker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSpec {
    /// Cycles `nodes` in order, staying `dwell_s` at each.
    CyclicCommuter {
        client: u32,
        keygroup: u32,
        nodes: Vec<u32>,
        dwell_s: f64,
        access_interval_s: f64,
        cycles: u32,
    },
    /// After each dwell, moves to a uniformly chosen neighbor.
    RandomAdjacentWaypoint(WalkParams),
    /// Like the random walk, plus forced jumps at configured times.
    Teleporter {
        #[serde(flatten)]
        walk: WalkParams,
        jumps: Vec<Jump>,
    },
}

impl TraceSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceSpec::CyclicCommuter { .. } => "cyclic_commuter",
            TraceSpec::RandomAdjacentWaypoint(_) => "random_adjacent_waypoint",
            TraceSpec::Teleporter { .. } => "teleporter",
        }
    }
}

/// Generates a trace; identical inputs give identical rows.
pub fn gen_trace(
    spec: &TraceSpec,
    topology: &Topology,
    seed: u64,
) -> Result<Vec<TraceRow>, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = match spec {
        TraceSpec::CyclicCommuter {
            client,
            keygroup,
            nodes,
            dwell_s,
            access_interval_s,
            cycles,
        } => commuter(
            topology,
            ClientId(*client),
            KeygroupId(*keygroup),
            nodes,
            *dwell_s,
            *access_interval_s,
            *cycles,
        )?,
        TraceSpec::RandomAdjacentWaypoint(walk) => random_walk(topology, walk, &[], &mut rng)?,
        TraceSpec::Teleporter { walk, jumps } => random_walk(topology, walk, jumps, &mut rng)?,
    };
    check_rows(&rows)?;
    Ok(rows)
}

fn known(topology: &Topology, id: u32) -> Result<NodeId, TraceError> {
    let node = NodeId(id);
    if topology.contains(node) {
        Ok(node)
    } else {
        Err(TraceError::Params(format!("unknown node {id}")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), TraceError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TraceError::Params(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn commuter(
    topology: &Topology,
    client: ClientId,
    keygroup: KeygroupId,
    nodes: &[u32],
    dwell_s: f64,
    access_interval_s: f64,
    cycles: u32,
) -> Result<Vec<TraceRow>, TraceError> {
    positive("dwell_s", dwell_s)?;
    positive("access_interval_s", access_interval_s)?;
    if nodes.is_empty() {
        return Err(TraceError::Params("commute needs at least one node".into()));
    }
    let seq = nodes
        .iter()
        .map(|&n| known(topology, n))
        .collect::<Result<Vec<_>, _>>()?;
    for i in 0..seq.len() {
        let (a, b) = (seq[i], seq[(i + 1) % seq.len()]);
        if !topology.is_adjacent_move(a, b).expect("nodes checked") {
            return Err(TraceError::NonAdjacentSequence(a, b));
        }
    }
    let per_dwell = (dwell_s / access_interval_s - 1e-9).ceil().max(1.0) as u64;
    let mut rows = Vec::new();
    for d in 0..(u64::from(cycles) * seq.len() as u64) {
        let node = seq[(d % seq.len() as u64) as usize];
        let position = topology.nodes()[node.index()].position;
        let start = d as f64 * dwell_s;
        for j in 0..per_dwell {
            let t = start + j as f64 * access_interval_s;
            rows.push(TraceRow::new(client, t, position).with_access(keygroup));
        }
    }
    Ok(rows)
}

fn waypoint(topology: &Topology, node: NodeId, jitter_m: f64, rng: &mut ChaCha8Rng) -> Point {
    let center = topology.nodes()[node.index()].position;
    if jitter_m > 0.0 {
        for _ in 0..16 {
            let p = Point::new(
                center.x + rng.gen_range(-jitter_m..=jitter_m),
                center.y + rng.gen_range(-jitter_m..=jitter_m),
            );
            if topology.closest_node(p) == node {
                return p;
            }
        }
    }
    center
}

fn random_walk(
    topology: &Topology,
    walk: &WalkParams,
    jumps: &[Jump],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TraceRow>, TraceError> {
    positive("duration_s", walk.duration_s)?;
    positive("access_interval_s", walk.access_interval_s)?;
    positive("dwell_min_s", walk.dwell_min_s)?;
    if !(walk.dwell_max_s >= walk.dwell_min_s && walk.dwell_max_s.is_finite()) {
        return Err(TraceError::Params(
            "dwell_max_s must be >= dwell_min_s".into(),
        ));
    }
    if !(walk.jitter_m >= 0.0) {
        return Err(TraceError::Params("jitter_m must be non-negative".into()));
    }
    for jump in jumps {
        known(topology, jump.node)?;
        if !walk.clients.iter().any(|w| w.client == jump.client) {
            return Err(TraceError::Params(format!(
                "jump for unknown client {}",
                jump.client
            )));
        }
    }

    let steps = (walk.duration_s / walk.access_interval_s + 1e-9).floor() as u64;
    let mut rows = Vec::new();
    for walker in &walk.clients {
        let client = ClientId(walker.client);
        let keygroup = KeygroupId(walker.keygroup);
        let mut node = known(topology, walker.start_node)?;
        let mut planned: Vec<Jump> = jumps
            .iter()
            .filter(|j| j.client == walker.client)
            .copied()
            .collect();
        planned.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        let mut planned = planned.into_iter().peekable();

        let mut dwell_end = rng.gen_range(walk.dwell_min_s..=walk.dwell_max_s);
        let mut position = topology.nodes()[node.index()].position;
        let mut first = true;
        for i in 0..=steps {
            let t = i as f64 * walk.access_interval_s;
            if planned.peek().is_some_and(|j| j.at_s <= t) {
                let jump = planned.next().expect("peeked");
                node = NodeId(jump.node);
                dwell_end = t + rng.gen_range(walk.dwell_min_s..=walk.dwell_max_s);
                position = waypoint(topology, node, walk.jitter_m, rng);
            } else if first {
                position = waypoint(topology, node, walk.jitter_m, rng);
            } else if t >= dwell_end {
                let neighbors: Vec<NodeId> = topology
                    .adjacent_set(node)
                    .expect("node is known")
                    .iter()
                    .copied()
                    .collect();
                if !neighbors.is_empty() {
                    node = neighbors[rng.gen_range(0..neighbors.len())];
                }
                dwell_end = t + rng.gen_range(walk.dwell_min_s..=walk.dwell_max_s);
                position = waypoint(topology, node, walk.jitter_m, rng);
            }
            first = false;
            rows.push(TraceRow::new(client, t, position).with_access(keygroup));
        }
    }
    rows.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(rows)
}

/// Sequence of section changes per client, in time order.
pub fn section_changes(
    rows: &[TraceRow],
    topology: &Topology,
) -> BTreeMap<ClientId, Vec<(f64, NodeId, NodeId)>> {
    let mut current: BTreeMap<ClientId, NodeId> = BTreeMap::new();
    let mut out: BTreeMap<ClientId, Vec<(f64, NodeId, NodeId)>> = BTreeMap::new();
    for row in rows {
        let node = topology.closest_node(row.position());
        if let Some(prev) = current.insert(row.client(), node) {
            if prev != node {
                out.entry(row.client())
                    .or_default()
                    .push((row.t, prev, node));
            }
        }
    }
    out
}
