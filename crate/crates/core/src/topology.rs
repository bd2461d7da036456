//! Fog network model: storage nodes on a plane, their sections, adjacency and latencies.
//!
//! A client belongs to the section (Voronoi cell) of its closest node. Adjacency is
//! declared explicitly and is what movement legality and prediction candidates are
//! checked against; the geometric Voronoi neighborhood is only used to emit warnings.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node identifier, `0..N-1` within a topology.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Jurisdiction label a node lives in. Equality is exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Zone(String);

impl Zone {
    pub fn new(label: impl Into<String>) -> Result<Self, TopologyError> {
        let label = label.into();
        if label.is_empty() {
            return Err(TopologyError::EmptyZone);
        }
        Ok(Zone(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Point) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FogNode {
    pub id: NodeId,
    pub position: Point,
    pub zone: Zone,
    /// Bytes.
    pub storage_capacity: u64,
    /// Client to own-section node, milliseconds.
    pub local_latency_ms: f64,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("zone label must not be empty")]
    EmptyZone,
    #[error("invalid topology: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A single broken topology invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    NonDenseId {
        position: usize,
        id: NodeId,
    },
    EmptyZone(NodeId),
    ZeroCapacity(NodeId),
    NegativeLocalLatency(NodeId),
    NonFinitePosition(NodeId),
    DuplicatePosition(NodeId, NodeId),
    AdjacencyUnknownNode(u32, u32),
    SelfLoop(NodeId),
    AsymmetricAdjacency(NodeId, NodeId),
    Disconnected {
        unreachable: Vec<NodeId>,
    },
    LatencyShape {
        expected: usize,
        actual: usize,
    },
    LocalLatencyMismatch {
        node: NodeId,
        table: f64,
        local: f64,
    },
    AsymmetricLatency(NodeId, NodeId),
    RemoteFasterThanLocal {
        from: NodeId,
        to: NodeId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "topology has no nodes"),
            Violation::NonDenseId { position, id } => {
                write!(
                    f,
                    "node at position {position} has id {id}, ids must be dense 0..N-1"
                )
            }
            Violation::EmptyZone(n) => write!(f, "node {n} has an empty zone label"),
            Violation::ZeroCapacity(n) => write!(f, "node {n} has zero storage capacity"),
            Violation::NegativeLocalLatency(n) => write!(f, "node {n} has negative local latency"),
            Violation::NonFinitePosition(n) => write!(f, "node {n} has a non-finite position"),
            Violation::DuplicatePosition(a, b) => {
                write!(f, "nodes {a} and {b} share the same position")
            }
            Violation::AdjacencyUnknownNode(a, b) => {
                write!(f, "adjacency pair ({a},{b}) references an unknown node")
            }
            Violation::SelfLoop(n) => write!(f, "adjacency contains self loop on {n}"),
            Violation::AsymmetricAdjacency(a, b) => {
                write!(
                    f,
                    "asymmetric adjacency: ({a},{b}) present but ({b},{a}) missing"
                )
            }
            Violation::Disconnected { unreachable } => {
                write!(
                    f,
                    "graph is disconnected, unreachable from node 0: {unreachable:?}"
                )
            }
            Violation::LatencyShape { expected, actual } => {
                write!(f, "latency table has {actual} entries, expected {expected}")
            }
            Violation::LocalLatencyMismatch { node, table, local } => write!(
                f,
                "latency[{node}][{node}] = {table} differs from local latency {local}"
            ),
            Violation::AsymmetricLatency(a, b) => {
                write!(f, "latency[{a}][{b}] differs from latency[{b}][{a}]")
            }
            Violation::RemoteFasterThanLocal { from, to } => write!(
                f,
                "remote faster than local: latency[{from}][{to}] <= latency[{from}][{from}]"
            ),
        }
    }
}

/// The fog network. Immutable once built.
#[derive(Debug, Clone, Serialize)]
pub struct Topology {
    nodes: Vec<FogNode>,
    arcs: Vec<(u32, u32)>,
    #[serde(skip)]
    neighbors: Vec<BTreeSet<NodeId>>,
    /// Row-major N x N, milliseconds.
    latency_ms: Vec<f64>,
}

impl Topology {
    /// Builds and validates a topology from undirected edges.
    pub fn new(
        nodes: Vec<FogNode>,
        edges: &[(u32, u32)],
        latency_ms: Vec<f64>,
    ) -> Result<Self, TopologyError> {
        let arcs = edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect::<Vec<_>>();
        let topology = Self::from_parts(nodes, arcs, latency_ms);
        topology.validate().map_err(TopologyError::Invalid)?;
        Ok(topology)
    }

    /// Assembles a topology from directed adjacency arcs without checking anything.
    /// Call [`Topology::validate`] before using it for latency lookups.
    pub fn from_parts(nodes: Vec<FogNode>, arcs: Vec<(u32, u32)>, latency_ms: Vec<f64>) -> Self {
        let n = nodes.len();
        let mut neighbors = vec![BTreeSet::new(); n];
        for &(a, b) in &arcs {
            if (a as usize) < n && (b as usize) < n && a != b {
                neighbors[a as usize].insert(NodeId(b));
            }
        }
        Topology {
            nodes,
            arcs,
            neighbors,
            latency_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[FogNode] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn node(&self, id: NodeId) -> Result<&FogNode, TopologyError> {
        self.nodes
            .get(id.index())
            .ok_or(TopologyError::UnknownNode(id.0))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// Latency in ms for a client in `client_node`'s section reaching data held at `data_node`.
    ///
    /// Panics on out-of-range ids.
    pub fn latency(&self, client_node: NodeId, data_node: NodeId) -> f64 {
        self.latency_ms[client_node.index() * self.nodes.len() + data_node.index()]
    }

    pub fn local_latency(&self, node: NodeId) -> f64 {
        self.latency(node, node)
    }

    /// Node whose section contains `position`; ties go to the lowest id.
    pub fn closest_node(&self, position: Point) -> NodeId {
        let mut best = self.nodes[0].id;
        let mut best_d = f64::INFINITY;
        for node in &self.nodes {
            let d = node.position.distance_sq(position);
            if d < best_d {
                best = node.id;
                best_d = d;
            }
        }
        best
    }

    /// True when `to` can be reached from `from` without passing through another section.
    pub fn is_adjacent_move(&self, from: NodeId, to: NodeId) -> Result<bool, TopologyError> {
        self.node(from)?;
        self.node(to)?;
        Ok(from == to || self.neighbors[from.index()].contains(&to))
    }

    /// Neighbors of `node` in ascending id order, excluding `node`.
    pub fn adjacent_set(&self, node: NodeId) -> Result<&BTreeSet<NodeId>, TopologyError> {
        self.node(node)?;
        Ok(&self.neighbors[node.index()])
    }

    /// `adjacent_set(node) ∪ {node}`, ascending.
    pub fn candidate_set(&self, node: NodeId) -> Result<BTreeSet<NodeId>, TopologyError> {
        let mut set = self.adjacent_set(node)?.clone();
        set.insert(node);
        Ok(set)
    }

    /// Checks every invariant and reports all violations found.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        if n == 0 {
            return Err(vec![Violation::Empty]);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                out.push(Violation::NonDenseId {
                    position: i,
                    id: node.id,
                });
            }
            if node.zone.as_str().is_empty() {
                out.push(Violation::EmptyZone(node.id));
            }
            if node.storage_capacity == 0 {
                out.push(Violation::ZeroCapacity(node.id));
            }
            if !(node.local_latency_ms >= 0.0) {
                out.push(Violation::NegativeLocalLatency(node.id));
            }
            if !node.position.x.is_finite() || !node.position.y.is_finite() {
                out.push(Violation::NonFinitePosition(node.id));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if self.nodes[i].position == self.nodes[j].position {
                    out.push(Violation::DuplicatePosition(
                        self.nodes[i].id,
                        self.nodes[j].id,
                    ));
                }
            }
        }

        let arc_set: BTreeSet<(u32, u32)> = self.arcs.iter().copied().collect();
        for &(a, b) in &arc_set {
            if a as usize >= n || b as usize >= n {
                out.push(Violation::AdjacencyUnknownNode(a, b));
            } else if a == b {
                out.push(Violation::SelfLoop(NodeId(a)));
            } else if !arc_set.contains(&(b, a)) {
                out.push(Violation::AsymmetricAdjacency(NodeId(a), NodeId(b)));
            }
        }

        // Reachability treats arcs as undirected so asymmetry is reported once, above.
        let mut undirected = vec![BTreeSet::new(); n];
        for (a, set) in self.neighbors.iter().enumerate() {
            for b in set {
                undirected[a].insert(b.index());
                undirected[b.index()].insert(a);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            for &b in &undirected[a] {
                if !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        let unreachable: Vec<NodeId> = (0..n)
            .filter(|&i| !seen[i])
            .map(|i| NodeId(i as u32))
            .collect();
        if !unreachable.is_empty() {
            out.push(Violation::Disconnected { unreachable });
        }

        if self.latency_ms.len() != n * n {
            out.push(Violation::LatencyShape {
                expected: n * n,
                actual: self.latency_ms.len(),
            });
        } else {
            for a in 0..n {
                let id_a = NodeId(a as u32);
                let own = self.latency(id_a, id_a);
                let local = self.nodes[a].local_latency_ms;
                if own != local {
                    out.push(Violation::LocalLatencyMismatch {
                        node: id_a,
                        table: own,
                        local,
                    });
                }
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let id_b = NodeId(b as u32);
                    let ab = self.latency(id_a, id_b);
                    if a < b && ab != self.latency(id_b, id_a) {
                        out.push(Violation::AsymmetricLatency(id_a, id_b));
                    }
                    if !(ab > local) {
                        out.push(Violation::RemoteFasterThanLocal {
                            from: id_a,
                            to: id_b,
                        });
                    }
                }
            }
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Pairs of nodes whose Voronoi cells share a boundary segment.
    pub fn voronoi_adjacency(&self) -> BTreeSet<(NodeId, NodeId)> {
        let mut out = BTreeSet::new();
        for i in 0..self.nodes.len() {
            for j in (i + 1)..self.nodes.len() {
                if self.cells_touch(i, j) {
                    out.insert((self.nodes[i].id, self.nodes[j].id));
                }
            }
        }
        out
    }

    /// Human-readable differences between declared adjacency and the Voronoi neighborhood.
    /// These are advisory; declared adjacency is authoritative.
    pub fn adjacency_warnings(&self) -> Vec<String> {
        let voronoi = self.voronoi_adjacency();
        let mut declared = BTreeSet::new();
        for (a, set) in self.neighbors.iter().enumerate() {
            for &b in set {
                let a = NodeId(a as u32);
                declared.insert((a.min(b), a.max(b)));
            }
        }
        let mut warnings = Vec::new();
        for (a, b) in declared.difference(&voronoi) {
            warnings.push(format!(
                "nodes {a} and {b} are declared adjacent but their sections do not touch"
            ));
        }
        for (a, b) in voronoi.difference(&declared) {
            warnings.push(format!(
                "sections of nodes {a} and {b} touch but the nodes are not declared adjacent"
            ));
        }
        warnings
    }

    // Clips the perpendicular bisector of (i, j) against every other node's half-plane;
    // the cells touch iff a segment of positive length survives.
    fn cells_touch(&self, i: usize, j: usize) -> bool {
        let a = self.nodes[i].position;
        let b = self.nodes[j].position;
        let mid = Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
        let dir = Point::new(-(b.y - a.y), b.x - a.x);
        let scale = dir.x.abs().max(dir.y.abs()).max(1.0);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (k, other) in self.nodes.iter().enumerate() {
            if k == i || k == j {
                continue;
            }
            let c = other.position;
            let ca = Point::new(c.x - a.x, c.y - a.y);
            // |p-a|^2 <= |p-c|^2  <=>  2 p.(c-a) <= |c|^2 - |a|^2, with p = mid + t dir
            let coef = 2.0 * (dir.x * ca.x + dir.y * ca.y);
            let rhs = (c.x * c.x + c.y * c.y)
                - (a.x * a.x + a.y * a.y)
                - 2.0 * (mid.x * ca.x + mid.y * ca.y);
            if coef.abs() <= f64::EPSILON * scale {
                if rhs < 0.0 {
                    return false;
                }
            } else if coef > 0.0 {
                hi = hi.min(rhs / coef);
            } else {
                lo = lo.max(rhs / coef);
            }
        }
        hi - lo > 1e-9
    }
}

/// Serialized topology file / scenario section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeConfig>,
    /// Undirected edges, each listed once.
    pub adjacency: Vec<[u32; 2]>,
    /// N x N, row-major.
    pub latency_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub zone: String,
    pub capacity_bytes: u64,
    pub local_latency_ms: f64,
}

impl TopologyConfig {
    pub fn build(&self) -> Result<Topology, TopologyError> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| FogNode {
                id: NodeId(n.id),
                position: Point::new(n.x, n.y),
                zone: Zone(n.zone.clone()),
                storage_capacity: n.capacity_bytes,
                local_latency_ms: n.local_latency_ms,
            })
            .collect();
        let edges: Vec<(u32, u32)> = self.adjacency.iter().map(|&[a, b]| (a, b)).collect();
        Topology::new(nodes, &edges, self.latency_ms.clone())
    }
}

impl From<&Topology> for TopologyConfig {
    fn from(t: &Topology) -> Self {
        let mut edges = BTreeSet::new();
        for &(a, b) in &t.arcs {
            edges.insert([a.min(b), a.max(b)]);
        }
        TopologyConfig {
            nodes: t
                .nodes
                .iter()
                .map(|n| NodeConfig {
                    id: n.id.0,
                    x: n.position.x,
                    y: n.position.y,
                    zone: n.zone.0.clone(),
                    capacity_bytes: n.storage_capacity,
                    local_latency_ms: n.local_latency_ms,
                })
                .collect(),
            adjacency: edges.into_iter().collect(),
            latency_ms: t.latency_ms.clone(),
        }
    }
}

/// Small builders shared by unit tests, integration tests and trace generation examples.
pub mod fixtures {
    use super::*;

    pub fn node(id: u32, x: f64, y: f64, zone: &str, local_latency_ms: f64) -> FogNode {
        FogNode {
            id: NodeId(id),
            position: Point::new(x, y),
            zone: Zone::new(zone).expect("non-empty zone"),
            storage_capacity: 1 << 40,
            local_latency_ms,
        }
    }

    /// Latency table with `local` on the diagonal and `local + hop * hops(a,b)` elsewhere,
    /// where hops are graph distances over `edges`.
    pub fn hop_latency(n: usize, edges: &[(u32, u32)], local: f64, hop: f64) -> Vec<f64> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a as usize].push(b as usize);
            adj[b as usize].push(a as usize);
        }
        let mut table = vec![0.0; n * n];
        for src in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(a) = queue.pop_front() {
                for &b in &adj[a] {
                    if dist[b] == usize::MAX {
                        dist[b] = dist[a] + 1;
                        queue.push_back(b);
                    }
                }
            }
            for dst in 0..n {
                table[src * n + dst] = local + hop * dist[dst] as f64;
            }
        }
        table
    }

    /// `n` nodes on the x axis, 100 m apart, chained 0-1-...-(n-1).
    pub fn line(n: u32) -> Topology {
        let nodes = (0..n)
            .map(|i| node(i, 100.0 * f64::from(i), 0.0, "EU", 5.0))
            .collect();
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        let latency = hop_latency(n as usize, &edges, 5.0, 15.0);
        Topology::new(nodes, &edges, latency).expect("valid line topology")
    }

    /// Equilateral-ish triangle, every pair adjacent.
    pub fn triangle() -> Topology {
        let nodes = vec![
            node(0, 0.0, 0.0, "EU", 5.0),
            node(1, 1000.0, 0.0, "EU", 5.0),
            node(2, 500.0, 866.0, "EU", 5.0),
        ];
        let edges = [(0, 1), (1, 2), (0, 2)];
        let latency = hop_latency(3, &edges, 5.0, 25.0);
        Topology::new(nodes, &edges, latency).expect("valid triangle topology")
    }
}
