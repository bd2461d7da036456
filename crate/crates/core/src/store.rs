//! Keygroups, their replica sets and access routing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientId;
use crate::topology::{NodeId, Topology, Zone};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeygroupId(pub u32);

impl fmt::Display for KeygroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

/// Single-owner group of data items replicated as one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keygroup {
    pub id: KeygroupId,
    pub size_bytes: u64,
    pub allowed_zones: BTreeSet<Zone>,
    pub owner: ClientId,
    /// Node holding the pinned primary replica.
    pub home: NodeId,
}

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("unknown keygroup {0}")]
    UnknownKeygroup(KeygroupId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate keygroup id {0}")]
    DuplicateKeygroup(KeygroupId),
    #[error("keygroup {0} must have a positive size")]
    EmptyKeygroup(KeygroupId),
    #[error("keygroup {0} has no allowed zones")]
    NoAllowedZones(KeygroupId),
    #[error("restriction: node {node} in zone {zone} is not allowed for keygroup {keygroup}")]
    Restriction {
        keygroup: KeygroupId,
        node: NodeId,
        zone: Zone,
    },
    #[error("capacity: node {node} has {free} bytes free, {needed} needed")]
    Capacity {
        node: NodeId,
        needed: u64,
        free: u64,
    },
    #[error("primary-protected: node {node} holds the primary of keygroup {keygroup}")]
    PrimaryProtected { keygroup: KeygroupId, node: NodeId },
    #[error("transfer bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ReplicaStatus {
    Ready,
    InFlight { job: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replica {
    pub status: ReplicaStatus,
    pub created_at: f64,
    pub completes_at: f64,
    /// Last time this replica served an access; the completion time until then.
    pub last_access_at: f64,
    pub accesses: u64,
}

impl Replica {
    pub fn is_ready(&self) -> bool {
        self.status == ReplicaStatus::Ready
    }
}

/// Replica placement of one keygroup. The primary is always present and ready.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaMap {
    pub primary: NodeId,
    replicas: BTreeMap<NodeId, Replica>,
    /// Writes applied so far; replica sync is instantaneous metadata.
    pub version: u64,
}

impl ReplicaMap {
    pub fn contains(&self, node: NodeId) -> bool {
        self.replicas.contains_key(&node)
    }

    pub fn get(&self, node: NodeId) -> Option<&Replica> {
        self.replicas.get(&node)
    }

    /// All replicas including in-flight ones, ascending by node.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Replica)> {
        self.replicas.iter().map(|(n, r)| (*n, r))
    }

    pub fn ready_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.replicas
            .iter()
            .filter(|(_, r)| r.is_ready())
            .map(|(n, _)| *n)
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.replicas.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessOutcome {
    pub served_by: NodeId,
    pub latency_ms: f64,
    /// Served by the node of the client's current section.
    pub hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferJob {
    pub id: u64,
    pub keygroup: KeygroupId,
    pub node: NodeId,
    pub bytes: u64,
    pub completes_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CreateOutcome {
    Started(TransferJob),
    /// The node already holds (or is receiving) a replica; nothing changed.
    AlreadyPresent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemoveOutcome {
    Removed(Replica),
    /// The node held no replica; nothing changed.
    NotAReplica,
}

#[derive(Debug, Clone)]
pub struct Store {
    topology: Arc<Topology>,
    keygroups: BTreeMap<KeygroupId, Keygroup>,
    placements: BTreeMap<KeygroupId, ReplicaMap>,
    used_bytes: Vec<u64>,
    next_job: u64,
}

impl Store {
    /// Places every keygroup's primary on its home node.
    pub fn new(topology: Arc<Topology>, keygroups: Vec<Keygroup>) -> Result<Self, StoreError> {
        let mut store = Store {
            used_bytes: vec![0; topology.len()],
            topology,
            keygroups: BTreeMap::new(),
            placements: BTreeMap::new(),
            next_job: 0,
        };
        for kg in keygroups {
            if store.keygroups.contains_key(&kg.id) {
                return Err(StoreError::DuplicateKeygroup(kg.id));
            }
            if kg.size_bytes == 0 {
                return Err(StoreError::EmptyKeygroup(kg.id));
            }
            if kg.allowed_zones.is_empty() {
                return Err(StoreError::NoAllowedZones(kg.id));
            }
            store.check_placeable(&kg, kg.home)?;
            store.used_bytes[kg.home.index()] += kg.size_bytes;
            let primary = Replica {
                status: ReplicaStatus::Ready,
                created_at: 0.0,
                completes_at: 0.0,
                last_access_at: 0.0,
                accesses: 0,
            };
            store.placements.insert(
                kg.id,
                ReplicaMap {
                    primary: kg.home,
                    replicas: BTreeMap::from([(kg.home, primary)]),
                    version: 0,
                },
            );
            store.keygroups.insert(kg.id, kg);
        }
        Ok(store)
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn keygroup(&self, id: KeygroupId) -> Result<&Keygroup, StoreError> {
        self.keygroups
            .get(&id)
            .ok_or(StoreError::UnknownKeygroup(id))
    }

    pub fn keygroups(&self) -> impl Iterator<Item = &Keygroup> {
        self.keygroups.values()
    }

    pub fn owned_by(&self, client: ClientId) -> impl Iterator<Item = &Keygroup> {
        self.keygroups.values().filter(move |kg| kg.owner == client)
    }

    pub fn replicas(&self, id: KeygroupId) -> Result<&ReplicaMap, StoreError> {
        self.placements
            .get(&id)
            .ok_or(StoreError::UnknownKeygroup(id))
    }

    pub fn used_bytes(&self, node: NodeId) -> u64 {
        self.used_bytes[node.index()]
    }

    pub fn free_bytes(&self, node: NodeId) -> u64 {
        self.topology.nodes()[node.index()].storage_capacity - self.used_bytes[node.index()]
    }

    pub fn zone_allowed(&self, keygroup: &Keygroup, node: NodeId) -> bool {
        self.topology
            .node(node)
            .map(|n| keygroup.allowed_zones.contains(&n.zone))
            .unwrap_or(false)
    }

    fn check_placeable(&self, kg: &Keygroup, node: NodeId) -> Result<(), StoreError> {
        let fog = self
            .topology
            .node(node)
            .map_err(|_| StoreError::UnknownNode(node))?;
        if !kg.allowed_zones.contains(&fog.zone) {
            return Err(StoreError::Restriction {
                keygroup: kg.id,
                node,
                zone: fog.zone.clone(),
            });
        }
        let free = fog.storage_capacity - self.used_bytes[node.index()];
        if free < kg.size_bytes {
            return Err(StoreError::Capacity {
                node,
                needed: kg.size_bytes,
                free,
            });
        }
        Ok(())
    }

    /// Serves an access from the completed replica with the lowest latency to `client_node`.
    pub fn route_access(
        &mut self,
        client_node: NodeId,
        keygroup: KeygroupId,
        kind: AccessKind,
        now: f64,
    ) -> Result<AccessOutcome, StoreError> {
        if !self.topology.contains(client_node) {
            return Err(StoreError::UnknownNode(client_node));
        }
        let topology = Arc::clone(&self.topology);
        let map = self
            .placements
            .get_mut(&keygroup)
            .ok_or(StoreError::UnknownKeygroup(keygroup))?;
        let mut best: Option<(NodeId, f64)> = None;
        for node in map.ready_nodes() {
            let latency = topology.latency(client_node, node);
            if best.is_none_or(|(_, l)| latency < l) {
                best = Some((node, latency));
            }
        }
        // The primary is always ready, so some replica was found.
        let (served_by, latency_ms) = best.expect("primary replica is always ready");
        let replica = map.replicas.get_mut(&served_by).expect("replica exists");
        replica.last_access_at = now;
        replica.accesses += 1;
        if kind == AccessKind::Write {
            map.version += 1;
        }
        Ok(AccessOutcome {
            served_by,
            latency_ms,
            hit: served_by == client_node,
        })
    }

    /// Starts copying `keygroup` to `node`. Capacity is reserved immediately; the replica
    /// serves only after [`Store::complete_transfer`] for the returned job.
    pub fn create_replica(
        &mut self,
        keygroup: KeygroupId,
        node: NodeId,
        now: f64,
        bandwidth_bytes_per_s: f64,
        setup_delay_s: f64,
    ) -> Result<CreateOutcome, StoreError> {
        if !(bandwidth_bytes_per_s > 0.0) {
            return Err(StoreError::InvalidBandwidth(bandwidth_bytes_per_s));
        }
        let kg = self.keygroup(keygroup)?;
        if self.placements[&keygroup].contains(node) {
            return Ok(CreateOutcome::AlreadyPresent);
        }
        self.check_placeable(kg, node)?;
        let size = kg.size_bytes;
        let completes_at = now + setup_delay_s + size as f64 / bandwidth_bytes_per_s;
        let job = TransferJob {
            id: self.next_job,
            keygroup,
            node,
            bytes: size,
            completes_at,
        };
        self.next_job += 1;
        self.used_bytes[node.index()] += size;
        self.placements
            .get_mut(&keygroup)
            .expect("placement exists for known keygroup")
            .replicas
            .insert(
                node,
                Replica {
                    status: ReplicaStatus::InFlight { job: job.id },
                    created_at: now,
                    completes_at,
                    last_access_at: completes_at,
                    accesses: 0,
                },
            );
        Ok(CreateOutcome::Started(job))
    }

    /// Marks the job's replica servable. Returns false if the replica was removed
    /// (or replaced by a newer transfer) in the meantime.
    pub fn complete_transfer(&mut self, job: &TransferJob) -> bool {
        let Some(map) = self.placements.get_mut(&job.keygroup) else {
            return false;
        };
        match map.replicas.get_mut(&job.node) {
            Some(r) if r.status == (ReplicaStatus::InFlight { job: job.id }) => {
                r.status = ReplicaStatus::Ready;
                true
            }
            _ => false,
        }
    }

    /// Drops a non-primary replica (ready or in flight) and releases its capacity.
    pub fn remove_replica(
        &mut self,
        keygroup: KeygroupId,
        node: NodeId,
    ) -> Result<RemoveOutcome, StoreError> {
        let size = self.keygroup(keygroup)?.size_bytes;
        let map = self
            .placements
            .get_mut(&keygroup)
            .expect("placement exists for known keygroup");
        if node == map.primary {
            return Err(StoreError::PrimaryProtected { keygroup, node });
        }
        match map.replicas.remove(&node) {
            Some(replica) => {
                self.used_bytes[node.index()] -= size;
                Ok(RemoveOutcome::Removed(replica))
            }
            None => Ok(RemoveOutcome::NotAReplica),
        }
    }

    /// Bytes held by non-primary replicas, in flight or ready.
    pub fn secondary_bytes(&self) -> u64 {
        self.placements
            .iter()
            .map(|(id, map)| (map.len() as u64 - 1) * self.keygroups[id].size_bytes)
            .sum()
    }

    /// Checks zone safety, capacity accounting and primary availability.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut used = vec![0u64; self.topology.len()];
        for (id, map) in &self.placements {
            let kg = &self.keygroups[id];
            match map.get(map.primary) {
                Some(r) if r.is_ready() => {}
                _ => problems.push(format!(
                    "keygroup {id}: primary {} not servable",
                    map.primary
                )),
            }
            for (node, _) in map.iter() {
                used[node.index()] += kg.size_bytes;
                if !self.zone_allowed(kg, node) {
                    problems.push(format!(
                        "keygroup {id}: replica on node {node} violates zone"
                    ));
                }
            }
        }
        for (i, node) in self.topology.nodes().iter().enumerate() {
            if used[i] != self.used_bytes[i] {
                problems.push(format!("node {i}: capacity accounting drift"));
            }
            if used[i] > node.storage_capacity {
                problems.push(format!("node {i}: capacity exceeded"));
            }
        }
        problems
    }
}
