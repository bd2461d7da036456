//! Replication economics and the per-keygroup decision rule.
//!
//! A replica at node `n` is worth creating when the latency and SLA penalties the
//! owner is expected to pay at `n` over the horizon exceed what copying, storing and
//! keeping the replica consistent would cost (times a hysteresis margin).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::ClientOutlook;
use crate::store::{Keygroup, KeygroupId, Store};
use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum CostParamsError {
    #[error("cost coefficient {0} must be non-negative and finite")]
    NegativeCoefficient(&'static str),
    #[error("horizon must be positive")]
    NonPositiveHorizon,
    #[error("replicate_margin must be at least 1")]
    MarginBelowOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Per byte transferred.
    pub c_net: f64,
    /// Per byte-second stored.
    pub c_store: f64,
    /// Per replica-second of coordination overhead.
    pub c_consistency: f64,
    /// Per millisecond of extra latency per access.
    pub c_latency: f64,
    pub sla_threshold_ms: f64,
    /// Per access that misses the SLA.
    pub c_sla: f64,
    pub horizon_s: f64,
    pub replicate_margin: f64,
    pub eviction_idle_s: f64,
    /// Constant credit per additional replica standing in for resiliency.
    pub resiliency_bonus: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c_net: 1e-8,
            c_store: 1e-12,
            c_consistency: 1e-4,
            c_latency: 0.01,
            sla_threshold_ms: 30.0,
            c_sla: 0.1,
            horizon_s: 60.0,
            replicate_margin: 1.0,
            eviction_idle_s: 120.0,
            resiliency_bonus: 0.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostParamsError> {
        let coefficients = [
            ("c_net", self.c_net),
            ("c_store", self.c_store),
            ("c_consistency", self.c_consistency),
            ("c_latency", self.c_latency),
            ("sla_threshold_ms", self.sla_threshold_ms),
            ("c_sla", self.c_sla),
            ("eviction_idle_s", self.eviction_idle_s),
            ("resiliency_bonus", self.resiliency_bonus),
        ];
        for (name, v) in coefficients {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CostParamsError::NegativeCoefficient(name));
            }
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(CostParamsError::NonPositiveHorizon);
        }
        if !(self.replicate_margin >= 1.0) {
            return Err(CostParamsError::MarginBelowOne);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Replicate,
    Evict,
    Hold,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Replicate => "replicate",
            Action::Evict => "evict",
            Action::Hold => "hold",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    /// Expected benefit exceeds the margin-scaled cost.
    Benefit,
    BelowMargin,
    /// Replica already present and servable.
    Present,
    InFlight,
    /// Would replicate, but the node's zone is not allowed.
    Restriction,
    /// Would replicate, but the node is full.
    Capacity,
    /// Unused beyond the idle limit and not predicted.
    Idle,
    /// Full replication at start-up.
    Initial,
    /// Access missed the client's current node.
    Miss,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Benefit => "benefit",
            Reason::BelowMargin => "below-margin",
            Reason::Present => "present",
            Reason::InFlight => "in-flight",
            Reason::Restriction => "restriction",
            Reason::Capacity => "capacity",
            Reason::Idle => "idle",
            Reason::Initial => "initial",
            Reason::Miss => "miss",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlacementDecision {
    pub keygroup: KeygroupId,
    pub node: NodeId,
    pub action: Action,
    pub benefit: f64,
    pub cost: f64,
    pub reason: Reason,
}

impl PlacementDecision {
    pub fn hold(
        keygroup: KeygroupId,
        node: NodeId,
        benefit: f64,
        cost: f64,
        reason: Reason,
    ) -> Self {
        PlacementDecision {
            keygroup,
            node,
            action: Action::Hold,
            benefit,
            cost,
            reason,
        }
    }
}

/// Cost of copying the keygroup once and keeping the copy for the horizon.
pub fn replication_cost(keygroup: &Keygroup, params: &CostParams) -> f64 {
    let size = keygroup.size_bytes as f64;
    params.c_net * size + (params.c_store * size + params.c_consistency) * params.horizon_s
}

/// Expected penalty of not having a replica where the client will be.
pub fn opportunity_cost(
    p_next: f64,
    expected_accesses: f64,
    local_ms: f64,
    best_remote_ms: f64,
    params: &CostParams,
) -> f64 {
    let saved_ms = (best_remote_ms - local_ms).max(0.0);
    let sla_hits =
        if best_remote_ms > params.sla_threshold_ms && params.sla_threshold_ms >= local_ms {
            expected_accesses
        } else {
            0.0
        };
    p_next * (expected_accesses * saved_ms * params.c_latency + sla_hits * params.c_sla)
}

/// Tracks capacity claimed by decisions within one batch.
#[derive(Debug, Default)]
pub(crate) struct Reservations(BTreeMap<NodeId, u64>);

impl Reservations {
    /// Why `keygroup` cannot go to `node`, if anything; reserves space otherwise.
    pub(crate) fn admit(
        &mut self,
        store: &Store,
        keygroup: &Keygroup,
        node: NodeId,
    ) -> Option<Reason> {
        if !store.zone_allowed(keygroup, node) {
            return Some(Reason::Restriction);
        }
        let reserved = self.0.entry(node).or_default();
        if store.free_bytes(node).saturating_sub(*reserved) < keygroup.size_bytes {
            return Some(Reason::Capacity);
        }
        *reserved += keygroup.size_bytes;
        None
    }
}

/// Replicate/Evict/Hold for every keygroup owned by a client in `outlooks`.
///
/// For each node in the owner's predicted support: replicate when absent, allowed, with
/// room, and `benefit > margin * cost`. Replicas that are neither the primary nor at the
/// owner's current node, sit outside the support and have been idle longer than
/// `eviction_idle_s` are evicted. Output is ordered by keygroup, then node.
pub fn decide(
    store: &Store,
    outlooks: &[ClientOutlook],
    params: &CostParams,
    now: f64,
) -> Vec<PlacementDecision> {
    let topology = store.topology();
    let mut out = Vec::new();
    let mut reservations = Reservations::default();

    let mut by_keygroup: BTreeMap<KeygroupId, &ClientOutlook> = BTreeMap::new();
    for outlook in outlooks {
        for kg in store.owned_by(outlook.client) {
            by_keygroup.insert(kg.id, outlook);
        }
    }

    for (kg_id, outlook) in by_keygroup {
        let kg = store.keygroup(kg_id).expect("owned keygroup exists");
        let map = store.replicas(kg_id).expect("owned keygroup is placed");
        let ready: Vec<NodeId> = map.ready_nodes().collect();
        let expected = outlook
            .rates
            .get(&kg_id)
            .copied()
            .unwrap_or_default()
            .expected_accesses(params.horizon_s)
            .value;
        let cost = replication_cost(kg, params);
        let support: BTreeSet<NodeId> = outlook.prediction.support().collect();

        for (&node, &p) in &outlook.prediction.distribution {
            if let Some(replica) = map.get(node) {
                let reason = if replica.is_ready() {
                    Reason::Present
                } else {
                    Reason::InFlight
                };
                out.push(PlacementDecision::hold(kg_id, node, 0.0, 0.0, reason));
                continue;
            }
            let best_remote = ready
                .iter()
                .map(|&r| topology.latency(node, r))
                .fold(f64::INFINITY, f64::min);
            let benefit = opportunity_cost(
                p,
                expected,
                topology.local_latency(node),
                best_remote,
                params,
            ) + params.resiliency_bonus;
            if !(benefit > params.replicate_margin * cost) {
                out.push(PlacementDecision::hold(
                    kg_id,
                    node,
                    benefit,
                    cost,
                    Reason::BelowMargin,
                ));
                continue;
            }
            match reservations.admit(store, kg, node) {
                Some(reason) => {
                    out.push(PlacementDecision::hold(kg_id, node, benefit, cost, reason))
                }
                None => out.push(PlacementDecision {
                    keygroup: kg_id,
                    node,
                    action: Action::Replicate,
                    benefit,
                    cost,
                    reason: Reason::Benefit,
                }),
            }
        }

        for (node, replica) in map.iter() {
            if node == map.primary
                || node == outlook.current
                || support.contains(&node)
                || !replica.is_ready()
            {
                continue;
            }
            if now - replica.last_access_at > params.eviction_idle_s {
                out.push(PlacementDecision {
                    keygroup: kg_id,
                    node,
                    action: Action::Evict,
                    benefit: 0.0,
                    cost: 0.0,
                    reason: Reason::Idle,
                });
            }
        }
    }
    out.sort_by_key(|d| (d.keygroup, d.node));
    out
}
