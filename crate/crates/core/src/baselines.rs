//! Placement strategies behind one event interface: three reference baselines and the
//! predictive engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::client::{ClientId, NodeTransition};
use crate::placement::{decide, Action, CostParams, PlacementDecision, Reason, Reservations};
use crate::predictor::ClientOutlook;
use crate::store::{KeygroupId, Store};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    NoReplication,
    FullReplication,
    ReactiveFollowMe,
    Predictive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::NoReplication,
        StrategyKind::FullReplication,
        StrategyKind::ReactiveFollowMe,
        StrategyKind::Predictive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::NoReplication => "NoReplication",
            StrategyKind::FullReplication => "FullReplication",
            StrategyKind::ReactiveFollowMe => "ReactiveFollowMe",
            StrategyKind::Predictive => "Predictive",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("unknown strategy {0:?} (expected one of NoReplication, FullReplication, ReactiveFollowMe, Predictive)")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

/// What a strategy gets to react to.
#[derive(Debug, Clone, Copy)]
pub enum StrategyEvent<'a> {
    Start {
        now: f64,
    },
    Transition {
        now: f64,
        client: ClientId,
        transition: &'a NodeTransition,
    },
    AccessMiss {
        now: f64,
        client: ClientId,
        keygroup: KeygroupId,
        node: NodeId,
    },
    Tick {
        now: f64,
        node: NodeId,
        outlooks: &'a [ClientOutlook],
    },
}

/// Decisions of `strategy` for one event. Pure over the store snapshot.
pub fn on_event(
    strategy: StrategyKind,
    event: &StrategyEvent<'_>,
    store: &Store,
    params: &CostParams,
) -> Vec<PlacementDecision> {
    match (strategy, *event) {
        (StrategyKind::NoReplication, _) => Vec::new(),
        (StrategyKind::FullReplication, StrategyEvent::Start { .. }) => replicate_everywhere(store),
        (StrategyKind::ReactiveFollowMe, StrategyEvent::AccessMiss { keygroup, node, .. }) => {
            follow_on_miss(store, keygroup, node)
        }
        (StrategyKind::ReactiveFollowMe, StrategyEvent::Tick { now, outlooks, .. }) => {
            evict_left_behind(store, outlooks, params, now)
        }
        (StrategyKind::Predictive, StrategyEvent::Tick { now, outlooks, .. }) => {
            decide(store, outlooks, params, now)
        }
        _ => Vec::new(),
    }
}

fn replicate_everywhere(store: &Store) -> Vec<PlacementDecision> {
    let mut out = Vec::new();
    let mut reservations = Reservations::default();
    for kg in store.keygroups() {
        let map = store.replicas(kg.id).expect("known keygroup");
        for node in store.topology().node_ids() {
            if map.contains(node) {
                continue;
            }
            out.push(match reservations.admit(store, kg, node) {
                Some(reason) => PlacementDecision::hold(kg.id, node, 0.0, 0.0, reason),
                None => PlacementDecision {
                    keygroup: kg.id,
                    node,
                    action: Action::Replicate,
                    benefit: 0.0,
                    cost: 0.0,
                    reason: Reason::Initial,
                },
            });
        }
    }
    out
}

fn follow_on_miss(store: &Store, keygroup: KeygroupId, node: NodeId) -> Vec<PlacementDecision> {
    let Ok(kg) = store.keygroup(keygroup) else {
        return Vec::new();
    };
    let map = store.replicas(keygroup).expect("known keygroup");
    if let Some(replica) = map.get(node) {
        let reason = if replica.is_ready() {
            Reason::Present
        } else {
            Reason::InFlight
        };
        return vec![PlacementDecision::hold(keygroup, node, 0.0, 0.0, reason)];
    }
    let decision = match Reservations::default().admit(store, kg, node) {
        Some(reason) => PlacementDecision::hold(keygroup, node, 0.0, 0.0, reason),
        None => PlacementDecision {
            keygroup,
            node,
            action: Action::Replicate,
            benefit: 0.0,
            cost: 0.0,
            reason: Reason::Miss,
        },
    };
    vec![decision]
}

fn evict_left_behind(
    store: &Store,
    outlooks: &[ClientOutlook],
    params: &CostParams,
    now: f64,
) -> Vec<PlacementDecision> {
    let mut out = Vec::new();
    for outlook in outlooks {
        for kg in store.owned_by(outlook.client) {
            let map = store.replicas(kg.id).expect("known keygroup");
            for (node, replica) in map.iter() {
                if node == map.primary || node == outlook.current || !replica.is_ready() {
                    continue;
                }
                if now - replica.last_access_at > params.eviction_idle_s {
                    out.push(PlacementDecision {
                        keygroup: kg.id,
                        node,
                        action: Action::Evict,
                        benefit: 0.0,
                        cost: 0.0,
                        reason: Reason::Idle,
                    });
                }
            }
        }
    }
    out.sort_by_key(|d| (d.keygroup, d.node));
    out
}
