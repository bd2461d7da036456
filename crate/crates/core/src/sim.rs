//! Deterministic discrete-event simulation of clients, edge predictors and the store.
//!
//! Events are processed in `(at, seq)` order; `seq` is assigned at insertion, so events
//! scheduled for the same instant run in the order they were scheduled. Trace rows are
//! inserted up front, which puts them ahead of anything scheduled later for the same time
//! (for example a transfer that completes exactly when an access happens).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{on_event, StrategyEvent, StrategyKind};
use crate::client::{ClientConfig, ClientError, ClientId, ClientState, GeoHint, MiddlewareReport};
use crate::placement::{Action, CostParams, CostParamsError, PlacementDecision, Reason};
use crate::predictor::{ClientOutlook, EdgePredictor, PredictorError, PredictorParams};
use crate::store::{
    AccessKind, CreateOutcome, Keygroup, KeygroupId, RemoveOutcome, Store, StoreError, TransferJob,
};
use crate::topology::{NodeId, Point, Topology, TopologyError};
use crate::trace::{check_rows, TraceRow};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Cost(#[from] CostParamsError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub report_interval_s: f64,
    pub predict_interval_s: f64,
    /// Uniform transfer bandwidth between any two nodes.
    pub bandwidth_bytes_per_s: f64,
    pub setup_delay_s: f64,
    /// Accesses before this time are excluded from the access metrics.
    pub warmup_s: f64,
    /// Defaults to the time of the last trace row.
    pub end_s: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            report_interval_s: 10.0,
            predict_interval_s: 5.0,
            bandwidth_bytes_per_s: 1e6,
            setup_delay_s: 0.0,
            warmup_s: 0.0,
            end_s: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("report_interval_s", self.report_interval_s)?;
        positive("predict_interval_s", self.predict_interval_s)?;
        positive("bandwidth_bytes_per_s", self.bandwidth_bytes_per_s)?;
        if !(self.setup_delay_s >= 0.0 && self.warmup_s >= 0.0) {
            return Err(SimError::Config(
                "setup_delay_s and warmup_s must be non-negative".into(),
            ));
        }
        if let Some(end) = self.end_s {
            if !(end >= 0.0 && end.is_finite()) {
                return Err(SimError::Config(format!(
                    "end_s must be non-negative, got {end}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ClientMove {
        client: ClientId,
        position: Point,
        hint: Option<GeoHint>,
    },
    Access {
        client: ClientId,
        keygroup: KeygroupId,
    },
    ReportFlush {
        client: ClientId,
    },
    PredictTick {
        node: NodeId,
        /// Periodic ticks reschedule themselves; ticks triggered by a transition do not.
        periodic: bool,
    },
    TransferComplete {
        job: TransferJob,
    },
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub at: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    // Reversed so that the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, at: f64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { at, seq, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn peek(&self) -> Option<&SimEvent> {
        self.heap.peek()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accesses: u64,
    pub hits: u64,
    /// 1.0 when there were no accesses.
    pub hit_ratio: f64,
    pub mean_latency_ms: f64,
    /// Nearest-rank percentile.
    pub p95_latency_ms: f64,
    pub bytes_transferred: u64,
    /// Bytes held by non-primary replicas (including in-flight ones), integrated over time.
    pub replica_seconds: f64,
    pub wasted_replications: u64,
    pub sla_violation_ratio: f64,
    pub replicate_count: u64,
    pub evict_count: u64,
    pub hold_count: u64,
    pub restriction_denials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub keygroup: KeygroupId,
    pub node: NodeId,
    pub action: Action,
    pub benefit: f64,
    pub cost: f64,
    pub reason: Reason,
}

pub const DECISIONS_HEADER: &str = "time,keygroup,node,action,benefit,cost,reason";

/// Renders the decisions log as CSV.
pub fn decisions_csv(records: &[DecisionRecord]) -> String {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(DECISIONS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.time,
            r.keygroup.0,
            r.node.0,
            r.action.as_str(),
            r.benefit,
            r.cost,
            r.reason.as_str()
        );
    }
    out
}

/// Findings of the per-event checker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub violations: Vec<String>,
    /// Every (keygroup, node) that ever held a replica, primary included.
    pub ever_placed: BTreeSet<(KeygroupId, NodeId)>,
    pub events_checked: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub at: f64,
    pub node: NodeId,
    pub outlook: ClientOutlook,
}

/// Everything one run needs.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub topology: Arc<Topology>,
    pub keygroups: Vec<Keygroup>,
    pub trace: Vec<TraceRow>,
    pub strategy: StrategyKind,
    pub cost: CostParams,
    pub predictor: PredictorParams,
    pub client: ClientConfig,
    pub sim: SimConfig,
    /// Run the store and adjacency checks after every event.
    pub audit: bool,
    /// Keep every outlook produced by a predictor tick.
    pub record_predictions: bool,
    /// Attach a JSON dump of every edge predictor's final state to the output.
    pub dump_predictors: bool,
}

impl SimSetup {
    pub fn new(
        topology: Arc<Topology>,
        keygroups: Vec<Keygroup>,
        trace: Vec<TraceRow>,
        strategy: StrategyKind,
    ) -> Self {
        SimSetup {
            topology,
            keygroups,
            trace,
            strategy,
            cost: CostParams::default(),
            predictor: PredictorParams::default(),
            client: ClientConfig::default(),
            sim: SimConfig::default(),
            audit: false,
            record_predictions: false,
            dump_predictors: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: MetricsReport,
    pub decisions: Vec<DecisionRecord>,
    pub audit: Option<AuditLog>,
    pub predictions: Vec<PredictionRecord>,
    pub predictor_dump: Option<String>,
}

#[derive(Debug, Default)]
struct Tally {
    latencies: Vec<f64>,
    hits: u64,
    sla_violations: u64,
    bytes_transferred: u64,
    replica_seconds: f64,
    wasted: u64,
    replicate: u64,
    evict: u64,
    hold: u64,
    restriction_denials: u64,
}

pub struct Simulation {
    now: f64,
    end_at: f64,
    done: bool,
    last_popped: Option<(f64, u64)>,
    queue: EventQueue,
    store: Store,
    strategy: StrategyKind,
    cost: CostParams,
    client_config: ClientConfig,
    sim: SimConfig,
    clients: BTreeMap<ClientId, ClientState>,
    /// Node whose predictor currently holds each client's context.
    hosts: BTreeMap<ClientId, NodeId>,
    predictors: Vec<EdgePredictor>,
    tally: Tally,
    decisions: Vec<DecisionRecord>,
    audit: Option<AuditLog>,
    predictions: Option<Vec<PredictionRecord>>,
    attach_dump: bool,
}

fn validate_trace(setup: &SimSetup) -> Result<(), SimError> {
    check_rows(&setup.trace).map_err(|e| SimError::InvalidTrace(e.to_string()))?;
    let owners: BTreeMap<KeygroupId, ClientId> =
        setup.keygroups.iter().map(|k| (k.id, k.owner)).collect();
    for (i, row) in setup.trace.iter().enumerate() {
        let err = |msg: String| SimError::InvalidTrace(format!("row {}: {msg}", i + 1));
        if let Some(kg) = row.access() {
            match owners.get(&kg) {
                None => return Err(err(format!("unknown keygroup {}", kg.0))),
                Some(&owner) if owner != row.client() => {
                    return Err(err(format!(
                        "client {} accesses keygroup {} owned by client {}",
                        row.client_id, kg.0, owner.0
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(hint) = row.hint().map_err(err)? {
            if !setup.topology.contains(hint.target) {
                return Err(err(format!("hint names unknown node {}", hint.target.0)));
            }
        }
    }
    Ok(())
}

impl Simulation {
    /// Validates inputs, schedules all trace events and applies the strategy's start decisions.
    pub fn new(setup: SimSetup) -> Result<Self, SimError> {
        setup.sim.validate()?;
        setup.cost.validate()?;
        validate_trace(&setup)?;
        let store = Store::new(Arc::clone(&setup.topology), setup.keygroups)?;

        let mut rows: Vec<&TraceRow> = setup.trace.iter().collect();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        let end_at = setup
            .sim
            .end_s
            .unwrap_or_else(|| rows.last().map_or(0.0, |r| r.t));

        let mut queue = EventQueue::default();
        for row in rows.iter().filter(|r| r.t <= end_at) {
            let hint = row.hint().expect("hints validated");
            queue.push(
                row.t,
                EventKind::ClientMove {
                    client: row.client(),
                    position: row.position(),
                    hint,
                },
            );
            if let Some(keygroup) = row.access() {
                queue.push(
                    row.t,
                    EventKind::Access {
                        client: row.client(),
                        keygroup,
                    },
                );
            }
        }
        for node in setup.topology.node_ids() {
            queue.push(
                0.0,
                EventKind::PredictTick {
                    node,
                    periodic: true,
                },
            );
        }
        queue.push(end_at, EventKind::End);

        let predictors = setup
            .topology
            .node_ids()
            .map(|n| EdgePredictor::new(n, setup.predictor))
            .collect();
        let audit = setup.audit.then(AuditLog::default);
        let mut sim = Simulation {
            now: 0.0,
            end_at,
            done: false,
            last_popped: None,
            queue,
            store,
            strategy: setup.strategy,
            cost: setup.cost,
            client_config: setup.client,
            sim: setup.sim,
            clients: BTreeMap::new(),
            hosts: BTreeMap::new(),
            predictors,
            tally: Tally::default(),
            decisions: Vec::new(),
            audit,
            predictions: setup.record_predictions.then(Vec::new),
            attach_dump: setup.dump_predictors,
        };
        let start = on_event(
            sim.strategy,
            &StrategyEvent::Start { now: 0.0 },
            &sim.store,
            &sim.cost,
        );
        sim.apply(start)?;
        sim.check();
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn predictor(&self, node: NodeId) -> Option<&EdgePredictor> {
        self.predictors.get(node.index())
    }

    pub fn client(&self, client: ClientId) -> Option<&ClientState> {
        self.clients.get(&client)
    }

    /// Inserts an event; used by tests to drive the loop by hand.
    pub fn schedule(&mut self, at: f64, kind: EventKind) -> u64 {
        self.queue.push(at, kind)
    }

    /// Processes exactly one event. `None` once the run has ended or the queue is empty.
    pub fn step(&mut self) -> Result<Option<SimEvent>, SimError> {
        if self.done {
            return Ok(None);
        }
        let Some(event) = self.queue.pop() else {
            self.done = true;
            return Ok(None);
        };
        debug_assert!(
            self.last_popped
                .is_none_or(|(at, seq)| at < event.at || (at == event.at && seq < event.seq)),
            "event processed out of order"
        );
        self.last_popped = Some((event.at, event.seq));
        self.advance(event.at);
        self.process(&event)?;
        self.check();
        Ok(Some(event))
    }

    pub fn run_to_end(mut self) -> Result<SimOutput, SimError> {
        while self.step()?.is_some() {}
        Ok(self.finish())
    }

    /// All edge predictors' state as one JSON array.
    pub fn dump_predictors(&self) -> String {
        serde_json::to_string_pretty(&self.predictors).expect("predictor state serializes")
    }

    pub fn finish(self) -> SimOutput {
        let predictor_dump = self.attach_dump.then(|| self.dump_predictors());
        let t = &self.tally;
        let n = t.latencies.len();
        let mut sorted = t.latencies.clone();
        sorted.sort_by(f64::total_cmp);
        let p95 = if n == 0 {
            0.0
        } else {
            let rank = (0.95 * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        };
        let ratio = |k: u64, default: f64| if n == 0 { default } else { k as f64 / n as f64 };
        let metrics = MetricsReport {
            accesses: n as u64,
            hits: t.hits,
            hit_ratio: ratio(t.hits, 1.0),
            mean_latency_ms: if n == 0 {
                0.0
            } else {
                t.latencies.iter().sum::<f64>() / n as f64
            },
            p95_latency_ms: p95,
            bytes_transferred: t.bytes_transferred,
            replica_seconds: t.replica_seconds,
            wasted_replications: t.wasted,
            sla_violation_ratio: ratio(t.sla_violations, 0.0),
            replicate_count: t.replicate,
            evict_count: t.evict,
            hold_count: t.hold,
            restriction_denials: t.restriction_denials,
        };
        SimOutput {
            metrics,
            decisions: self.decisions,
            audit: self.audit,
            predictions: self.predictions.unwrap_or_default(),
            predictor_dump,
        }
    }

    fn advance(&mut self, to: f64) {
        let to = to.min(self.end_at).max(self.now);
        self.tally.replica_seconds += self.store.secondary_bytes() as f64 * (to - self.now);
        self.now = to;
    }

    fn process(&mut self, event: &SimEvent) -> Result<(), SimError> {
        let now = event.at;
        match &event.kind {
            EventKind::ClientMove {
                client,
                position,
                hint,
            } => self.on_move(now, *client, *position, *hint),
            EventKind::Access { client, keygroup } => self.on_access(now, *client, *keygroup),
            EventKind::ReportFlush { client } => {
                let state = self
                    .clients
                    .get_mut(client)
                    .expect("flush scheduled for a known client");
                let report = state.flush_report(now);
                if !report.is_empty() {
                    self.deliver(&report)?;
                }
                self.reschedule(
                    now + self.sim.report_interval_s,
                    EventKind::ReportFlush { client: *client },
                );
                Ok(())
            }
            EventKind::PredictTick { node, periodic } => {
                if *periodic {
                    self.reschedule(
                        now + self.sim.predict_interval_s,
                        EventKind::PredictTick {
                            node: *node,
                            periodic: true,
                        },
                    );
                }
                self.on_tick(now, *node)
            }
            EventKind::TransferComplete { job } => {
                self.store.complete_transfer(job);
                Ok(())
            }
            EventKind::End => {
                self.done = true;
                Ok(())
            }
        }
    }

    fn reschedule(&mut self, at: f64, kind: EventKind) {
        if at < self.end_at {
            self.queue.push(at, kind);
        }
    }

    fn on_move(
        &mut self,
        now: f64,
        client: ClientId,
        position: Point,
        hint: Option<GeoHint>,
    ) -> Result<(), SimError> {
        let topology = Arc::clone(self.store.topology());
        let Some(state) = self.clients.get_mut(&client) else {
            let mut state = ClientState::new(client, position, now, &topology, self.client_config);
            if let Some(hint) = hint {
                state.submit_hint(hint)?;
            }
            let report = state.flush_report(now);
            self.hosts.insert(client, report.to);
            self.clients.insert(client, state);
            self.deliver(&report)?;
            self.reschedule(
                now + self.sim.report_interval_s,
                EventKind::ReportFlush { client },
            );
            return Ok(());
        };
        if let Some(hint) = hint {
            state.submit_hint(hint)?;
        }
        let Some(transition) = state.move_to(position, now, &topology)? else {
            return Ok(());
        };
        let report = state.flush_report(now);
        if let Some(audit) = self.audit.as_mut() {
            let adjacent = topology.is_adjacent_move(transition.from, transition.to)?;
            if adjacent == transition.teleport {
                audit.violations.push(format!(
                    "t={now}: client {} moved {} -> {} with teleport={} but adjacency={adjacent}",
                    client.0, transition.from.0, transition.to.0, transition.teleport
                ));
            }
        }
        self.deliver(&report)?;
        self.queue.push(
            now,
            EventKind::PredictTick {
                node: transition.to,
                periodic: false,
            },
        );
        Ok(())
    }

    /// Hands the client's context over if it changed section, then ingests the report.
    fn deliver(&mut self, report: &MiddlewareReport) -> Result<(), SimError> {
        let host = self.hosts.get(&report.client).copied().unwrap_or(report.to);
        if host != report.to {
            if let Some(handoff) = self.predictors[host.index()].release(report.client) {
                self.predictors[report.to.index()].adopt(report.client, handoff);
            }
        }
        self.hosts.insert(report.client, report.to);
        let topology = Arc::clone(self.store.topology());
        self.predictors[report.to.index()].ingest(report, &topology)?;
        Ok(())
    }

    fn on_access(
        &mut self,
        now: f64,
        client: ClientId,
        keygroup: KeygroupId,
    ) -> Result<(), SimError> {
        let state = self
            .clients
            .get_mut(&client)
            .expect("moves precede accesses of the same row");
        let record = state.record_access(keygroup, AccessKind::Read, now)?;
        let outcome = self
            .store
            .route_access(record.node, keygroup, AccessKind::Read, now)?;
        if now >= self.sim.warmup_s {
            self.tally.latencies.push(outcome.latency_ms);
            if outcome.hit {
                self.tally.hits += 1;
            }
            if outcome.latency_ms > self.cost.sla_threshold_ms {
                self.tally.sla_violations += 1;
            }
        }
        if !outcome.hit {
            let event = StrategyEvent::AccessMiss {
                now,
                client,
                keygroup,
                node: record.node,
            };
            let decisions = on_event(self.strategy, &event, &self.store, &self.cost);
            self.apply(decisions)?;
        }
        Ok(())
    }

    fn on_tick(&mut self, now: f64, node: NodeId) -> Result<(), SimError> {
        let topology = Arc::clone(self.store.topology());
        let outlooks = self.predictors[node.index()].tick(now, &topology)?;
        if outlooks.is_empty() {
            return Ok(());
        }
        if let Some(audit) = self.audit.as_mut() {
            for o in &outlooks {
                let allowed = topology.candidate_set(o.current)?;
                for p in [&o.prediction, &o.markov] {
                    if let Some(n) = p.support().find(|n| !allowed.contains(n)) {
                        audit.violations.push(format!(
                            "t={now}: prediction for client {} at {} includes non-adjacent node {}",
                            o.client.0, o.current.0, n.0
                        ));
                    }
                }
            }
        }
        let event = StrategyEvent::Tick {
            now,
            node,
            outlooks: &outlooks,
        };
        let decisions = on_event(self.strategy, &event, &self.store, &self.cost);
        if let Some(log) = self.predictions.as_mut() {
            log.extend(outlooks.into_iter().map(|outlook| PredictionRecord {
                at: now,
                node,
                outlook,
            }));
        }
        self.apply(decisions)
    }

    fn apply(&mut self, decisions: Vec<PlacementDecision>) -> Result<(), SimError> {
        let now = self.now;
        for d in decisions {
            match d.action {
                Action::Replicate => {
                    let outcome = self.store.create_replica(
                        d.keygroup,
                        d.node,
                        now,
                        self.sim.bandwidth_bytes_per_s,
                        self.sim.setup_delay_s,
                    )?;
                    if let CreateOutcome::Started(job) = outcome {
                        self.tally.bytes_transferred += job.bytes;
                        self.tally.replicate += 1;
                        self.queue
                            .push(job.completes_at, EventKind::TransferComplete { job });
                    }
                }
                Action::Evict => {
                    if let RemoveOutcome::Removed(replica) =
                        self.store.remove_replica(d.keygroup, d.node)?
                    {
                        self.tally.evict += 1;
                        if replica.accesses == 0 {
                            self.tally.wasted += 1;
                        }
                    }
                }
                Action::Hold => {
                    self.tally.hold += 1;
                    if d.reason == Reason::Restriction {
                        self.tally.restriction_denials += 1;
                    }
                }
            }
            self.decisions.push(DecisionRecord {
                time: now,
                keygroup: d.keygroup,
                node: d.node,
                action: d.action,
                benefit: d.benefit,
                cost: d.cost,
                reason: d.reason,
            });
        }
        Ok(())
    }

    fn check(&mut self) {
        let Some(audit) = self.audit.as_mut() else {
            return;
        };
        audit.events_checked += 1;
        let now = self.now;
        audit.violations.extend(
            self.store
                .audit()
                .into_iter()
                .map(|v| format!("t={now}: {v}")),
        );
        for kg in self.store.keygroups() {
            let map = self.store.replicas(kg.id).expect("known keygroup");
            audit
                .ever_placed
                .extend(map.nodes().into_iter().map(|n| (kg.id, n)));
        }
    }
}

/// Runs a scenario to completion. The simulation itself draws no random numbers;
/// seeds only matter for generating the trace.
pub fn run(setup: SimSetup) -> Result<SimOutput, SimError> {
    Simulation::new(setup)?.run_to_end()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::fixtures::{line, triangle};
    use crate::topology::Zone;

    fn keygroup(home: u32) -> Keygroup {
        Keygroup {
            id: KeygroupId(0),
            size_bytes: 1_000,
            allowed_zones: BTreeSet::from([Zone::new("EU").unwrap()]),
            owner: ClientId(0),
            home: NodeId(home),
        }
    }

    fn row(t: f64, p: Point) -> TraceRow {
        TraceRow::new(ClientId(0), t, p).with_access(KeygroupId(0))
    }

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::default();
        q.push(5.0, EventKind::End);
        q.push(
            5.0,
            EventKind::ReportFlush {
                client: ClientId(1),
            },
        );
        q.push(
            1.0,
            EventKind::ReportFlush {
                client: ClientId(2),
            },
        );
        let order: Vec<u64> = std::iter::from_fn(|| q.pop()).map(|e| e.seq).collect();
        assert_eq!(order, vec![2, 0, 1]);
    }

    #[test]
    fn empty_trace_is_vacuous() {
        let setup = SimSetup::new(
            Arc::new(triangle()),
            vec![keygroup(0)],
            vec![],
            StrategyKind::Predictive,
        );
        let out = run(setup).unwrap();
        assert_eq!(out.metrics.accesses, 0);
        assert_eq!(out.metrics.hit_ratio, 1.0);
        assert_eq!(out.metrics.bytes_transferred, 0);
    }

    #[test]
    fn stationary_client_at_home() {
        let t = Arc::new(triangle());
        let home = t.nodes()[0].position;
        let trace = (0..10).map(|i| row(f64::from(i) * 10.0, home)).collect();
        let out = run(SimSetup::new(
            t,
            vec![keygroup(0)],
            trace,
            StrategyKind::NoReplication,
        ))
        .unwrap();
        assert_eq!(out.metrics.accesses, 10);
        assert_eq!(out.metrics.hit_ratio, 1.0);
        assert_eq!(out.metrics.mean_latency_ms, 5.0);
    }

    #[test]
    fn trace_errors_surface_before_start() {
        let t = Arc::new(line(3));
        let bad_kg =
            vec![TraceRow::new(ClientId(0), 0.0, Point::new(0.0, 0.0)).with_access(KeygroupId(9))];
        let err = Simulation::new(SimSetup::new(
            Arc::clone(&t),
            vec![keygroup(0)],
            bad_kg,
            StrategyKind::Predictive,
        ));
        assert!(matches!(err, Err(SimError::InvalidTrace(_))));

        let foreign =
            vec![TraceRow::new(ClientId(4), 0.0, Point::new(0.0, 0.0)).with_access(KeygroupId(0))];
        let err = Simulation::new(SimSetup::new(
            Arc::clone(&t),
            vec![keygroup(0)],
            foreign,
            StrategyKind::Predictive,
        ));
        assert!(matches!(err, Err(SimError::InvalidTrace(_))));

        let mut hinted = TraceRow::new(ClientId(0), 0.0, Point::new(0.0, 0.0));
        hinted = hinted.with_hint(GeoHint::new(NodeId(7), 0.0, 10.0, 0.5).unwrap());
        let err = Simulation::new(SimSetup::new(
            t,
            vec![keygroup(0)],
            vec![hinted],
            StrategyKind::Predictive,
        ));
        assert!(matches!(err, Err(SimError::InvalidTrace(_))));
    }

    #[test]
    fn decisions_csv_format() {
        let r = DecisionRecord {
            time: 2.5,
            keygroup: KeygroupId(1),
            node: NodeId(2),
            action: Action::Hold,
            benefit: 0.0,
            cost: 0.125,
            reason: Reason::Restriction,
        };
        assert_eq!(
            decisions_csv(&[r]),
            format!("{DECISIONS_HEADER}\n2.5,1,2,hold,0,0.125,restriction\n")
        );
    }
}
