//! Edge-side next-node prediction.
//!
//! Each edge node keeps a context per client it currently hosts: a transition-count
//! model over adjacent sections, the latest dead-reckoning samples, pending geo-hints,
//! and per-keygroup access-rate estimates. When a client crosses into a neighboring
//! section its context is handed to the new node. A teleport (non-adjacent reappearance)
//! wipes the client's transition counts; everything else carries over.
//!
//! Every prediction is confined to the current node and its neighbors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientId, GeoHint, MiddlewareReport, NodeTransition, PositionSample};
use crate::store::KeygroupId;
use crate::topology::{NodeId, Point, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("transition {from} -> {to} is not adjacent but not flagged as teleport")]
    NotAdjacent { from: NodeId, to: NodeId },
    #[error("no prediction source is present with a positive weight")]
    NoInput,
    #[error("weights must be non-negative and finite")]
    InvalidWeight,
    #[error("inputs disagree on the current node")]
    MixedCurrent,
    #[error("combined distribution has no mass on the candidate set")]
    EmptySupport,
    #[error("inter-access interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("report for node {to} delivered to node {at}")]
    Misrouted { to: NodeId, at: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Markov,
    Direction,
    Hint,
    Combined,
}

/// Probability distribution over the client's next node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub current: NodeId,
    pub horizon_s: f64,
    /// Only strictly positive entries are stored.
    pub distribution: BTreeMap<NodeId, f64>,
    pub source: PredictionSource,
}

impl Prediction {
    pub fn point_mass(
        current: NodeId,
        node: NodeId,
        horizon_s: f64,
        source: PredictionSource,
    ) -> Self {
        Prediction {
            current,
            horizon_s,
            distribution: BTreeMap::from([(node, 1.0)]),
            source,
        }
    }

    pub fn probability(&self, node: NodeId) -> f64 {
        self.distribution.get(&node).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.distribution.keys().copied()
    }

    pub fn total(&self) -> f64 {
        self.distribution.values().sum()
    }

    pub fn most_likely(&self) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for (&n, &p) in &self.distribution {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((n, p));
            }
        }
        best.map(|(n, _)| n)
    }
}

/// Per-client transition counts between sections, including dwell self-transitions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TransitionModel {
    counts: BTreeMap<NodeId, BTreeMap<NodeId, u64>>,
}

impl TransitionModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, from: NodeId, to: NodeId) -> u64 {
        self.counts
            .get(&from)
            .and_then(|m| m.get(&to))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &BTreeMap<NodeId, BTreeMap<NodeId, u64>> {
        &self.counts
    }

    /// Counts an adjacent transition. A teleport clears the model instead.
    pub fn observe(
        &mut self,
        transition: &NodeTransition,
        topology: &Topology,
    ) -> Result<(), PredictorError> {
        let adjacent = topology.is_adjacent_move(transition.from, transition.to)?;
        if transition.teleport {
            self.reset();
            return Ok(());
        }
        if !adjacent {
            return Err(PredictorError::NotAdjacent {
                from: transition.from,
                to: transition.to,
            });
        }
        *self
            .counts
            .entry(transition.from)
            .or_default()
            .entry(transition.to)
            .or_default() += 1;
        Ok(())
    }

    /// The client was seen in the same section at two consecutive ticks.
    pub fn observe_stay(&mut self, node: NodeId) {
        *self
            .counts
            .entry(node)
            .or_default()
            .entry(node)
            .or_default() += 1;
    }

    pub fn reset(&mut self) {
        self.counts.clear();
    }

    /// Laplace-smoothed next-node distribution over the current node and its neighbors.
    pub fn predict(
        &self,
        current: NodeId,
        topology: &Topology,
        alpha: f64,
    ) -> Result<Prediction, PredictorError> {
        let candidates = topology.candidate_set(current)?;
        let row = self.counts.get(&current);
        let count = |c: &NodeId| row.and_then(|r| r.get(c)).copied().unwrap_or(0) as f64;
        let total: f64 = candidates.iter().map(count).sum();
        let denom = total + alpha * candidates.len() as f64;
        let distribution = candidates
            .iter()
            .map(|c| (*c, (count(c) + alpha) / denom))
            .filter(|(_, p)| *p > 0.0)
            .collect();
        Ok(Prediction {
            current,
            horizon_s: 0.0,
            distribution,
            source: PredictionSource::Markov,
        })
    }
}

/// Dead reckoning: fits a velocity to the samples by least squares and projects the
/// last position `horizon_s` ahead. Returns `None` if the samples are degenerate or the
/// projection lands beyond the neighboring sections.
pub fn direction_predict(
    samples: &[PositionSample],
    current: NodeId,
    horizon_s: f64,
    topology: &Topology,
) -> Option<Prediction> {
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len() as f64;
    let t_mean = samples.iter().map(|s| s.at).sum::<f64>() / n;
    let x_mean = samples.iter().map(|s| s.position.x).sum::<f64>() / n;
    let y_mean = samples.iter().map(|s| s.position.y).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut stx = 0.0;
    let mut sty = 0.0;
    for s in samples {
        let dt = s.at - t_mean;
        stt += dt * dt;
        stx += dt * (s.position.x - x_mean);
        sty += dt * (s.position.y - y_mean);
    }
    if !(stt > 0.0) {
        return None;
    }
    let last = samples.last()?.position;
    let projected = Point::new(
        last.x + stx / stt * horizon_s,
        last.y + sty / stt * horizon_s,
    );
    if !(projected.x.is_finite() && projected.y.is_finite()) {
        return None;
    }
    let candidate = topology.closest_node(projected);
    if topology.is_adjacent_move(current, candidate).ok()? {
        Some(Prediction::point_mass(
            current,
            candidate,
            horizon_s,
            PredictionSource::Direction,
        ))
    } else {
        None
    }
}

/// Picks the most confident hint active within `[now, now + horizon_s]` that targets the
/// current node or a neighbor (earliest window start breaks ties).
pub fn hint_predict(
    hints: &[GeoHint],
    now: f64,
    current: NodeId,
    horizon_s: f64,
    topology: &Topology,
) -> Option<Prediction> {
    let mut best: Option<&GeoHint> = None;
    for hint in hints {
        if !hint.overlaps(now, now + horizon_s) {
            continue;
        }
        match topology.is_adjacent_move(current, hint.target) {
            Ok(true) => {}
            _ => {
                log::debug!(
                    "ignoring hint for non-adjacent node {} from node {current}",
                    hint.target
                );
                continue;
            }
        }
        let better = match best {
            None => true,
            Some(b) => {
                hint.confidence > b.confidence
                    || (hint.confidence == b.confidence && hint.start < b.start)
            }
        };
        if better {
            best = Some(hint);
        }
    }
    let hint = best?;
    let mut distribution = BTreeMap::new();
    if hint.target == current {
        distribution.insert(current, 1.0);
    } else {
        if hint.confidence > 0.0 {
            distribution.insert(hint.target, hint.confidence);
        }
        if hint.confidence < 1.0 {
            distribution.insert(current, 1.0 - hint.confidence);
        }
    }
    Some(Prediction {
        current,
        horizon_s,
        distribution,
        source: PredictionSource::Hint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub markov: f64,
    pub direction: f64,
    pub hint: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            markov: 1.0,
            direction: 0.5,
            hint: 2.0,
        }
    }
}

/// Weighted mixture of the available predictions, restricted to the candidate set of
/// the shared current node and renormalized.
pub fn combine(
    markov: Option<&Prediction>,
    direction: Option<&Prediction>,
    hint: Option<&Prediction>,
    weights: Weights,
    topology: &Topology,
) -> Result<Prediction, PredictorError> {
    for w in [weights.markov, weights.direction, weights.hint] {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(PredictorError::InvalidWeight);
        }
    }
    let inputs: Vec<(&Prediction, f64)> = [
        (markov, weights.markov),
        (direction, weights.direction),
        (hint, weights.hint),
    ]
    .into_iter()
    .filter_map(|(p, w)| p.map(|p| (p, w)))
    .filter(|(_, w)| *w > 0.0)
    .collect();
    let Some((first, _)) = inputs.first() else {
        return Err(PredictorError::NoInput);
    };
    let current = first.current;
    if inputs.iter().any(|(p, _)| p.current != current) {
        return Err(PredictorError::MixedCurrent);
    }
    let candidates = topology.candidate_set(current)?;

    if inputs.len() == 1 && first.support().all(|n| candidates.contains(&n)) {
        return Ok((*first).clone());
    }

    let mut acc: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (p, w) in &inputs {
        for (&node, &prob) in &p.distribution {
            if candidates.contains(&node) {
                *acc.entry(node).or_default() += w * prob;
            }
        }
    }
    let total: f64 = acc.values().sum();
    if !(total > 0.0) {
        return Err(PredictorError::EmptySupport);
    }
    let distribution = acc
        .into_iter()
        .map(|(n, v)| (n, v / total))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let source = if inputs.len() == 1 {
        first.source
    } else {
        PredictionSource::Combined
    };
    let horizon_s = inputs.iter().map(|(p, _)| p.horizon_s).fold(0.0, f64::max);
    Ok(Prediction {
        current,
        horizon_s,
        distribution,
        source,
    })
}

/// EWMA of inter-access intervals for one (client, keygroup).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RateEstimate {
    /// `None` until at least one interval (two accesses) has been seen.
    pub ewma_interval_s: Option<f64>,
    /// Intervals folded in so far.
    pub intervals: u64,
}

/// Expected access count over a horizon; `cold` when no rate is known yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedAccesses {
    pub value: f64,
    pub cold: bool,
}

impl RateEstimate {
    pub fn update(&mut self, interval_s: f64, beta: f64) -> Result<(), PredictorError> {
        if !(interval_s > 0.0 && interval_s.is_finite()) {
            return Err(PredictorError::NonPositiveInterval(interval_s));
        }
        self.ewma_interval_s = Some(match self.ewma_interval_s {
            None => interval_s,
            Some(prev) => beta * interval_s + (1.0 - beta) * prev,
        });
        self.intervals += 1;
        Ok(())
    }

    /// Accesses per second.
    pub fn rate(&self) -> Option<f64> {
        self.ewma_interval_s.map(|d| 1.0 / d)
    }

    pub fn expected_accesses(&self, horizon_s: f64) -> ExpectedAccesses {
        match self.rate() {
            Some(rate) => ExpectedAccesses {
                value: rate * horizon_s,
                cold: false,
            },
            None => ExpectedAccesses {
                value: 0.0,
                cold: true,
            },
        }
    }
}

/// Rate estimates keyed by (client, keygroup).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBook {
    beta: f64,
    #[serde(serialize_with = "serialize_rates")]
    estimates: BTreeMap<(ClientId, KeygroupId), RateEstimate>,
}

fn serialize_rates<S: serde::Serializer>(
    map: &BTreeMap<(ClientId, KeygroupId), RateEstimate>,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(map.len()))?;
    for ((client, kg), est) in map {
        seq.serialize_element(&(client, kg, est))?;
    }
    seq.end()
}

impl RateBook {
    pub fn new(beta: f64) -> Self {
        RateBook {
            beta,
            estimates: BTreeMap::new(),
        }
    }

    pub fn update_rate(
        &mut self,
        client: ClientId,
        keygroup: KeygroupId,
        interval_s: f64,
    ) -> Result<RateEstimate, PredictorError> {
        let entry = self.estimates.entry((client, keygroup)).or_default();
        entry.update(interval_s, self.beta)?;
        Ok(*entry)
    }

    pub fn estimate(&self, client: ClientId, keygroup: KeygroupId) -> RateEstimate {
        self.estimates
            .get(&(client, keygroup))
            .copied()
            .unwrap_or_default()
    }

    pub fn for_client(&self, client: ClientId) -> BTreeMap<KeygroupId, RateEstimate> {
        self.estimates
            .range((client, KeygroupId(0))..=(client, KeygroupId(u32::MAX)))
            .map(|((_, kg), e)| (*kg, *e))
            .collect()
    }

    fn take_client(&mut self, client: ClientId) -> BTreeMap<KeygroupId, RateEstimate> {
        let out = self.for_client(client);
        for kg in out.keys() {
            self.estimates.remove(&(client, *kg));
        }
        out
    }

    fn insert_client(&mut self, client: ClientId, rates: BTreeMap<KeygroupId, RateEstimate>) {
        for (kg, est) in rates {
            self.estimates.insert((client, kg), est);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorParams {
    /// Laplace smoothing for transition counts.
    pub alpha: f64,
    /// EWMA weight of the newest sample (rates and dwell times).
    pub beta: f64,
    pub weights: Weights,
    /// Lower bound on the prediction horizon.
    pub dwell_floor_s: f64,
}

impl Default for PredictorParams {
    fn default() -> Self {
        PredictorParams {
            alpha: 1.0,
            beta: 0.3,
            weights: Weights::default(),
            dwell_floor_s: 10.0,
        }
    }
}

/// Prediction state an edge node keeps for one hosted client.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClientContext {
    pub current: Option<NodeId>,
    pub model: TransitionModel,
    pub hints: Vec<GeoHint>,
    pub velocity: Vec<PositionSample>,
    pub dwell_ewma_s: Option<f64>,
    pub entered_at: Option<f64>,
    pub moved_since_tick: bool,
    /// Arrival times are the only metadata the edge gathers on its own.
    pub last_report_at: Option<f64>,
    pub reports: u64,
    pub teleports: u64,
}

/// Everything that moves with a client from one edge node to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientHandoff {
    pub context: ClientContext,
    pub rates: BTreeMap<KeygroupId, RateEstimate>,
}

/// Snapshot handed to placement after a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutlook {
    pub client: ClientId,
    pub current: NodeId,
    pub prediction: Prediction,
    pub markov: Prediction,
    pub rates: BTreeMap<KeygroupId, RateEstimate>,
}

/// Prediction component of one edge node.
#[derive(Debug, Clone, Serialize)]
pub struct EdgePredictor {
    pub node: NodeId,
    params: PredictorParams,
    contexts: BTreeMap<ClientId, ClientContext>,
    rates: RateBook,
    pub non_adjacent_hints: u64,
}

impl EdgePredictor {
    pub fn new(node: NodeId, params: PredictorParams) -> Self {
        EdgePredictor {
            node,
            params,
            contexts: BTreeMap::new(),
            rates: RateBook::new(params.beta),
            non_adjacent_hints: 0,
        }
    }

    pub fn hosts(&self, client: ClientId) -> bool {
        self.contexts.contains_key(&client)
    }

    pub fn hosted(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.contexts.keys().copied()
    }

    pub fn context(&self, client: ClientId) -> Option<&ClientContext> {
        self.contexts.get(&client)
    }

    pub fn rates(&self) -> &RateBook {
        &self.rates
    }

    pub fn release(&mut self, client: ClientId) -> Option<ClientHandoff> {
        let context = self.contexts.remove(&client)?;
        Some(ClientHandoff {
            context,
            rates: self.rates.take_client(client),
        })
    }

    pub fn adopt(&mut self, client: ClientId, handoff: ClientHandoff) {
        self.rates.insert_client(client, handoff.rates);
        self.contexts.insert(client, handoff.context);
    }

    /// Folds a middleware report into the client's context.
    pub fn ingest(
        &mut self,
        report: &MiddlewareReport,
        topology: &Topology,
    ) -> Result<(), PredictorError> {
        if report.to != self.node {
            return Err(PredictorError::Misrouted {
                to: report.to,
                at: self.node,
            });
        }
        let beta = self.params.beta;
        let ctx = self.contexts.entry(report.client).or_default();
        if ctx.current.is_none() {
            ctx.current = Some(self.node);
            ctx.entered_at = Some(report.at);
        }
        for tr in &report.recent_transitions {
            ctx.model.observe(tr, topology)?;
            if tr.teleport {
                ctx.teleports += 1;
            }
            if let Some(entered) = ctx.entered_at {
                let dwell = tr.at - entered;
                if dwell > 0.0 {
                    ctx.dwell_ewma_s = Some(match ctx.dwell_ewma_s {
                        None => dwell,
                        Some(prev) => beta * dwell + (1.0 - beta) * prev,
                    });
                }
            }
            ctx.entered_at = Some(tr.at);
            ctx.current = Some(tr.to);
            ctx.moved_since_tick = true;
        }
        ctx.hints.extend(report.hints.iter().copied());
        if !report.velocity_samples.is_empty() {
            ctx.velocity = report.velocity_samples.clone();
        }
        ctx.last_report_at = Some(report.at);
        ctx.reports += 1;
        for (kg, intervals) in &report.access_intervals {
            for &interval in intervals {
                self.rates.update_rate(report.client, *kg, interval)?;
            }
        }
        Ok(())
    }

    fn horizon(&self, ctx: &ClientContext) -> f64 {
        ctx.dwell_ewma_s
            .unwrap_or(0.0)
            .max(self.params.dwell_floor_s)
    }

    /// Runs all prediction sources for every hosted client. A client that has not
    /// changed section since the previous tick contributes one stay observation first.
    pub fn tick(
        &mut self,
        now: f64,
        topology: &Topology,
    ) -> Result<Vec<ClientOutlook>, PredictorError> {
        let params = self.params;
        let mut out = Vec::with_capacity(self.contexts.len());
        let node = self.node;
        let clients: Vec<ClientId> = self.contexts.keys().copied().collect();
        for client in clients {
            let horizon = self.horizon(&self.contexts[&client]);
            let ctx = self.contexts.get_mut(&client).expect("context exists");
            let current = ctx.current.unwrap_or(node);
            if !ctx.moved_since_tick {
                ctx.model.observe_stay(current);
            }
            ctx.moved_since_tick = false;
            ctx.hints.retain(|h| h.end >= now);

            let mut markov = ctx.model.predict(current, topology, params.alpha)?;
            markov.horizon_s = horizon;
            let direction = direction_predict(&ctx.velocity, current, horizon, topology);
            self.non_adjacent_hints += ctx
                .hints
                .iter()
                .filter(|h| h.overlaps(now, now + horizon))
                .filter(|h| {
                    !topology
                        .is_adjacent_move(current, h.target)
                        .unwrap_or(false)
                })
                .count() as u64;
            let hint = hint_predict(&ctx.hints, now, current, horizon, topology);
            let prediction = combine(
                Some(&markov),
                direction.as_ref(),
                hint.as_ref(),
                params.weights,
                topology,
            )?;
            out.push(ClientOutlook {
                client,
                current,
                prediction,
                markov,
                rates: self.rates.for_client(client),
            });
        }
        Ok(out)
    }

    /// Structured dump of the predictor state for debugging.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor state serializes")
    }
}
