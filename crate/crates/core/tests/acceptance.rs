//! Acceptance gate: every criterion prints one PASS/FAIL line; any failure exits nonzero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use fogplace::baselines::StrategyKind;
use fogplace::client::{ClientConfig, ClientId, ClientState, GeoHint};
use fogplace::matrix::{run_matrix, MatrixOptions};
use fogplace::placement::{decide, Action, CostParams};
use fogplace::predictor::{
    ClientOutlook, EdgePredictor, Prediction, PredictionSource, PredictorParams, RateBook,
    RateEstimate, TransitionModel,
};
use fogplace::scenario::{Scenario, ScenarioFile, TraceSection};
use fogplace::sim::{run, SimConfig, SimSetup};
use fogplace::store::{CreateOutcome, Keygroup, KeygroupId, Store};
use fogplace::topology::fixtures::{hop_latency, line, node, triangle};
use fogplace::topology::{FogNode, NodeId, Point, Topology, TopologyConfig, Zone};
use fogplace::trace::{gen_trace, Jump, TraceRow, TraceSpec, WalkParams, Walker};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn eu_keygroup(size_bytes: u64, home: u32) -> Keygroup {
    Keygroup {
        id: KeygroupId(0),
        size_bytes,
        allowed_zones: BTreeSet::from([Zone::new("EU").unwrap()]),
        owner: ClientId(0),
        home: NodeId(home),
    }
}

/// Brute-force nearest node, lowest id on ties.
fn nearest(topology: &Topology, p: Point) -> NodeId {
    let mut best = (f64::INFINITY, NodeId(0));
    for n in topology.nodes() {
        let d = (n.position.x - p.x).powi(2) + (n.position.y - p.y).powi(2);
        if d < best.0 {
            best = (d, n.id);
        }
    }
    best.1
}

// 1 -------------------------------------------------------------------------------------

/// A connected random topology with 1..=8 nodes.
fn random_topology(rng: &mut ChaCha8Rng) -> Topology {
    let n = rng.gen_range(1..=8u32);
    let nodes: Vec<FogNode> = (0..n)
        .map(|i| {
            node(
                i,
                f64::from(i) * 1000.0 + rng.gen_range(0.0..500.0),
                rng.gen_range(0.0..3000.0),
                "EU",
                5.0,
            )
        })
        .collect();
    let mut edges = BTreeSet::new();
    let mut order: Vec<u32> = (0..n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for w in order.windows(2) {
        edges.insert((w[0].min(w[1]), w[0].max(w[1])));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.3) {
                edges.insert((a, b));
            }
        }
    }
    let edges: Vec<(u32, u32)> = edges.into_iter().collect();
    Topology::new(nodes, &edges, hop_latency(n as usize, &edges, 5.0, 10.0)).unwrap()
}

fn adjacency_support_invariant() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAD1);
    let mut predictions = 0u64;
    let mut violations = Vec::new();
    let client = ClientId(0);
    for case in 0..1000 {
        let topology = random_topology(&mut rng);
        let n = topology.len() as u32;
        let positions: Vec<Point> = topology.nodes().iter().map(|x| x.position).collect();
        let mut predictors: Vec<EdgePredictor> = topology
            .node_ids()
            .map(|id| EdgePredictor::new(id, PredictorParams::default()))
            .collect();
        let start = NodeId(rng.gen_range(0..n));
        let mut state = ClientState::new(
            client,
            positions[start.index()],
            0.0,
            &topology,
            ClientConfig::default(),
        );
        let mut host = start;
        predictors[host.index()]
            .ingest(&state.flush_report(0.0), &topology)
            .unwrap();

        let steps = rng.gen_range(0..40);
        for step in 1..=steps {
            let now = f64::from(step) * 7.0;
            let here = state.current_node();
            let next = match rng.gen_range(0..10) {
                0 => NodeId(rng.gen_range(0..n)),
                1..=3 => here,
                _ => {
                    let adj: Vec<NodeId> = topology
                        .adjacent_set(here)
                        .unwrap()
                        .iter()
                        .copied()
                        .collect();
                    if adj.is_empty() {
                        here
                    } else {
                        adj[rng.gen_range(0..adj.len())]
                    }
                }
            };
            if rng.gen_bool(0.2) {
                let target = NodeId(rng.gen_range(0..n));
                let hint = GeoHint::new(
                    target,
                    now,
                    now + rng.gen_range(1.0..50.0),
                    rng.gen_range(0.0..=1.0),
                )
                .unwrap();
                state.submit_hint(hint).unwrap();
            }
            let p = positions[next.index()];
            let jitter = Point::new(
                p.x + rng.gen_range(-1.0..1.0),
                p.y + rng.gen_range(-1.0..1.0),
            );
            state.move_to(jitter, now, &topology).unwrap();
            state
                .record_access(KeygroupId(0), fogplace::store::AccessKind::Read, now)
                .unwrap();
            let report = state.flush_report(now);
            if report.to != host {
                let handoff = predictors[host.index()].release(client).unwrap();
                predictors[report.to.index()].adopt(client, handoff);
                host = report.to;
            }
            predictors[host.index()].ingest(&report, &topology).unwrap();
            for outlook in predictors[host.index()].tick(now, &topology).unwrap() {
                let mut allowed: BTreeSet<NodeId> =
                    topology.adjacent_set(outlook.current).unwrap().clone();
                allowed.insert(outlook.current);
                for p in [&outlook.prediction, &outlook.markov] {
                    predictions += 1;
                    if let Some(bad) = p.support().find(|x| !allowed.contains(x)) {
                        violations.push(format!(
                            "case {case} step {step}: {} not adjacent to {}",
                            bad, outlook.current
                        ));
                    }
                }
            }
        }
    }
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    within(Duration::from_secs(10), started)?;
    Ok(format!(
        "1000 fuzzed cases, {predictions} predictions, 0 violations"
    ))
}

// 2 -------------------------------------------------------------------------------------

fn markov_closed_form() -> Outcome {
    let mut checked = 0;
    for m in [2u32, 3, 5] {
        // Star with hub 0 and m-1 leaves: the hub's candidate set has m members.
        let nodes = (0..m)
            .map(|i| node(i, f64::from(i) * 100.0, f64::from(i % 2) * 50.0, "EU", 5.0))
            .collect();
        let edges: Vec<(u32, u32)> = (1..m).map(|leaf| (0, leaf)).collect();
        let topology =
            Topology::new(nodes, &edges, hop_latency(m as usize, &edges, 5.0, 10.0)).unwrap();
        for n in [1u64, 5, 50] {
            let mut model = TransitionModel::new();
            let tr = fogplace::client::NodeTransition {
                from: NodeId(0),
                to: NodeId(1),
                at: 0.0,
                teleport: false,
            };
            for _ in 0..n {
                model.observe(&tr, &topology).unwrap();
            }
            let got = model
                .predict(NodeId(0), &topology, 1.0)
                .unwrap()
                .probability(NodeId(1));
            let want = (n as f64 + 1.0) / (n as f64 + f64::from(m));
            ensure((got - want).abs() <= 1e-12, || {
                format!("n={n} m={m}: got {got}, want {want}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (n, m) pairs match (n+1)/(n+m)"))
}

// 3, 4 ----------------------------------------------------------------------------------

const COMMUTER_SIZE: u64 = 1_000_000;
const COMMUTER_WARMUP: f64 = 900.0;

fn commuter_trace(topology: &Topology) -> Vec<TraceRow> {
    let spec = TraceSpec::CyclicCommuter {
        client: 0,
        keygroup: 0,
        nodes: vec![0, 1, 2],
        dwell_s: 100.0,
        access_interval_s: 10.0,
        cycles: 10,
    };
    gen_trace(&spec, topology, 0).unwrap()
}

fn commuter_setup(strategy: StrategyKind) -> SimSetup {
    let topology = Arc::new(triangle());
    let trace = commuter_trace(&topology);
    let mut setup = SimSetup::new(
        topology,
        vec![eu_keygroup(COMMUTER_SIZE, 0)],
        trace,
        strategy,
    );
    setup.sim = SimConfig {
        // 10 s per transfer.
        bandwidth_bytes_per_s: COMMUTER_SIZE as f64 / 10.0,
        warmup_s: COMMUTER_WARMUP,
        ..SimConfig::default()
    };
    setup.audit = true;
    setup
}

fn commuter_win() -> Outcome {
    let started = Instant::now();
    let predictive = run(commuter_setup(StrategyKind::Predictive)).map_err(|e| e.to_string())?;
    let reactive =
        run(commuter_setup(StrategyKind::ReactiveFollowMe)).map_err(|e| e.to_string())?;
    within(Duration::from_secs(5), started)?;
    let (p, r) = (predictive.metrics.hit_ratio, reactive.metrics.hit_ratio);
    // Hand count for the reactive baseline after warmup: the home dwell always hits; each
    // away dwell misses its first access and the one that coincides with transfer completion.
    let hand = (10.0 + 8.0 + 8.0) / 30.0;
    for out in [&predictive, &reactive] {
        let audit = out.audit.as_ref().unwrap();
        ensure(audit.violations.is_empty(), || audit.violations[0].clone())?;
    }
    ensure(p >= 0.95, || format!("Predictive hit_ratio {p} < 0.95"))?;
    ensure(r <= 0.92, || {
        format!("ReactiveFollowMe hit_ratio {r} > 0.92")
    })?;
    Ok(format!(
        "Predictive {p:.4} >= 0.95, ReactiveFollowMe {r:.4} <= 0.92 (hand count {hand:.4}), {} accesses each",
        predictive.metrics.accesses
    ))
}

fn baseline_extremes() -> Outcome {
    let full = run(commuter_setup(StrategyKind::FullReplication)).map_err(|e| e.to_string())?;
    let none = run(commuter_setup(StrategyKind::NoReplication)).map_err(|e| e.to_string())?;

    let topology = triangle();
    let trace = commuter_trace(&topology);
    let measured: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| r.access_kg.is_some() && r.t >= COMMUTER_WARMUP)
        .collect();
    let at_home = measured
        .iter()
        .filter(|r| nearest(&topology, r.position()) == NodeId(0))
        .count();
    let expected_none = at_home as f64 / measured.len() as f64;
    let expected_bytes = COMMUTER_SIZE * (topology.len() as u64 - 1);

    let f = &full.metrics;
    ensure(f.hit_ratio == 1.0, || {
        format!("FullReplication hit_ratio {}", f.hit_ratio)
    })?;
    ensure(f.bytes_transferred == expected_bytes, || {
        format!(
            "FullReplication bytes {} != {expected_bytes}",
            f.bytes_transferred
        )
    })?;
    let n = &none.metrics;
    ensure(n.accesses == measured.len() as u64, || {
        format!(
            "{} accesses measured, trace has {}",
            n.accesses,
            measured.len()
        )
    })?;
    ensure(n.hit_ratio == expected_none, || {
        format!(
            "NoReplication hit_ratio {} != {at_home}/{}",
            n.hit_ratio,
            measured.len()
        )
    })?;
    ensure(n.bytes_transferred == 0, || {
        "NoReplication moved data".into()
    })?;
    Ok(format!(
        "FullReplication 1.0 with {} bytes = size*(N-1); NoReplication {}/{} = {:.4}",
        f.bytes_transferred,
        at_home,
        measured.len(),
        n.hit_ratio
    ))
}

// 5 -------------------------------------------------------------------------------------

fn zone_safety() -> Outcome {
    let mut topology = TopologyConfig::from(&triangle());
    topology.nodes[2].zone = "US".into();
    let topology = Arc::new(topology.build().unwrap());
    let forbidden = NodeId(2);
    let spec = TraceSpec::RandomAdjacentWaypoint(WalkParams {
        clients: vec![Walker {
            client: 0,
            keygroup: 0,
            start_node: 0,
        }],
        duration_s: 3000.0,
        dwell_min_s: 50.0,
        dwell_max_s: 150.0,
        access_interval_s: 10.0,
        jitter_m: 100.0,
    });
    let mut denials: BTreeMap<StrategyKind, u64> = BTreeMap::new();
    let mut events = 0;
    for seed in 0..10 {
        let trace = gen_trace(&spec, &topology, seed).unwrap();
        ensure(
            trace
                .iter()
                .any(|r| nearest(&topology, r.position()) == forbidden),
            || format!("seed {seed} never visits the restricted node"),
        )?;
        for strategy in StrategyKind::ALL {
            let mut setup = SimSetup::new(
                Arc::clone(&topology),
                vec![eu_keygroup(1_000_000, 0)],
                trace.clone(),
                strategy,
            );
            setup.audit = true;
            let out = run(setup).map_err(|e| format!("{strategy} seed {seed}: {e}"))?;
            let audit = out.audit.unwrap();
            events += audit.events_checked;
            ensure(audit.violations.is_empty(), || {
                format!("{strategy} seed {seed}: {}", audit.violations[0])
            })?;
            ensure(
                !audit.ever_placed.iter().any(|&(_, n)| n == forbidden),
                || format!("{strategy} seed {seed} placed a replica on the restricted node"),
            )?;
            *denials.entry(strategy).or_default() += out.metrics.restriction_denials;
            if strategy != StrategyKind::NoReplication {
                ensure(out.metrics.restriction_denials > 0, || {
                    format!("{strategy} seed {seed}: no restriction denials")
                })?;
            }
        }
    }
    Ok(format!(
        "{events} audited events, 0 replicas on restricted node; denials {denials:?}"
    ))
}

// 6 -------------------------------------------------------------------------------------

struct Instance {
    store: Store,
    outlook: ClientOutlook,
    params: CostParams,
    expected_accesses: f64,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=3u32);
    let size = rng.gen_range(1..=3u64);
    let local: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
    let nodes: Vec<FogNode> = (0..n)
        .map(|i| {
            let zone = if i == 0 || rng.gen_bool(0.7) {
                "EU"
            } else {
                "US"
            };
            let mut fog = node(i, f64::from(i) * 100.0, 0.0, zone, local[i as usize]);
            fog.storage_capacity = if i == 0 {
                1 << 20
            } else {
                rng.gen_range(1..=6)
            };
            fog
        })
        .collect();
    let mut latency = vec![0.0; (n * n) as usize];
    for a in 0..n as usize {
        latency[a * n as usize + a] = local[a];
        for b in a + 1..n as usize {
            let l = local[a].max(local[b]) + rng.gen_range(0.0..40.0);
            latency[a * n as usize + b] = l;
            latency[b * n as usize + a] = l;
        }
    }
    let mut edges: Vec<(u32, u32)> = (1..n).map(|i| (i - 1, i)).collect();
    if n == 3 && rng.gen_bool(0.5) {
        edges.push((0, 2));
    }
    let topology = Arc::new(Topology::new(nodes, &edges, latency).unwrap());

    let mut store = Store::new(Arc::clone(&topology), vec![eu_keygroup(size, 0)]).unwrap();
    if n > 1 && rng.gen_bool(0.4) {
        let extra = NodeId(rng.gen_range(1..n));
        if let Ok(CreateOutcome::Started(job)) =
            store.create_replica(KeygroupId(0), extra, 0.0, 1.0, 0.0)
        {
            store.complete_transfer(&job);
        }
    }

    let current = NodeId(rng.gen_range(0..n));
    let mut candidates: Vec<NodeId> = topology
        .adjacent_set(current)
        .unwrap()
        .iter()
        .copied()
        .collect();
    candidates.push(current);
    let weights: Vec<(NodeId, f64)> = candidates
        .into_iter()
        .map(|c| {
            (
                c,
                if rng.gen_bool(0.8) {
                    rng.gen_range(0.0..1.0)
                } else {
                    0.0
                },
            )
        })
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum::<f64>().max(1e-9);
    let distribution: BTreeMap<NodeId, f64> = weights
        .into_iter()
        .filter(|w| w.1 > 0.0)
        .map(|(c, w)| (c, w / total))
        .collect();
    let prediction = Prediction {
        current,
        horizon_s: 1.0,
        distribution,
        source: PredictionSource::Combined,
    };

    let params = CostParams {
        c_net: rng.gen_range(0.0..1.0),
        c_store: rng.gen_range(0.0..1.0),
        c_consistency: rng.gen_range(0.0..1.0),
        c_latency: rng.gen_range(0.0..1.0),
        sla_threshold_ms: rng.gen_range(0.0..50.0),
        c_sla: rng.gen_range(0.0..1.0),
        horizon_s: rng.gen_range(0.1..1.0),
        replicate_margin: rng.gen_range(1.0..2.0),
        eviction_idle_s: 120.0,
        resiliency_bonus: rng.gen_range(0.0..1.0),
    };
    let interval = rng.gen_range(0.01..0.5);
    let expected_accesses = params.horizon_s / interval;
    let rates = BTreeMap::from([(
        KeygroupId(0),
        RateEstimate {
            ewma_interval_s: Some(interval),
            intervals: 1,
        },
    )]);
    let outlook = ClientOutlook {
        client: ClientId(0),
        current,
        markov: prediction.clone(),
        prediction,
        rates,
    };
    Instance {
        store,
        outlook,
        params,
        expected_accesses,
    }
}

/// Exhaustive minimum of total expected cost over feasible replica additions.
///
/// Cost of a set A = per added replica (margin * replication cost - bonus), plus for every
/// predicted node n: p(n) * E * (c_latency * lat(n) + c_sla * [lat(n) > sla]), where lat(n)
/// is the local latency if n holds a replica after adding A and the best latency to a
/// ready replica otherwise.
fn oracle(inst: &Instance) -> BTreeSet<NodeId> {
    let topo = inst.store.topology();
    let kg = inst.store.keygroup(KeygroupId(0)).unwrap();
    let p = &inst.params;
    let ready: Vec<NodeId> = inst
        .store
        .replicas(KeygroupId(0))
        .unwrap()
        .ready_nodes()
        .collect();
    let present = inst.store.replicas(KeygroupId(0)).unwrap().nodes();
    let dist = &inst.outlook.prediction.distribution;
    let feasible: Vec<NodeId> = dist
        .keys()
        .copied()
        .filter(|n| !present.contains(n))
        .filter(|&n| kg.allowed_zones.contains(&topo.nodes()[n.index()].zone))
        .filter(|&n| inst.store.free_bytes(n) >= kg.size_bytes)
        .collect();
    let rc = p.c_net * kg.size_bytes as f64
        + (p.c_store * kg.size_bytes as f64 + p.c_consistency) * p.horizon_s;
    let e = inst.expected_accesses;

    let mut best: Option<(f64, Vec<NodeId>)> = None;
    for mask in 0u32..(1 << feasible.len()) {
        let chosen: Vec<NodeId> = (0..feasible.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| feasible[i])
            .collect();
        let mut cost = chosen.len() as f64 * (p.replicate_margin * rc - p.resiliency_bonus);
        for (&n, &prob) in dist {
            let lat = if chosen.contains(&n) || ready.contains(&n) {
                topo.local_latency(n)
            } else {
                ready
                    .iter()
                    .map(|&r| topo.latency(n, r))
                    .fold(f64::INFINITY, f64::min)
            };
            let sla = if lat > p.sla_threshold_ms { 1.0 } else { 0.0 };
            cost += prob * e * (p.c_latency * lat + p.c_sla * sla);
        }
        let better = match &best {
            None => true,
            Some((c, set)) => {
                cost < *c || (cost == *c && (chosen.len(), &chosen) < (set.len(), set))
            }
        };
        if better {
            best = Some((cost, chosen));
        }
    }
    best.map(|b| b.1.into_iter().collect()).unwrap_or_default()
}

fn decision_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut replicated = 0;
    let mut empty = 0;
    for case in 0..100 {
        let inst = random_instance(&mut rng);
        let decisions = decide(
            &inst.store,
            std::slice::from_ref(&inst.outlook),
            &inst.params,
            0.0,
        );
        ensure(!decisions.iter().any(|d| d.action == Action::Evict), || {
            format!("case {case}: unexpected eviction")
        })?;
        let chosen: BTreeSet<NodeId> = decisions
            .iter()
            .filter(|d| d.action == Action::Replicate)
            .map(|d| d.node)
            .collect();
        let want = oracle(&inst);
        ensure(chosen == want, || {
            format!("case {case}: decide chose {chosen:?}, oracle {want:?}")
        })?;
        if want.is_empty() {
            empty += 1;
        } else {
            replicated += 1;
        }
    }
    within(Duration::from_secs(5), started)?;
    Ok(format!(
        "100/100 match ({replicated} with replications, {empty} without)"
    ))
}

// 7 -------------------------------------------------------------------------------------

fn determinism_scenario(out_dir: &Path) -> Scenario {
    let mut topology = TopologyConfig::from(&line(5));
    topology.nodes[4].zone = "US".into();
    let file = ScenarioFile {
        name: "walk".into(),
        topology_file: None,
        topology: Some(topology),
        keygroups: vec![eu_keygroup(500_000, 1)],
        trace: TraceSection {
            file: None,
            generator: Some(TraceSpec::Teleporter {
                walk: WalkParams {
                    clients: vec![Walker {
                        client: 0,
                        keygroup: 0,
                        start_node: 0,
                    }],
                    duration_s: 4000.0,
                    dwell_min_s: 30.0,
                    dwell_max_s: 200.0,
                    access_interval_s: 7.0,
                    jitter_m: 40.0,
                },
                jumps: vec![Jump {
                    client: 0,
                    at_s: 2000.0,
                    node: 3,
                }],
            }),
        },
        strategies: StrategyKind::ALL
            .iter()
            .map(|s| s.name().to_string())
            .collect(),
        seeds: vec![1, 2, 3],
        out_dir: out_dir.to_path_buf(),
        cost: CostParams::default(),
        predictor: PredictorParams::default(),
        client: ClientConfig::default(),
        sim: SimConfig {
            bandwidth_bytes_per_s: 1e5,
            ..SimConfig::default()
        },
    };
    Scenario::from_file(file, Path::new(".")).unwrap()
}

fn digest_dir(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                let hash: String = Sha256::digest(&bytes)
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect();
                out.insert(rel, hash);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_matrix(&determinism_scenario(&a), &MatrixOptions::default()).map_err(|e| e.to_string())?;
    run_matrix(&determinism_scenario(&b), &MatrixOptions::default()).map_err(|e| e.to_string())?;
    let (ha, hb) = (digest_dir(&a)?, digest_dir(&b)?);
    ensure(ha.len() == 15, || {
        format!(
            "expected metrics, marker, summary and 12 decision logs, got {}",
            ha.len()
        )
    })?;
    ensure(ha == hb, || {
        let diff: Vec<_> = ha
            .iter()
            .filter(|(k, v)| hb.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        format!("outputs differ: {diff:?}")
    })?;
    Ok(format!(
        "{} files byte-identical across two runs (12 strategy x seed cells)",
        ha.len()
    ))
}

// 8 -------------------------------------------------------------------------------------

fn rate_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut betas = vec![1e-6, 0.001, 0.01, 0.1, 0.3, 0.5, 0.9, 1.0];
    betas.extend((0..200).map(|_| rng.gen_range(1e-6..=1.0)));
    let mut worst = 0.0f64;
    for &beta in &betas {
        let mut estimate = RateEstimate::default();
        let mut book = RateBook::new(beta);
        for _ in 0..50 {
            estimate.update(10.0, beta).map_err(|e| e.to_string())?;
            book.update_rate(ClientId(0), KeygroupId(0), 10.0)
                .map_err(|e| e.to_string())?;
        }
        for lambda in [
            estimate.rate(),
            book.estimate(ClientId(0), KeygroupId(0)).rate(),
        ] {
            let lambda = lambda.ok_or("no rate after 50 samples")?;
            let rel = (lambda - 0.1).abs() / 0.1;
            worst = worst.max(rel);
            ensure(rel < 0.01, || format!("beta {beta}: rate {lambda}"))?;
        }
    }
    Ok(format!(
        "{} betas in (0, 1], worst relative error {worst:e}",
        betas.len()
    ))
}

// 9 -------------------------------------------------------------------------------------

fn teleport_reset() -> Outcome {
    let topology = Arc::new(line(7));
    let spec = TraceSpec::Teleporter {
        walk: WalkParams {
            clients: vec![Walker {
                client: 0,
                keygroup: 0,
                start_node: 0,
            }],
            duration_s: 1000.0,
            dwell_min_s: 100.0,
            dwell_max_s: 100.0,
            access_interval_s: 10.0,
            jitter_m: 20.0,
        },
        jumps: vec![Jump {
            client: 0,
            at_s: 500.0,
            node: 6,
        }],
    };
    let target = NodeId(6);
    let candidates: BTreeSet<NodeId> = [NodeId(5), NodeId(6)].into();
    let uniform = 1.0 / candidates.len() as f64;
    for seed in 0..5 {
        let trace = gen_trace(&spec, &topology, seed).unwrap();
        let mut setup = SimSetup::new(
            Arc::clone(&topology),
            vec![eu_keygroup(100_000, 0)],
            trace,
            StrategyKind::Predictive,
        );
        setup.audit = true;
        setup.record_predictions = true;
        let out = run(setup).map_err(|e| e.to_string())?;
        let audit = out.audit.unwrap();
        ensure(audit.violations.is_empty(), || {
            format!("seed {seed}: {}", audit.violations[0])
        })?;
        let first = out
            .predictions
            .iter()
            .find(|r| r.at >= 500.0)
            .ok_or_else(|| format!("seed {seed}: no prediction after the jump"))?;
        ensure(first.outlook.current == target, || {
            format!("seed {seed}: first prediction at {}", first.outlook.current)
        })?;
        let got: BTreeSet<NodeId> = first.outlook.markov.support().collect();
        ensure(got == candidates, || {
            format!("seed {seed}: support {got:?}")
        })?;
        for n in &candidates {
            let p = first.outlook.markov.probability(*n);
            ensure((p - uniform).abs() <= 1e-12, || {
                format!("seed {seed}: p({n}) = {p}")
            })?;
        }
    }
    Ok(
        "5 seeds: first post-jump prediction is uniform over {5, 6}; no adjacency violations"
            .into(),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("adjacency support invariant", adjacency_support_invariant),
        ("markov closed form", markov_closed_form),
        ("cyclic commuter win", commuter_win),
        ("baseline extremes", baseline_extremes),
        ("zone safety", zone_safety),
        ("decision engine oracle", decision_oracle),
        ("determinism", determinism),
        ("rate estimator", rate_estimator),
        ("teleport reset", teleport_reset),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{took:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{took:.2?}]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
