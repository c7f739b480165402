//! Scenario runner: builds the world from a configuration, replays the
//! client request schedule on the event engine and assembles the report.

pub mod config;
pub mod engine;
pub mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::delivery::{DeliveryError, RequestOutcome, World};
use crate::metrics::{MetricsError, RemovalRecord, RequestRecord, RunReport, ScenarioShape, TrafficClass};
use crate::sensordata::{DataError, Query, ReadingStore, SensorFilter, TimeWindow, Timestamp};
use crate::signaling::MessageEvent;
use crate::topology::{load_topology, NodeId, Topology, TopologyError};

pub use config::{
    BandwidthSharing, ClientOrder, ConfigError, QueryConfig, RemovalConfig, ScenarioConfig, ScheduleConfig,
    ScheduleKind, SensorConfig, ServeRateOverride,
};
pub use engine::{Engine, EngineError, Event};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid topology {}", path.display())]
    Topology {
        path: PathBuf,
        #[source]
        source: TopologyError,
    },
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sensor data")]
    Data(#[from] DataError),
    #[error("reading dump does not match the sensor parameters: {0}")]
    DumpMismatch(String),
    #[error("the topology has no end nodes to issue requests")]
    NoClients,
    #[error("request {index} from node {client} failed")]
    Request {
        index: usize,
        client: NodeId,
        #[source]
        source: DeliveryError,
    },
    #[error("removal toward node {client} failed")]
    Removal {
        client: NodeId,
        #[source]
        source: DeliveryError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Everything a run produced, beyond the report itself.
pub struct ScenarioRun {
    pub report: RunReport,
    /// Every signaling message hop, in time order.
    pub trace: Vec<MessageEvent>,
    /// Final state, for snapshots and reading dumps.
    pub world: World,
    pub end_time: f64,
}

/// Runs `cfg` and returns its report.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, HarnessError> {
    Ok(execute(cfg)?.report)
}

pub fn load_scenario_topology(cfg: &ScenarioConfig) -> Result<Topology, HarnessError> {
    let path = cfg.topology_path();
    let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    let mut topology = load_topology(&text).map_err(|source| HarnessError::Topology {
        path: path.clone(),
        source,
    })?;
    for (node, rate) in cfg.serve_rates() {
        topology = topology
            .with_serve_rate(node, rate)
            .map_err(|source| HarnessError::Topology { path: path.clone(), source })?;
    }
    Ok(topology)
}

/// The query every client issues: the last `window_s` seconds of history.
pub fn scenario_query(cfg: &ScenarioConfig) -> Result<Query, DataError> {
    let end = cfg.sensors.duration_s;
    let window = TimeWindow::new(
        Timestamp::from_secs(end - cfg.query.window_s),
        Timestamp::from_secs(end),
    )?;
    let sensors = if cfg.query.sensors.is_empty() {
        SensorFilter::All
    } else {
        SensorFilter::Ids(cfg.query.sensors.iter().copied().collect())
    };
    Ok(Query::new(sensors, window, cfg.query.type_tag.clone()))
}

/// The client issuing each request, in order.
pub fn client_sequence(t: &Topology, schedule: &ScheduleConfig, seed: u64) -> Result<Vec<NodeId>, HarnessError> {
    let base = if !schedule.clients.is_empty() {
        schedule.clients.clone()
    } else {
        let mut clients = t.clients();
        match schedule.order {
            ClientOrder::ById => {}
            ClientOrder::Shuffled => {
                clients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0c11_e475));
            }
            ClientOrder::RoundRobin => {
                let mut by_edge: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
                for c in clients {
                    let edge = t.neighbors(c).first().copied().unwrap_or(c);
                    by_edge.entry(edge).or_default().push(c);
                }
                let rounds = by_edge.values().map(Vec::len).max().unwrap_or(0);
                clients = (0..rounds)
                    .flat_map(|r| by_edge.values().filter_map(move |v| v.get(r).copied()))
                    .collect();
            }
        }
        clients
    };
    if base.is_empty() {
        return Err(HarnessError::NoClients);
    }
    Ok(base.iter().cycle().take(schedule.requests).copied().collect())
}

fn load_store(cfg: &ScenarioConfig) -> Result<ReadingStore, HarnessError> {
    let format = cfg.wire_format();
    let generator = cfg.generator();
    let mut store = match &cfg.sensors.readings {
        None => {
            let mut store = ReadingStore::new(format);
            for r in generator.readings() {
                store.ingest(r)?;
            }
            store
        }
        Some(p) => {
            let path = cfg.resolve(p);
            let file = std::fs::File::open(&path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            let store = ReadingStore::read_jsonl(std::io::BufReader::new(file), format)?;
            let grid = generator.grid();
            for s in grid.sensors() {
                let expected = grid.counts[s as usize] as usize;
                if store.sensor_len(s) != expected {
                    return Err(HarnessError::DumpMismatch(format!(
                        "sensor {s} has {} readings, expected {expected}",
                        store.sensor_len(s)
                    )));
                }
            }
            let total: u64 = grid.counts.iter().sum();
            if store.len() as u64 != total {
                return Err(HarnessError::DumpMismatch(format!(
                    "{} readings in the dump, expected {total}",
                    store.len()
                )));
            }
            store
        }
    };
    store.advance_clock(Timestamp::from_secs(cfg.sensors.duration_s));
    Ok(store)
}

enum Action {
    Request(usize),
    Complete(usize),
    Remove(usize),
}

/// Runs `cfg` and keeps the final world and message trace.
pub fn execute(cfg: &ScenarioConfig) -> Result<ScenarioRun, HarnessError> {
    cfg.validate()?;
    let topology = load_scenario_topology(cfg)?;
    let store = load_store(cfg)?;
    let query = scenario_query(cfg)?;
    let clients = client_sequence(&topology, &cfg.schedule, cfg.seed)?;
    let mut world = World::new(topology, store, cfg.generator().grid(), cfg.model.clone());

    let schedule = &cfg.schedule;
    let n = clients.len();
    let start = cfg.sensors.duration_s;
    let mut engine: Engine<Action> = Engine::new(start);
    match schedule.kind {
        ScheduleKind::Sequential => {
            engine.schedule(start, Action::Request(0))?;
        }
        ScheduleKind::FixedInterval => {
            for i in 0..n {
                engine.schedule(start + i as f64 * schedule.interval_s, Action::Request(i))?;
            }
        }
    }
    let sharing = schedule.bandwidth_sharing == BandwidthSharing::EqualShare;

    let mut outcomes: Vec<Option<RequestOutcome>> = vec![None; n];
    let mut records: Vec<Option<RequestRecord>> = vec![None; n];
    let mut in_flight: BTreeSet<usize> = BTreeSet::new();
    let mut removals = Vec::new();
    let mut trace = Vec::new();

    engine.run(|eng, ev| -> Result<(), HarnessError> {
        let now = eng.clock();
        match ev.action {
            Action::Request(i) => {
                if sharing {
                    let mut shares: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
                    for &j in &in_flight {
                        let o = outcomes[j].as_ref().expect("in-flight request has an outcome");
                        for f in o.flows.iter().filter(|f| f.class == TrafficClass::Http) {
                            *shares.entry((f.from, f.to)).or_insert(0) += 1;
                        }
                    }
                    world.set_link_shares(shares);
                }
                let outcome = world
                    .plan_request(clients[i], &query, cfg.mode, now)
                    .map_err(|source| HarnessError::Request {
                        index: i + 1,
                        client: clients[i],
                        source,
                    })?;
                trace.extend(outcome.trace.iter().cloned());
                eng.schedule(outcome.completed_at(), Action::Complete(i))?;
                outcomes[i] = Some(outcome);
                in_flight.insert(i);
            }
            Action::Complete(i) => {
                in_flight.remove(&i);
                let mut outcome = outcomes[i].take().expect("completed request was issued");
                let fills = std::mem::take(&mut outcome.fills);
                let warnings = world.apply_fills(&fills, now);
                outcome.warnings.extend(warnings);
                records[i] = Some(outcome.to_record(i + 1));
                for (r, removal) in schedule.removals.iter().enumerate() {
                    if removal.after_request == i + 1 {
                        eng.schedule(now, Action::Remove(r))?;
                    }
                }
                if schedule.kind == ScheduleKind::Sequential && i + 1 < n {
                    eng.schedule(now + schedule.gap_s, Action::Request(i + 1))?;
                }
            }
            Action::Remove(r) => {
                let removal = &schedule.removals[r];
                let out = world
                    .remove(removal.client, now)
                    .map_err(|source| HarnessError::Removal {
                        client: removal.client,
                        source,
                    })?;
                trace.extend(out.trace);
                removals.push(RemovalRecord {
                    after_request: removal.after_request,
                    client: removal.client,
                    at: now,
                    uninstalled: out.uninstalled,
                    flows: out.flows,
                });
            }
        }
        Ok(())
    })?;

    trace.sort_by(|a: &MessageEvent, b: &MessageEvent| a.time.total_cmp(&b.time));
    let requests: Vec<RequestRecord> = records
        .into_iter()
        .map(|r| r.expect("every scheduled request completes"))
        .collect();
    let shape = ScenarioShape {
        name: cfg.name.clone(),
        clients,
        query,
        sensors: cfg.sensors.count,
    };
    let report = RunReport::new(
        world.topology(),
        cfg.mode,
        cfg.seed,
        shape,
        cfg.to_json_value(),
        requests,
        removals,
    )?;
    Ok(ScenarioRun {
        report,
        trace,
        end_time: engine.clock(),
        world,
    })
}
