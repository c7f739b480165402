//! Random scenario builders and brute-force oracles shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pathcache::cache::SENSOR_CDN_BUNDLE;
use pathcache::delivery::{ModelParams, RequestOutcome, World};
use pathcache::metrics::TrafficClass;
use pathcache::sensordata::{SensorFilter, SensorGenerator, TimeWindow, WireFormat};
use pathcache::topology::{LinkSpec, NodeSpec};
use pathcache::{DeploymentMode, NodeId, NodeKind, Query, ReadingStore, SensorReading, Timestamp, Topology};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn ref60() -> Topology {
    let text = std::fs::read_to_string(scenarios_dir().join("ref60.toml")).unwrap();
    pathcache::topology::load_topology(&text).unwrap()
}

/// Connected topology with at most `max_nodes` nodes: a gateway, a random
/// tree of core and edge nodes with a few extra links, and end nodes hung
/// off edges.
pub fn random_topology<R: Rng>(rng: &mut R, max_nodes: u32) -> Topology {
    let max_nodes = max_nodes.max(3);
    let ends = rng.gen_range(1..=(max_nodes - 2).min(3));
    let inner = rng.gen_range(1..=max_nodes - 1 - ends);
    let rates = [1e7, 1e8, 1e9];
    let mut ids: Vec<u32> = (0..1 + inner + ends).collect();
    ids.shuffle(rng);
    let gateway = ids[0];
    let inner_ids = &ids[1..1 + inner as usize];
    let end_ids = &ids[1 + inner as usize..];

    let mut nodes = vec![NodeSpec::new(gateway, NodeKind::Gateway, false)];
    let mut edges = Vec::new();
    for (i, &id) in inner_ids.iter().enumerate() {
        let kind = if i == 0 || rng.gen_bool(0.5) { NodeKind::Edge } else { NodeKind::Core };
        if kind == NodeKind::Edge {
            edges.push(id);
        }
        nodes.push(NodeSpec::new(id, kind, rng.gen_bool(0.75)));
    }
    let mut links = BTreeSet::new();
    let mut attached = vec![gateway];
    for &id in inner_ids {
        let to = *attached.choose(rng).unwrap();
        links.insert((id.min(to), id.max(to)));
        attached.push(id);
    }
    for _ in 0..rng.gen_range(0..=inner) {
        let a = *attached.choose(rng).unwrap();
        let b = *attached.choose(rng).unwrap();
        if a != b {
            links.insert((a.min(b), a.max(b)));
        }
    }
    for &id in end_ids {
        nodes.push(NodeSpec::new(id, NodeKind::End, false));
        let e = *edges.choose(rng).unwrap();
        links.insert((id.min(e), id.max(e)));
    }
    let links = links
        .into_iter()
        .map(|(a, b)| LinkSpec::new(a, b, *rates.choose(rng).unwrap(), rng.gen_range(0.0..0.01)))
        .collect();
    Topology::new(nodes, links).expect("generated topology is valid")
}

pub fn random_generator<R: Rng>(rng: &mut R, max_sensors: u32) -> SensorGenerator {
    SensorGenerator {
        sensors: rng.gen_range(1..=max_sensors),
        rate_per_min: [1.0, 2.0, 4.0, 6.0, 12.0][rng.gen_range(0..5)],
        duration_s: rng.gen_range(60..=600) as f64,
        seed: rng.gen(),
    }
}

pub fn store_for(gen: &SensorGenerator, format: WireFormat) -> (ReadingStore, Vec<SensorReading>) {
    let readings = gen.readings();
    let mut store = ReadingStore::new(format);
    for r in &readings {
        store.ingest(r.clone()).unwrap();
    }
    store.advance_clock(Timestamp::from_secs(gen.duration_s));
    (store, readings)
}

/// A closed-window query over the generated history.
pub fn random_query<R: Rng>(rng: &mut R, gen: &SensorGenerator) -> Query {
    let horizon = (gen.duration_s * 1000.0) as u64;
    let a = rng.gen_range(0..horizon);
    let b = rng.gen_range(a + 1..=horizon);
    let sensors = if rng.gen_bool(0.5) {
        SensorFilter::All
    } else {
        // may include ids beyond the population
        let n = rng.gen_range(1..=gen.sensors + 1);
        SensorFilter::Ids((0..n).filter(|_| rng.gen_bool(0.6)).collect())
    };
    Query::new(sensors, TimeWindow::new(Timestamp(a), Timestamp(b)).unwrap(), "t")
}

pub type EntryKey = (u32, u64);

/// Brute-force answer: every reading the query selects.
pub fn oracle(readings: &[SensorReading], q: &Query) -> BTreeMap<EntryKey, u64> {
    readings
        .iter()
        .filter(|r| {
            let sensor_ok = match &q.sensors {
                SensorFilter::All => true,
                SensorFilter::Ids(ids) => ids.contains(&r.sensor_id),
            };
            sensor_ok && r.timestamp >= q.window.start && r.timestamp < q.window.end
        })
        .map(|r| ((r.sensor_id, r.timestamp.0), r.value.to_bits()))
        .collect()
}

pub fn as_map<'a>(entries: impl IntoIterator<Item = &'a SensorReading>) -> BTreeMap<EntryKey, u64> {
    entries
        .into_iter()
        .map(|r| ((r.sensor_id, r.timestamp.0), r.value.to_bits()))
        .collect()
}

pub fn random_mode<R: Rng>(rng: &mut R) -> DeploymentMode {
    DeploymentMode::ALL[rng.gen_range(0..3)]
}

pub fn random_params<R: Rng>(rng: &mut R) -> ModelParams {
    ModelParams {
        ttl: [5.0, 60.0, 600.0][rng.gen_range(0..3)],
        pipelined: rng.gen_bool(0.7),
        resignal_warm_paths: rng.gen_bool(0.7),
        bundle_bytes: [0, 500][rng.gen_range(0..2)],
        ..ModelParams::default()
    }
}

/// HTTP byte-hops per directed link, counted by walking each source's
/// entries hop by hop down the path. Which node serves which entries is
/// derived from the cache contents seen just before the pull.
pub fn traversal_oracle(
    world: &World,
    outcome: &RequestOutcome,
    cached_before: &BTreeMap<NodeId, BTreeSet<EntryKey>>,
    wanted: &BTreeMap<EntryKey, u64>,
) -> BTreeMap<(NodeId, NodeId), u64> {
    let format = world.store().format();
    let nodes = outcome.path.nodes();
    let mut remaining: BTreeSet<EntryKey> = wanted.keys().copied().collect();
    let mut served: Vec<(NodeId, usize)> = Vec::new();
    if outcome.mode.is_programmable() {
        for n in outcome.chain.caches.iter().rev() {
            let Some(cached) = cached_before.get(n) else { continue };
            let hit: BTreeSet<EntryKey> = remaining.intersection(cached).copied().collect();
            for k in &hit {
                remaining.remove(k);
            }
            served.push((*n, hit.len()));
            if remaining.is_empty() {
                break;
            }
        }
    }
    if !remaining.is_empty() {
        served.push((world.topology().gateway(), remaining.len()));
    }
    let mut per_link = BTreeMap::new();
    for (node, count) in served {
        if count == 0 {
            continue;
        }
        let bytes = count as u64 * format.entry_bytes + format.envelope_bytes;
        let pos = nodes.iter().position(|n| *n == node).unwrap();
        for hop in nodes[pos..].windows(2) {
            *per_link.entry((hop[0], hop[1])).or_insert(0) += bytes;
        }
    }
    per_link
}

/// Entry keys of every cache that will be live when the pull starts.
pub fn live_cache_contents(world: &World, at: f64) -> BTreeMap<NodeId, BTreeSet<EntryKey>> {
    world
        .topology()
        .nodes()
        .filter_map(|n| world.caches().get(n.id, SENSOR_CDN_BUNDLE))
        .filter(|c| c.deadline() > at)
        .map(|c| {
            (
                c.node(),
                c.entries().map(|r| (r.sensor_id, r.timestamp.0)).collect(),
            )
        })
        .collect()
}

pub fn http_flows(outcome: &RequestOutcome) -> BTreeMap<(NodeId, NodeId), u64> {
    outcome
        .flows
        .iter()
        .filter(|f| f.class == TrafficClass::Http)
        .map(|f| ((f.from, f.to), f.bytes))
        .collect()
}
