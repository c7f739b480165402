//! The on-path cache module: per-sensor entry storage, lookups that split a
//! query into hits and a residual to pull from upstream, and TTL soft state.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::sensordata::{
    DataPackage, Query, SamplingGrid, SensorFilter, SensorId, SensorReading, TimeWindow, Timestamp,
};
use crate::topology::{NodeId, NodeSpec};

pub type BundleId = u32;

/// Identifier of the sensor cache bundle installed by the gateway.
pub const SENSOR_CDN_BUNDLE: BundleId = 1;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("node {0} is not programmable and cannot host a cache")]
    NotProgrammable(NodeId),
    #[error("cache on node {node} expired at t={deadline}s")]
    Expired { node: NodeId, deadline: f64 },
    #[error("cache on node {node}: conflicting values for sensor {sensor} at {timestamp}")]
    Integrity {
        node: NodeId,
        sensor: SensorId,
        timestamp: Timestamp,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Liveness {
    Live,
    Expired,
}

/// What part of a request a cache can answer locally.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LookupResult {
    pub hits: Vec<SensorReading>,
    /// Per-sensor windows still missing; empty on a full hit.
    pub residual: Vec<Query>,
}

impl LookupResult {
    pub fn is_full_hit(&self) -> bool {
        self.residual.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct CacheInstance {
    node: NodeId,
    bundle: BundleId,
    /// Time of the last (re)install.
    installed_at: f64,
    ttl: f64,
    upstream: Option<NodeId>,
    index: BTreeMap<SensorId, BTreeMap<Timestamp, SensorReading>>,
    entries: usize,
    hits: u64,
    misses: u64,
}

impl CacheInstance {
    pub fn install(node: &NodeSpec, bundle: BundleId, ttl: f64, now: f64) -> Result<Self, CacheError> {
        if !node.programmable {
            return Err(CacheError::NotProgrammable(node.id));
        }
        Ok(Self {
            node: node.id,
            bundle,
            installed_at: now,
            ttl,
            upstream: None,
            index: BTreeMap::new(),
            entries: 0,
            hits: 0,
            misses: 0,
        })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn bundle(&self) -> BundleId {
        self.bundle
    }

    pub fn deadline(&self) -> f64 {
        self.installed_at + self.ttl
    }

    pub fn upstream(&self) -> Option<NodeId> {
        self.upstream
    }

    pub fn set_upstream(&mut self, upstream: NodeId) {
        self.upstream = Some(upstream);
    }

    pub fn entry_count(&self) -> usize {
        self.entries
    }

    pub fn counters(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    /// Restarts the TTL from `now`; entries are kept.
    pub fn refresh(&mut self, ttl: f64, now: f64) {
        self.installed_at = now;
        self.ttl = ttl;
    }

    /// Expired once `now` reaches the deadline.
    pub fn expire_check(&self, now: f64) -> Liveness {
        if now >= self.deadline() {
            Liveness::Expired
        } else {
            Liveness::Live
        }
    }

    pub fn is_live(&self, now: f64) -> bool {
        self.expire_check(now) == Liveness::Live
    }

    fn sensors_of<'a>(q: &'a Query, grid: &'a SamplingGrid) -> Box<dyn Iterator<Item = SensorId> + 'a> {
        match &q.sensors {
            SensorFilter::All => Box::new(grid.sensors()),
            SensorFilter::Ids(ids) => Box::new(ids.iter().copied()),
        }
    }

    /// Splits `queries` into locally cached entries and the minimal
    /// per-sensor windows that are still missing. Missing grid points are
    /// grouped into runs, and each run becomes one window that ends at the
    /// next grid point (or the query end). A query with no cached entry at
    /// all is forwarded unchanged. Expired instances answer like empty ones.
    pub fn lookup(&mut self, queries: &[Query], grid: &SamplingGrid, now: f64) -> LookupResult {
        let live = self.is_live(now);
        let mut result = LookupResult::default();
        for q in queries {
            let mut hits = Vec::new();
            let mut missing = Vec::new();
            for sensor in Self::sensors_of(q, grid) {
                let cached = if live { self.index.get(&sensor) } else { None };
                if let Some(m) = cached {
                    hits.extend(m.range(q.window.start..q.window.end).map(|(_, r)| r.clone()));
                }
                let mut run: Option<(Timestamp, Timestamp)> = None;
                for t in grid.timestamps_in(sensor, q.window) {
                    if cached.is_some_and(|m| m.contains_key(&t)) {
                        if let Some(r) = run.take() {
                            missing.push((sensor, r));
                        }
                    } else {
                        run = Some((run.map_or(t, |r| r.0), t));
                    }
                }
                missing.extend(run.map(|r| (sensor, r)));
            }
            if missing.is_empty() {
                // fully covered
            } else if hits.is_empty() {
                result.residual.push(q.clone());
            } else {
                for (sensor, (start, last)) in missing {
                    let end = Timestamp((last.0 + grid.period_ms).min(q.window.end.0));
                    result.residual.push(Query::new(
                        SensorFilter::Ids(BTreeSet::from([sensor])),
                        TimeWindow { start, end },
                        q.type_tag.clone(),
                    ));
                }
            }
            result.hits.extend(hits);
        }
        if result.residual.is_empty() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        result
    }

    /// Merges the entries of `package`. Identical entries are deduplicated;
    /// a different value under an existing key is rejected and nothing is
    /// stored.
    pub fn store_entries(&mut self, package: &DataPackage, now: f64) -> Result<(), CacheError> {
        if !self.is_live(now) {
            return Err(CacheError::Expired {
                node: self.node,
                deadline: self.deadline(),
            });
        }
        for r in package.entries() {
            if let Some(existing) = self.index.get(&r.sensor_id).and_then(|m| m.get(&r.timestamp)) {
                if existing != r {
                    return Err(CacheError::Integrity {
                        node: self.node,
                        sensor: r.sensor_id,
                        timestamp: r.timestamp,
                    });
                }
            }
        }
        for r in package.entries() {
            if self
                .index
                .entry(r.sensor_id)
                .or_default()
                .insert(r.timestamp, r.clone())
                .is_none()
            {
                self.entries += 1;
            }
        }
        Ok(())
    }

    /// All cached entries, sorted by sensor then timestamp.
    pub fn entries(&self) -> impl Iterator<Item = &SensorReading> {
        self.index.values().flat_map(|m| m.values())
    }

    pub fn snapshot(&self, now: f64) -> CacheSnapshot {
        let mut spans: Vec<(u64, u64)> = self
            .index
            .values()
            .filter_map(|m| Some((m.keys().next()?.0, m.keys().next_back()?.0 + 1)))
            .collect();
        spans.sort_unstable();
        let mut coverage: Vec<[u64; 2]> = Vec::new();
        for (start, end) in spans {
            match coverage.last_mut() {
                Some(last) if start <= last[1] => last[1] = last[1].max(end),
                _ => coverage.push([start, end]),
            }
        }
        CacheSnapshot {
            node: self.node,
            bundle: self.bundle,
            entries: self.entries,
            sensors: self.index.len(),
            coverage_ms: coverage,
            deadline: self.deadline(),
            live: self.is_live(now),
            upstream: self.upstream,
            lookups_full_hit: self.hits,
            lookups_partial: self.misses,
        }
    }
}

/// Exported per-node cache state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CacheSnapshot {
    pub node: NodeId,
    pub bundle: BundleId,
    pub entries: usize,
    pub sensors: usize,
    /// Merged `[first, last]` spans of the per-sensor entries, in ms.
    pub coverage_ms: Vec<[u64; 2]>,
    pub deadline: f64,
    pub live: bool,
    pub upstream: Option<NodeId>,
    pub lookups_full_hit: u64,
    pub lookups_partial: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstallOutcome {
    Fresh,
    Refreshed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UninstallOutcome {
    Removed,
    Unknown,
}

/// Every cache instance in the network, keyed by node and bundle.
#[derive(Clone, Debug, Default)]
pub struct CacheTable {
    instances: BTreeMap<(NodeId, BundleId), CacheInstance>,
}

impl CacheTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs a cache, or refreshes the TTL of a live one. An expired
    /// instance is replaced by an empty one.
    pub fn install(&mut self, node: &NodeSpec, bundle: BundleId, ttl: f64, now: f64) -> Result<InstallOutcome, CacheError> {
        if let Some(c) = self.instances.get_mut(&(node.id, bundle)) {
            if c.is_live(now) {
                c.refresh(ttl, now);
                return Ok(InstallOutcome::Refreshed);
            }
        }
        let fresh = CacheInstance::install(node, bundle, ttl, now)?;
        self.instances.insert((node.id, bundle), fresh);
        Ok(InstallOutcome::Fresh)
    }

    pub fn get(&self, node: NodeId, bundle: BundleId) -> Option<&CacheInstance> {
        self.instances.get(&(node, bundle))
    }

    pub fn get_mut(&mut self, node: NodeId, bundle: BundleId) -> Option<&mut CacheInstance> {
        self.instances.get_mut(&(node, bundle))
    }

    /// The instance if it exists and has not expired.
    pub fn live_mut(&mut self, node: NodeId, bundle: BundleId, now: f64) -> Option<&mut CacheInstance> {
        self.instances
            .get_mut(&(node, bundle))
            .filter(|c| c.is_live(now))
    }

    pub fn is_live(&self, node: NodeId, bundle: BundleId, now: f64) -> bool {
        self.get(node, bundle).is_some_and(|c| c.is_live(now))
    }

    pub fn uninstall(&mut self, node: NodeId, bundle: BundleId) -> UninstallOutcome {
        match self.instances.remove(&(node, bundle)) {
            Some(_) => UninstallOutcome::Removed,
            None => {
                log::warn!("uninstall of unknown cache {bundle} on node {node}");
                UninstallOutcome::Unknown
            }
        }
    }

    /// Drops every instance whose deadline has passed.
    pub fn purge_expired(&mut self, now: f64) -> usize {
        let before = self.instances.len();
        self.instances.retain(|_, c| c.is_live(now));
        before - self.instances.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn snapshot(&self, now: f64) -> Vec<CacheSnapshot> {
        self.instances.values().map(|c| c.snapshot(now)).collect()
    }

    pub fn snapshot_json(&self, now: f64) -> String {
        serde_json::to_string_pretty(&self.snapshot(now)).expect("snapshot serializes")
    }
}
