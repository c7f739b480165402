//! End-to-end request handling and the bandwidth-bottleneck transfer model.
//!
//! A legacy request is served directly by the gateway. In the programmable
//! modes the gateway first runs the signaling handshake, redirects the client
//! to the chain's redirect target and the chain is pulled recursively: each
//! cache answers what it holds and forwards only the residual upstream, the
//! gateway builds only what no cache had.
//!
//! Transfers are pipelined by default: the bytes sourced at each node flow to
//! the client over the path segment below it at that segment's bottleneck
//! rate, and the download lasts as long as the slowest of these flows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheTable, InstallOutcome, SENSOR_CDN_BUNDLE};
use crate::metrics::{flow_totals, Flow, RequestRecord, SourceRecord, Timing, TrafficClass};
use crate::sensordata::{DataError, DataPackage, Query, ReadingStore, SamplingGrid, SensorReading};
use crate::signaling::{start_session, ConfiguredChain, MessageEvent, SignalingError, SignalingParams, SignalingSession};
use crate::topology::{
    programmable_chain, DeploymentMode, LinkClass, NodeId, NodeKind, PathRoute, Topology, TopologyError,
};

/// Model parameters shared by every request of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Package creation cost at the gateway, seconds per entry.
    pub k_create: f64,
    /// Fraction of a link's raw bandwidth available to content.
    pub goodput: f64,
    /// Per-class replacements for `goodput`.
    pub goodput_overrides: BTreeMap<LinkClass, f64>,
    /// Request processing and redirect time, seconds per request.
    pub processing: f64,
    pub signaling: SignalingParams,
    /// TTL carried by Setup, seconds.
    pub ttl: f64,
    /// Bytes moved from the gateway to a node when a bundle is freshly installed.
    pub bundle_bytes: u64,
    /// Cut-through chain transfers; `false` selects store-and-forward.
    pub pipelined: bool,
    /// Run the handshake even when every cache on the path is already live.
    pub resignal_warm_paths: bool,
}

/// 0.56 s for a 24,000-entry package.
pub const DEFAULT_K_CREATE: f64 = 0.56 / 24_000.0;

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            k_create: DEFAULT_K_CREATE,
            goodput: 0.85,
            goodput_overrides: BTreeMap::new(),
            processing: 0.01,
            signaling: SignalingParams::default(),
            ttl: 600.0,
            bundle_bytes: 0,
            pipelined: true,
            resignal_warm_paths: true,
        }
    }
}

impl ModelParams {
    pub fn goodput_for(&self, class: LinkClass) -> f64 {
        self.goodput_overrides.get(&class).copied().unwrap_or(self.goodput)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeliveryError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not an end node and cannot issue requests")]
    NotAClient(NodeId),
    #[error("invalid query")]
    Query(#[from] DataError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Signaling(#[from] SignalingError),
    #[error("cannot move {0} bytes over an empty segment")]
    EmptySegment(u64),
}

/// One link as seen by a transfer: usable rate (bits/s) and latency (s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkRate {
    pub rate: f64,
    pub latency: f64,
}

/// Bottleneck of a segment: the slowest link or the serving node.
pub fn effective_rate(links: &[LinkRate], serve_rate: f64) -> f64 {
    links.iter().map(|l| l.rate).fold(serve_rate, f64::min)
}

/// Seconds to move `bytes` over `links` from a node serving at `serve_rate`:
/// serialization at the bottleneck rate plus the sum of link latencies.
pub fn transfer_time(bytes: u64, links: &[LinkRate], serve_rate: f64) -> Result<f64, DeliveryError> {
    if links.is_empty() {
        return if bytes == 0 { Ok(0.0) } else { Err(DeliveryError::EmptySegment(bytes)) };
    }
    let latency: f64 = links.iter().map(|l| l.latency).sum();
    if bytes == 0 {
        return Ok(latency);
    }
    Ok(bytes as f64 * 8.0 / effective_rate(links, serve_rate) + latency)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentTransfer {
    pub segment: Vec<NodeId>,
    pub bytes: u64,
    pub effective_rate: f64,
    pub duration: f64,
}

/// Result of pulling a query through a configured chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainedDownload {
    pub package: DataPackage,
    /// Gateway package creation time for whatever it had to build.
    pub creation: f64,
    pub duration: f64,
    pub sources: Vec<SourceRecord>,
    pub flows: Vec<Flow>,
    /// Entries each participating cache must store, nearest-to-client first.
    pub fills: Vec<(NodeId, DataPackage)>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RequestOutcome {
    pub client: NodeId,
    pub mode: DeploymentMode,
    pub issued_at: f64,
    /// Time the chained pull started (after signaling and redirect).
    pub pull_at: f64,
    pub path: PathRoute,
    pub chain: ConfiguredChain,
    pub timing: Timing,
    pub package: DataPackage,
    pub sources: Vec<SourceRecord>,
    pub flows: Vec<Flow>,
    /// Cache fills not yet applied (empty after [`World::client_request`]).
    pub fills: Vec<(NodeId, DataPackage)>,
    pub warnings: Vec<String>,
    pub trace: Vec<MessageEvent>,
}

impl RequestOutcome {
    pub fn total(&self) -> f64 {
        self.timing.total()
    }

    pub fn completed_at(&self) -> f64 {
        self.issued_at + self.total()
    }

    pub fn to_record(&self, index: usize) -> RequestRecord {
        RequestRecord {
            index,
            client: self.client,
            mode: self.mode,
            issued_at: self.issued_at,
            completed_at: self.completed_at(),
            path: self.path.nodes().to_vec(),
            chain: self.chain.caches.clone(),
            redirect_target: self.chain.redirect_target,
            timing: self.timing,
            total: self.total(),
            entries: self.package.len(),
            package_bytes: self.package.byte_size(),
            traffic: flow_totals(&self.flows),
            sources: self.sources.clone(),
            flows: self.flows.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RemovalOutcome {
    pub uninstalled: Vec<NodeId>,
    pub flows: Vec<Flow>,
    pub trace: Vec<MessageEvent>,
}

/// Mutable state of one simulation run: the network, the gateway store and
/// every installed cache.
#[derive(Clone, Debug)]
pub struct World {
    topology: Topology,
    store: ReadingStore,
    grid: SamplingGrid,
    caches: CacheTable,
    params: ModelParams,
    /// Last handshake per client, kept for explicit removal.
    sessions: BTreeMap<NodeId, SignalingSession>,
    next_session: u64,
    /// Number of other active flows per directed link (equal-share mode).
    shares: BTreeMap<(NodeId, NodeId), u32>,
}

fn aggregate(flows: impl IntoIterator<Item = Flow>) -> Vec<Flow> {
    let mut map: BTreeMap<(TrafficClass, NodeId, NodeId), u64> = BTreeMap::new();
    for f in flows {
        *map.entry((f.class, f.from, f.to)).or_insert(0) += f.bytes;
    }
    map.into_iter()
        .filter(|(_, b)| *b > 0)
        .map(|((class, from, to), bytes)| Flow { from, to, class, bytes })
        .collect()
}

fn along(nodes: &[NodeId], class: TrafficClass, bytes: u64) -> impl Iterator<Item = Flow> + '_ {
    nodes.windows(2).map(move |w| Flow {
        from: w[0],
        to: w[1],
        class,
        bytes,
    })
}

impl World {
    pub fn new(topology: Topology, store: ReadingStore, grid: SamplingGrid, params: ModelParams) -> Self {
        Self {
            topology,
            store,
            grid,
            caches: CacheTable::new(),
            params,
            sessions: BTreeMap::new(),
            next_session: 0,
            shares: BTreeMap::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn store(&self) -> &ReadingStore {
        &self.store
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn caches(&self) -> &CacheTable {
        &self.caches
    }

    pub fn caches_mut(&mut self) -> &mut CacheTable {
        &mut self.caches
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Sets how many other flows share each directed link. An empty map
    /// gives every transfer the full link rate.
    pub fn set_link_shares(&mut self, shares: BTreeMap<(NodeId, NodeId), u32>) {
        self.shares = shares;
    }

    fn link_rates(&self, nodes: &[NodeId]) -> Vec<LinkRate> {
        nodes
            .windows(2)
            .map(|w| {
                let link = self.topology.link_between(w[0], w[1]).expect("segment follows links");
                let others = self.shares.get(&(w[0], w[1])).copied().unwrap_or(0);
                LinkRate {
                    rate: link.bandwidth * self.params.goodput_for(self.topology.link_class(link))
                        / (1 + others) as f64,
                    latency: link.latency,
                }
            })
            .collect()
    }

    /// Transfer of `bytes` served by `segment[0]` down to the end of `segment`.
    pub fn segment_transfer(&self, segment: &[NodeId], bytes: u64) -> Result<SegmentTransfer, DeliveryError> {
        let server = *segment.first().ok_or(DeliveryError::EmptySegment(bytes))?;
        let serve_rate = self
            .topology
            .node(server)
            .ok_or(DeliveryError::UnknownNode(server))?
            .serve_rate;
        let links = self.link_rates(segment);
        Ok(SegmentTransfer {
            segment: segment.to_vec(),
            bytes,
            effective_rate: effective_rate(&links, serve_rate),
            duration: transfer_time(bytes, &links, serve_rate)?,
        })
    }

    /// Handles one request and applies the resulting cache fills.
    pub fn client_request(
        &mut self,
        client: NodeId,
        q: &Query,
        mode: DeploymentMode,
        now: f64,
    ) -> Result<RequestOutcome, DeliveryError> {
        let mut outcome = self.plan_request(client, q, mode, now)?;
        let fills = std::mem::take(&mut outcome.fills);
        let warnings = self.apply_fills(&fills, outcome.pull_at);
        outcome.warnings.extend(warnings);
        Ok(outcome)
    }

    /// Like [`World::client_request`] but leaves the cache fills in the
    /// outcome, for callers that apply them when the transfer completes.
    pub fn plan_request(
        &mut self,
        client: NodeId,
        q: &Query,
        mode: DeploymentMode,
        now: f64,
    ) -> Result<RequestOutcome, DeliveryError> {
        let node = self.topology.node(client).ok_or(DeliveryError::UnknownNode(client))?;
        if node.kind != NodeKind::End {
            return Err(DeliveryError::NotAClient(client));
        }
        if q.window.end > self.store.clock() {
            return Err(DataError::OpenWindow {
                end: q.window.end,
                clock: self.store.clock(),
            }
            .into());
        }
        let gateway = self.topology.gateway();
        let path = self.topology.route(gateway, client)?;

        let mut flows = Vec::new();
        let mut trace = Vec::new();
        let (chain, t_signaling) = if !mode.is_programmable() {
            (ConfiguredChain::from_collected(gateway, &[]), 0.0)
        } else {
            let on_path = programmable_chain(&self.topology, &path, mode);
            let warm = !on_path.is_empty()
                && on_path
                    .iter()
                    .all(|&n| self.caches.is_live(n, SENSOR_CDN_BUNDLE, now));
            if warm && !self.params.resignal_warm_paths {
                (ConfiguredChain::from_collected(gateway, &on_path), 0.0)
            } else {
                self.next_session += 1;
                let mut session = start_session(
                    &self.topology,
                    gateway,
                    client,
                    mode,
                    self.params.signaling,
                    self.next_session,
                )?;
                let handshake =
                    session.run_handshake(&self.topology, &mut self.caches, SENSOR_CDN_BUNDLE, self.params.ttl, now)?;
                session.finish();
                flows.extend(handshake.bytes_per_link.iter().map(|(&(from, to), &bytes)| Flow {
                    from,
                    to,
                    class: TrafficClass::Signaling,
                    bytes,
                }));
                if self.params.bundle_bytes > 0 {
                    for (n, outcome) in &handshake.installs {
                        if *outcome == InstallOutcome::Fresh {
                            let upto = path.position(*n).expect("installs are on the path");
                            flows.extend(along(
                                &path.nodes()[..=upto],
                                TrafficClass::Bundle,
                                self.params.bundle_bytes,
                            ));
                        }
                    }
                }
                trace = session.take_trace();
                self.sessions.insert(client, session);
                (handshake.chain, handshake.latency)
            }
        };

        let pull_at = now + t_signaling + self.params.processing;
        let download = self.chained_download(&chain, &path, q, pull_at)?;
        flows.extend(download.flows);
        Ok(RequestOutcome {
            client,
            mode,
            issued_at: now,
            pull_at,
            path,
            chain,
            timing: Timing {
                t_creation: download.creation,
                t_signaling,
                t_processing: self.params.processing,
                t_http: download.duration,
            },
            package: download.package,
            sources: download.sources,
            flows: aggregate(flows),
            fills: download.fills,
            warnings: download.warnings,
            trace,
        })
    }

    /// Pulls `q` through `chain`, starting at its redirect target. Caches
    /// that are missing or expired are skipped with a warning.
    pub fn chained_download(
        &mut self,
        chain: &ConfiguredChain,
        path: &PathRoute,
        q: &Query,
        now: f64,
    ) -> Result<ChainedDownload, DeliveryError> {
        let gateway = chain.gateway;
        let mut warnings = Vec::new();
        let mut pending = vec![q.clone()];
        // (node, entries it served), nearest-to-client first
        let mut served: Vec<(NodeId, Vec<SensorReading>)> = Vec::new();
        let mut used = 0;

        let mut node = chain.redirect_target;
        while node != gateway && !pending.is_empty() {
            match self.caches.live_mut(node, SENSOR_CDN_BUNDLE, now) {
                Some(cache) => {
                    let found = cache.lookup(&pending, &self.grid, now);
                    served.push((node, found.hits));
                    pending = found.residual;
                    used += 1;
                }
                None => warnings.push(format!(
                    "cache on node {node} is missing or expired; pulling through to its upstream"
                )),
            }
            node = chain.upstream(node).unwrap_or(gateway);
        }
        let mut creation = 0.0;
        if !pending.is_empty() {
            let (built, cost) = self.store.build_package_many(&pending, self.params.k_create)?;
            creation = cost;
            served.push((gateway, built.into_entries()));
        }

        let format = self.store.format();
        let packages = served
            .into_iter()
            .map(|(n, entries)| Ok((n, DataPackage::from_entries(entries, format)?)))
            .collect::<Result<Vec<_>, DataError>>()?;

        // each participating cache stores what arrived from above it
        let mut fills = Vec::new();
        let mut from_above = DataPackage::empty(format);
        for (i, (n, p)) in packages.iter().enumerate().rev() {
            if i < used && !from_above.is_empty() {
                fills.push((*n, from_above.clone()));
            }
            from_above = crate::sensordata::package_union(&from_above, p)?;
        }
        fills.reverse();
        let package = from_above;

        let nodes = path.nodes();
        let mut sources = Vec::new();
        let mut flows = Vec::new();
        for (n, p) in &packages {
            if p.is_empty() {
                continue;
            }
            let pos = path.position(*n).expect("sources lie on the path");
            let transfer = self.segment_transfer(&nodes[pos..], p.byte_size())?;
            flows.extend(along(&nodes[pos..], TrafficClass::Http, p.byte_size()));
            sources.push(SourceRecord {
                node: *n,
                entries: p.len(),
                bytes: p.byte_size(),
                segment: transfer.segment,
                duration: transfer.duration,
            });
        }

        let duration = if sources.is_empty() {
            let pos = path.position(chain.redirect_target).unwrap_or(0);
            self.segment_transfer(&nodes[pos..], 0)?.duration
        } else if self.params.pipelined {
            sources.iter().map(|s| s.duration).fold(0.0, f64::max)
        } else {
            self.store_and_forward(path, &packages[..], used)?
        };

        Ok(ChainedDownload {
            package,
            creation,
            duration,
            sources,
            flows: aggregate(flows),
            fills,
            warnings,
        })
    }

    /// Every hop between consecutive serving points waits for the full
    /// content from above before forwarding it.
    fn store_and_forward(
        &self,
        path: &PathRoute,
        packages: &[(NodeId, DataPackage)],
        used: usize,
    ) -> Result<f64, DeliveryError> {
        let nodes = path.nodes();
        let mut points: Vec<(usize, u64)> = packages
            .iter()
            .enumerate()
            .filter(|(i, (_, p))| *i < used || !p.is_empty())
            .map(|(_, (n, p))| (path.position(*n).unwrap(), p.byte_size()))
            .collect();
        points.sort_unstable();
        points.push((nodes.len() - 1, 0));
        let mut carried = 0;
        let mut total = 0.0;
        for w in points.windows(2) {
            carried += w[0].1;
            if carried > 0 {
                total += self.segment_transfer(&nodes[w[0].0..=w[1].0], carried)?.duration;
            }
        }
        Ok(total)
    }

    /// Stores pending fills. Caches that expired in the meantime are skipped.
    pub fn apply_fills(&mut self, fills: &[(NodeId, DataPackage)], at: f64) -> Vec<String> {
        let mut warnings = Vec::new();
        for (node, package) in fills {
            let result = match self.caches.get_mut(*node, SENSOR_CDN_BUNDLE) {
                Some(c) => c.store_entries(package, at).map_err(|e| e.to_string()),
                None => Err(format!("cache on node {node} was removed before it could be filled")),
            };
            if let Err(w) = result {
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        warnings
    }

    /// Sends Remove along the last configured session toward `client`.
    /// Without such a session this is a no-op.
    pub fn remove(&mut self, client: NodeId, now: f64) -> Result<RemovalOutcome, DeliveryError> {
        let Some(mut session) = self.sessions.remove(&client) else {
            return Ok(RemovalOutcome::default());
        };
        let before = session.bytes_per_link().clone();
        let removed = session.send_remove(&self.topology, &mut self.caches, SENSOR_CDN_BUNDLE, now)?;
        let flows = session
            .bytes_per_link()
            .iter()
            .map(|(&(from, to), &bytes)| Flow {
                from,
                to,
                class: TrafficClass::Signaling,
                bytes: bytes - before.get(&(from, to)).copied().unwrap_or(0),
            });
        let flows = aggregate(flows);
        Ok(RemovalOutcome {
            uninstalled: removed.into_iter().map(|(n, _)| n).collect(),
            flows,
            trace: session.take_trace(),
        })
    }
}
