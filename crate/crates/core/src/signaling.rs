//! Path-coupled signaling sessions.
//!
//! A session follows the data path from the gateway to a client. Messages are
//! intercepted, in path order, by every node running the programmable
//! environment; all other nodes forward them untouched. The handshake is:
//!
//! 1. `Setup` installs (or refreshes) the cache bundle at each intercepting node.
//! 2. `Probe` collects the ordered list of intercepting nodes;
//!    `ProbeResponse` carries it back to the gateway.
//! 3. A second `Setup` carrying the chain configuration tells each cache which
//!    node to pull from: its nearest intercepting neighbor toward the gateway,
//!    or the gateway itself for the first one.
//!
//! `Remove` tears the caches down again.
//!
//! Transport-level details are folded into a fixed per-handshake latency and
//! a fixed per-message wire size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{BundleId, CacheError, CacheTable, InstallOutcome, UninstallOutcome};
use crate::topology::{programmable_chain, DeploymentMode, NodeId, PathRoute, Topology, TopologyError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalingParams {
    /// End-to-end handshake latency, seconds.
    pub latency: f64,
    /// Wire size of every signaling message, bytes.
    pub message_bytes: u64,
}

impl Default for SignalingParams {
    fn default() -> Self {
        Self {
            latency: 1.6,
            message_bytes: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum NslpMessage {
    Setup {
        bundle: BundleId,
        ttl: f64,
        /// Upstream assignment per cache; present on the configuring Setup.
        chain_config: Option<BTreeMap<NodeId, NodeId>>,
    },
    Probe {
        collected: Vec<NodeId>,
    },
    ProbeResponse {
        collected: Vec<NodeId>,
    },
    Remove {
        bundle: BundleId,
    },
}

impl NslpMessage {
    pub fn variant(&self) -> &'static str {
        match self {
            Self::Setup { chain_config: None, .. } => "setup",
            Self::Setup { .. } => "setup_configure",
            Self::Probe { .. } => "probe",
            Self::ProbeResponse { .. } => "probe_response",
            Self::Remove { .. } => "remove",
        }
    }

    /// Whether the message travels from the client back to the gateway.
    fn upstream_bound(&self) -> bool {
        matches!(self, Self::ProbeResponse { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    SetupSent,
    Probed,
    Configured,
    Done,
    Removed,
}

#[derive(Debug, thiserror::Error)]
pub enum SignalingError {
    #[error("{variant} is not allowed in session phase {phase:?}")]
    IllegalPhase { variant: &'static str, phase: Phase },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// One processing step of a message at a programmable node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interception {
    pub node: NodeId,
    pub path_index: usize,
}

/// One hop of one message, for the message trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageEvent {
    pub time: f64,
    pub variant: &'static str,
    pub from: NodeId,
    pub to: NodeId,
    pub bytes: u64,
}

/// The cache chain assigned by the configuring Setup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfiguredChain {
    pub gateway: NodeId,
    /// Caches ordered from the gateway toward the client.
    pub caches: Vec<NodeId>,
    pub upstream_of: BTreeMap<NodeId, NodeId>,
    /// Where the client is redirected: the cache nearest to it, or the
    /// gateway when the chain is empty.
    pub redirect_target: NodeId,
}

impl ConfiguredChain {
    /// Chains `collected` (ordered gateway to client) toward the gateway.
    pub fn from_collected(gateway: NodeId, collected: &[NodeId]) -> Self {
        let mut upstream_of = BTreeMap::new();
        let mut prev = gateway;
        for &node in collected {
            upstream_of.insert(node, prev);
            prev = node;
        }
        Self {
            gateway,
            caches: collected.to_vec(),
            upstream_of,
            redirect_target: prev,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }

    pub fn upstream(&self, node: NodeId) -> Option<NodeId> {
        self.upstream_of.get(&node).copied()
    }
}

/// What a completed handshake produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Handshake {
    pub chain: ConfiguredChain,
    pub latency: f64,
    pub bytes_per_link: BTreeMap<(NodeId, NodeId), u64>,
    pub installs: Vec<(NodeId, InstallOutcome)>,
}

/// Per-request signaling state, owned by the request driver.
#[derive(Clone, Debug)]
pub struct SignalingSession {
    pub id: u64,
    pub initiator: NodeId,
    pub target: NodeId,
    path: PathRoute,
    mode: DeploymentMode,
    params: SignalingParams,
    phase: Phase,
    chain: Option<ConfiguredChain>,
    bytes_per_link: BTreeMap<(NodeId, NodeId), u64>,
    latency: f64,
    trace: Vec<MessageEvent>,
}

/// Opens a session from `gateway` toward `client` along the routed path.
pub fn start_session(
    t: &Topology,
    gateway: NodeId,
    client: NodeId,
    mode: DeploymentMode,
    params: SignalingParams,
    id: u64,
) -> Result<SignalingSession, SignalingError> {
    let path = t.route(gateway, client)?;
    Ok(SignalingSession {
        id,
        initiator: gateway,
        target: client,
        path,
        mode,
        params,
        phase: Phase::Idle,
        chain: None,
        bytes_per_link: BTreeMap::new(),
        latency: 0.0,
        trace: Vec::new(),
    })
}

impl SignalingSession {
    pub fn path(&self) -> &PathRoute {
        &self.path
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn chain(&self) -> Option<&ConfiguredChain> {
        self.chain.as_ref()
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    pub fn trace(&self) -> &[MessageEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<MessageEvent> {
        std::mem::take(&mut self.trace)
    }

    pub fn bytes_per_link(&self) -> &BTreeMap<(NodeId, NodeId), u64> {
        &self.bytes_per_link
    }

    /// Total signaling byte-hops so far.
    pub fn total_bytes(&self) -> u64 {
        self.bytes_per_link.values().sum()
    }

    fn next_phase(&self, msg: &NslpMessage) -> Result<Phase, SignalingError> {
        let next = match (msg, self.phase) {
            (NslpMessage::Setup { chain_config: None, .. }, Phase::Idle) => Phase::SetupSent,
            (NslpMessage::Probe { .. }, Phase::SetupSent) => Phase::SetupSent,
            (NslpMessage::ProbeResponse { .. }, Phase::SetupSent) => Phase::Probed,
            (NslpMessage::Setup { chain_config: Some(_), .. }, Phase::Probed) => Phase::Configured,
            (NslpMessage::Remove { .. }, Phase::Configured | Phase::Done) => Phase::Removed,
            _ => {
                return Err(SignalingError::IllegalPhase {
                    variant: msg.variant(),
                    phase: self.phase,
                })
            }
        };
        Ok(next)
    }

    /// Sends `msg` along the path, charging its wire size to every link it
    /// crosses. Returns the programmable nodes that intercept it, in the
    /// order the message reaches them.
    pub fn propagate(&mut self, t: &Topology, msg: &NslpMessage, at: f64) -> Result<Vec<Interception>, SignalingError> {
        let next = self.next_phase(msg)?;
        let bytes = self.params.message_bytes;
        let mut hops: Vec<(NodeId, NodeId)> = self.path.hop_pairs().collect();
        let mut interceptions: Vec<Interception> = programmable_chain(t, &self.path, self.mode)
            .into_iter()
            .map(|node| Interception {
                node,
                path_index: self.path.position(node).unwrap(),
            })
            .collect();
        if msg.upstream_bound() {
            hops = hops.into_iter().rev().map(|(a, b)| (b, a)).collect();
            interceptions.reverse();
        }
        let n = hops.len().max(1) as f64;
        for (j, (from, to)) in hops.into_iter().enumerate() {
            *self.bytes_per_link.entry((from, to)).or_insert(0) += bytes;
            self.trace.push(MessageEvent {
                time: at + self.params.latency / 4.0 * (j as f64 / n),
                variant: msg.variant(),
                from,
                to,
                bytes,
            });
        }
        self.phase = next;
        Ok(interceptions)
    }

    /// Runs Setup, Probe/ProbeResponse and the configuring Setup. Caches are
    /// installed (or refreshed) in `caches` and chained toward the gateway.
    pub fn run_handshake(
        &mut self,
        t: &Topology,
        caches: &mut CacheTable,
        bundle: BundleId,
        ttl: f64,
        now: f64,
    ) -> Result<Handshake, SignalingError> {
        if !self.mode.is_programmable() {
            if self.phase != Phase::Idle {
                return Err(SignalingError::IllegalPhase {
                    variant: "setup",
                    phase: self.phase,
                });
            }
            let chain = ConfiguredChain::from_collected(self.initiator, &[]);
            self.chain = Some(chain.clone());
            self.phase = Phase::Configured;
            return Ok(Handshake {
                chain,
                latency: 0.0,
                bytes_per_link: BTreeMap::new(),
                installs: Vec::new(),
            });
        }

        let step = self.params.latency / 4.0;
        let setup = NslpMessage::Setup {
            bundle,
            ttl,
            chain_config: None,
        };
        let mut installs = Vec::new();
        for hit in self.propagate(t, &setup, now)? {
            let node = t.node(hit.node).expect("path nodes exist");
            installs.push((hit.node, caches.install(node, bundle, ttl, now)?));
        }

        let collected: Vec<NodeId> = self
            .propagate(t, &NslpMessage::Probe { collected: Vec::new() }, now + step)?
            .into_iter()
            .map(|i| i.node)
            .collect();
        self.propagate(
            t,
            &NslpMessage::ProbeResponse {
                collected: collected.clone(),
            },
            now + 2.0 * step,
        )?;

        let chain = ConfiguredChain::from_collected(self.initiator, &collected);
        let configure = NslpMessage::Setup {
            bundle,
            ttl,
            chain_config: Some(chain.upstream_of.clone()),
        };
        for hit in self.propagate(t, &configure, now + 3.0 * step)? {
            if let Some(c) = caches.get_mut(hit.node, bundle) {
                c.set_upstream(chain.upstream_of[&hit.node]);
            }
        }

        self.latency = if self.path.hops() > 0 { self.params.latency } else { 0.0 };
        self.chain = Some(chain.clone());
        Ok(Handshake {
            chain,
            latency: self.latency,
            bytes_per_link: self.bytes_per_link.clone(),
            installs,
        })
    }

    /// Marks a configured session as finished (content delivered).
    pub fn finish(&mut self) {
        if self.phase == Phase::Configured {
            self.phase = Phase::Done;
        }
    }

    /// Sends Remove along the path and uninstalls every intercepting cache.
    pub fn send_remove(
        &mut self,
        t: &Topology,
        caches: &mut CacheTable,
        bundle: BundleId,
        now: f64,
    ) -> Result<Vec<(NodeId, UninstallOutcome)>, SignalingError> {
        let hits = self.propagate(t, &NslpMessage::Remove { bundle }, now)?;
        Ok(hits
            .into_iter()
            .map(|i| (i.node, caches.uninstall(i.node, bundle)))
            .collect())
    }
}
