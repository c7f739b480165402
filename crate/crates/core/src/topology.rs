//! Network graph, deterministic data paths and the programmable nodes on them.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default application-level serving throughput of a node (10 Gb/s, i.e.
/// never the bottleneck on the reference topology).
pub const DEFAULT_SERVE_RATE: f64 = 10e9;

/// Gateway uplink bandwidth required by the reference profile.
pub const REFERENCE_UPLINK: f64 = 10e6;
/// Fast Ethernet, used between cores and from cores to edges.
pub const REFERENCE_CORE_SIDE: f64 = 100e6;
/// Gigabit Ethernet, used between edges and from edges to end hosts.
pub const REFERENCE_EDGE_SIDE: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Core,
    Edge,
    End,
    Gateway,
    Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Whether the node hosts the programmable-node environment.
    #[serde(default)]
    pub programmable: bool,
    /// Serving throughput in bits/second.
    #[serde(default = "default_serve_rate")]
    pub serve_rate: f64,
}

fn default_serve_rate() -> f64 {
    DEFAULT_SERVE_RATE
}

impl NodeSpec {
    pub fn new(id: u32, kind: NodeKind, programmable: bool) -> Self {
        Self {
            id: NodeId(id),
            kind,
            programmable,
            serve_rate: DEFAULT_SERVE_RATE,
        }
    }
}

/// An undirected link. Bandwidth in bits/second, latency in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub endpoints: [NodeId; 2],
    pub bandwidth: f64,
    #[serde(default)]
    pub latency: f64,
}

impl LinkSpec {
    pub fn new(a: u32, b: u32, bandwidth: f64, latency: f64) -> Self {
        Self {
            endpoints: [NodeId(a), NodeId(b)],
            bandwidth,
            latency,
        }
    }

    fn key(&self) -> (NodeId, NodeId) {
        link_key(self.endpoints[0], self.endpoints[1])
    }
}

fn link_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Classes of links used by the reference profile and by per-class goodput
/// overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    /// Any link touching the gateway.
    Uplink,
    /// Core-core and core-edge links.
    CoreSide,
    /// Everything else: edge-edge and edge-host links.
    EdgeSide,
}

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("cannot parse topology: {0}")]
    Parse(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("link {0}-{0} is a self-loop")]
    SelfLoop(NodeId),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(NodeId, NodeId),
    #[error("link {a}-{b}: {reason}")]
    InvalidLink {
        a: NodeId,
        b: NodeId,
        reason: &'static str,
    },
    #[error("node {0}: serve_rate must be positive")]
    InvalidServeRate(NodeId),
    #[error("expected exactly one gateway node, found {0}")]
    GatewayCount(usize),
    #[error("graph is disconnected: node {0} is unreachable from node {1}")]
    Disconnected(NodeId, NodeId),
    #[error("end node {node} has {links} links, expected exactly 1")]
    EndNodeLinks { node: NodeId, links: usize },
    #[error("end node {node} is attached to {neighbor}, which is not an edge node")]
    EndNodeNotOnEdge { node: NodeId, neighbor: NodeId },
}

#[derive(Deserialize)]
struct TopologyDocument {
    #[serde(default, rename = "node")]
    nodes: Vec<NodeSpec>,
    #[serde(default, rename = "link")]
    links: Vec<LinkSpec>,
}

/// A validated, immutable network graph.
#[derive(Clone, Debug)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeSpec>,
    links: Vec<LinkSpec>,
    /// Sorted neighbor lists.
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
    link_index: HashMap<(NodeId, NodeId), usize>,
    gateway: NodeId,
}

/// Parses and validates a topology description (TOML with `[[node]]` and
/// `[[link]]` tables).
pub fn load_topology(document: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDocument =
        toml::from_str(document).map_err(|e| TopologyError::Parse(e.to_string()))?;
    Topology::new(doc.nodes, doc.links)
}

impl Topology {
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<LinkSpec>) -> Result<Self, TopologyError> {
        let mut node_map = BTreeMap::new();
        for node in nodes {
            if !(node.serve_rate > 0.0) {
                return Err(TopologyError::InvalidServeRate(node.id));
            }
            let id = node.id;
            if node_map.insert(id, node).is_some() {
                return Err(TopologyError::DuplicateNode(id));
            }
        }

        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> =
            node_map.keys().map(|&id| (id, Vec::new())).collect();
        let mut link_index = HashMap::new();
        for (i, link) in links.iter().enumerate() {
            let [a, b] = link.endpoints;
            for id in [a, b] {
                if !node_map.contains_key(&id) {
                    return Err(TopologyError::UnknownNode(id));
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            if !(link.bandwidth > 0.0) {
                return Err(TopologyError::InvalidLink {
                    a,
                    b,
                    reason: "bandwidth must be positive",
                });
            }
            if !(link.latency >= 0.0) {
                return Err(TopologyError::InvalidLink {
                    a,
                    b,
                    reason: "latency must be non-negative",
                });
            }
            if link_index.insert(link.key(), i).is_some() {
                let (x, y) = link.key();
                return Err(TopologyError::DuplicateLink(x, y));
            }
            adjacency.get_mut(&a).unwrap().push(b);
            adjacency.get_mut(&b).unwrap().push(a);
        }
        for neighbors in adjacency.values_mut() {
            neighbors.sort_unstable();
        }

        let gateways: Vec<NodeId> = node_map
            .values()
            .filter(|n| n.kind == NodeKind::Gateway)
            .map(|n| n.id)
            .collect();
        if gateways.len() != 1 {
            return Err(TopologyError::GatewayCount(gateways.len()));
        }

        for node in node_map.values().filter(|n| n.kind == NodeKind::End) {
            let neighbors = &adjacency[&node.id];
            if neighbors.len() != 1 {
                return Err(TopologyError::EndNodeLinks {
                    node: node.id,
                    links: neighbors.len(),
                });
            }
            if node_map[&neighbors[0]].kind != NodeKind::Edge {
                return Err(TopologyError::EndNodeNotOnEdge {
                    node: node.id,
                    neighbor: neighbors[0],
                });
            }
        }

        let topology = Self {
            nodes: node_map,
            links,
            adjacency,
            link_index,
            gateway: gateways[0],
        };
        let reached = topology.bfs_parents(topology.gateway);
        if let Some(&missing) = topology.nodes.keys().find(|id| !reached.contains_key(id)) {
            return Err(TopologyError::Disconnected(missing, topology.gateway));
        }
        Ok(topology)
    }

    pub fn gateway(&self) -> NodeId {
        self.gateway
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&LinkSpec> {
        self.link_index.get(&link_key(a, b)).map(|&i| &self.links[i])
    }

    pub fn kind_count(&self, kind: NodeKind) -> usize {
        self.nodes.values().filter(|n| n.kind == kind).count()
    }

    /// End nodes that may issue requests, in ascending id order.
    pub fn clients(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::End)
            .map(|n| n.id)
            .collect()
    }

    pub fn link_class(&self, link: &LinkSpec) -> LinkClass {
        let kinds = link.endpoints.map(|id| self.nodes[&id].kind);
        if kinds.contains(&NodeKind::Gateway) {
            LinkClass::Uplink
        } else if kinds.contains(&NodeKind::Core) {
            LinkClass::CoreSide
        } else {
            LinkClass::EdgeSide
        }
    }

    /// Returns a copy of the topology with one node's serve rate replaced.
    pub fn with_serve_rate(&self, id: NodeId, serve_rate: f64) -> Result<Self, TopologyError> {
        let mut nodes: Vec<NodeSpec> = self.nodes.values().cloned().collect();
        let node = nodes
            .iter_mut()
            .find(|n| n.id == id)
            .ok_or(TopologyError::UnknownNode(id))?;
        node.serve_rate = serve_rate;
        Self::new(nodes, self.links.clone())
    }

    /// Returns a copy of the topology with one link's bandwidth replaced.
    pub fn with_bandwidth(&self, a: NodeId, b: NodeId, bandwidth: f64) -> Result<Self, TopologyError> {
        let i = *self
            .link_index
            .get(&link_key(a, b))
            .ok_or(TopologyError::UnknownNode(b))?;
        let mut links = self.links.clone();
        links[i].bandwidth = bandwidth;
        Self::new(self.nodes.values().cloned().collect(), links)
    }

    fn bfs_parents(&self, src: NodeId) -> HashMap<NodeId, Option<NodeId>> {
        let mut parent = HashMap::from([(src, None)]);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if !parent.contains_key(&v) {
                    parent.insert(v, Some(u));
                    queue.push_back(v);
                }
            }
        }
        parent
    }

    /// Shortest path by hop count.
    ///
    /// Ties are broken by taking the lexicographically smallest node sequence
    /// when read from the endpoint with the smaller id; the result for the
    /// opposite direction is its reversal, so `route(b, a)` is always
    /// `route(a, b)` reversed.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<PathRoute, TopologyError> {
        for id in [src, dst] {
            if !self.nodes.contains_key(&id) {
                return Err(TopologyError::UnknownNode(id));
            }
        }
        let (from, to) = if src <= dst { (src, dst) } else { (dst, src) };
        // BFS over sorted adjacency discovers every node first through the
        // lexicographically smallest shortest path.
        let parent = self.bfs_parents(from);
        let mut nodes = vec![to];
        let mut cur = to;
        while let Some(Some(p)) = parent.get(&cur) {
            nodes.push(*p);
            cur = *p;
        }
        if src <= dst {
            nodes.reverse();
        }
        Ok(PathRoute { nodes })
    }

    /// Links along consecutive nodes of `nodes`.
    pub fn path_links(&self, nodes: &[NodeId]) -> Vec<&LinkSpec> {
        nodes
            .windows(2)
            .map(|w| {
                self.link_between(w[0], w[1])
                    .expect("path nodes must be adjacent")
            })
            .collect()
    }
}

/// An ordered, loop-free node sequence where consecutive nodes are linked.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathRoute {
    nodes: Vec<NodeId>,
}

impl PathRoute {
    /// Builds a path, checking that it is loop-free and follows links of `t`.
    pub fn from_nodes(t: &Topology, nodes: Vec<NodeId>) -> Option<Self> {
        if nodes.is_empty() {
            return None;
        }
        let mut seen = std::collections::HashSet::new();
        if !nodes.iter().all(|n| t.node(*n).is_some() && seen.insert(*n)) {
            return None;
        }
        if nodes.windows(2).any(|w| t.link_between(w[0], w[1]).is_none()) {
            return None;
        }
        Some(Self { nodes })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    /// Directed hops in path order.
    pub fn hop_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentMode {
    /// No programmable nodes: every client downloads from the gateway.
    #[default]
    Legacy,
    /// Programmable environment on edge nodes only.
    EdgeOnly,
    /// Edge nodes plus the designated programmable core node.
    EdgePlusCore,
}

impl DeploymentMode {
    pub const ALL: [DeploymentMode; 3] = [Self::Legacy, Self::EdgeOnly, Self::EdgePlusCore];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Legacy => "legacy",
            Self::EdgeOnly => "edge_only",
            Self::EdgePlusCore => "edge_plus_core",
        }
    }

    pub fn is_programmable(self) -> bool {
        self != Self::Legacy
    }

    /// Whether `node` runs the programmable environment under this mode.
    pub fn activates(self, node: &NodeSpec) -> bool {
        match self {
            Self::Legacy => false,
            Self::EdgeOnly => node.programmable && node.kind == NodeKind::Edge,
            Self::EdgePlusCore => {
                node.programmable && matches!(node.kind, NodeKind::Edge | NodeKind::Core)
            }
        }
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeploymentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "legacy" => Ok(Self::Legacy),
            "edge_only" | "edge-only" | "E" => Ok(Self::EdgeOnly),
            "edge_plus_core" | "edge-plus-core" | "E+C" => Ok(Self::EdgePlusCore),
            other => Err(format!(
                "unknown mode `{other}` (expected legacy, edge_only or edge_plus_core)"
            )),
        }
    }
}

/// Programmable nodes strictly inside `path` that are active under `mode`,
/// ordered from the path source (the gateway) toward the destination.
pub fn programmable_chain(t: &Topology, path: &PathRoute, mode: DeploymentMode) -> Vec<NodeId> {
    let nodes = path.nodes();
    if nodes.len() < 3 {
        return Vec::new();
    }
    nodes[1..nodes.len() - 1]
        .iter()
        .copied()
        .filter(|&id| t.node(id).is_some_and(|n| mode.activates(n)))
        .collect()
}

/// Violations of the reference testbed rules.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ProfileReport {
    pub violations: Vec<String>,
}

impl ProfileReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the reference testbed rules: every edge has at least two core
/// neighbors, the gateway uplink is 10 Mb/s, edge-side links are 1 Gb/s and
/// core-side links are 100 Mb/s.
pub fn validate_reference_profile(t: &Topology) -> ProfileReport {
    let mut violations = Vec::new();
    for node in t.nodes().filter(|n| n.kind == NodeKind::Edge) {
        let cores = t
            .neighbors(node.id)
            .iter()
            .filter(|&&n| t.node(n).unwrap().kind == NodeKind::Core)
            .count();
        if cores < 2 {
            violations.push(format!("edge {} has {} core links", node.id, cores));
        }
    }
    for link in t.links() {
        let [a, b] = link.endpoints;
        let (expected, label) = match t.link_class(link) {
            LinkClass::Uplink => (REFERENCE_UPLINK, "gateway uplink"),
            LinkClass::CoreSide => (REFERENCE_CORE_SIDE, "core-side link"),
            LinkClass::EdgeSide => (REFERENCE_EDGE_SIDE, "edge-side link"),
        };
        if link.bandwidth != expected {
            violations.push(format!(
                "{label} {a}-{b} is {} b/s, expected {expected} b/s",
                link.bandwidth
            ));
        }
    }
    ProfileReport { violations }
}
