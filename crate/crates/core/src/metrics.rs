//! Traffic accounting and run-level aggregates.
//!
//! Traffic is measured in byte-hops: every directed link traversal adds the
//! bytes it carried. Counters are kept per directed link and per class so that
//! both the network-wide totals and the per-link view can be recomputed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sensordata::Query;
use crate::topology::{DeploymentMode, NodeId, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    Http,
    Signaling,
    Bundle,
}

/// Bytes of one class carried over one directed link.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub from: NodeId,
    pub to: NodeId,
    pub class: TrafficClass,
    pub bytes: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBytes {
    pub http: u64,
    pub signaling: u64,
    pub bundle: u64,
}

impl ClassBytes {
    pub fn add(&mut self, class: TrafficClass, bytes: u64) {
        match class {
            TrafficClass::Http => self.http += bytes,
            TrafficClass::Signaling => self.signaling += bytes,
            TrafficClass::Bundle => self.bundle += bytes,
        }
    }

    pub fn get(&self, class: TrafficClass) -> u64 {
        match class {
            TrafficClass::Http => self.http,
            TrafficClass::Signaling => self.signaling,
            TrafficClass::Bundle => self.bundle,
        }
    }

    pub fn filtered(&self, classes: &[TrafficClass]) -> u64 {
        classes.iter().map(|&c| self.get(c)).sum()
    }

    fn accumulate(&mut self, other: &ClassBytes) {
        self.http += other.http;
        self.signaling += other.signaling;
        self.bundle += other.bundle;
    }
}

/// Class filter matching the HTTP content only.
pub const HTTP_ONLY: &[TrafficClass] = &[TrafficClass::Http];
/// HTTP plus signaling: the total traffic curve.
pub const HTTP_AND_SIGNALING: &[TrafficClass] = &[TrafficClass::Http, TrafficClass::Signaling];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("flow over unknown link {0}->{1}")]
    UnknownLink(NodeId, NodeId),
    #[error("report has no requests")]
    EmptyReport,
    #[error("request index {k} out of range (report has {n} requests)")]
    IndexOutOfRange { k: usize, n: usize },
    #[error("reports do not share a scenario shape: {0}")]
    ShapeMismatch(String),
}

/// Sums the byte-hops of `flows` by class.
pub fn flow_totals(flows: &[Flow]) -> ClassBytes {
    let mut total = ClassBytes::default();
    for f in flows {
        total.add(f.class, f.bytes);
    }
    total
}

/// Per directed link cumulative byte counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkCounters {
    counters: BTreeMap<(NodeId, NodeId), ClassBytes>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRow {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(flatten)]
    pub bytes: ClassBytes,
}

impl LinkCounters {
    /// Zeroed counters for both directions of every link of `t`.
    pub fn new(t: &Topology) -> Self {
        let mut counters = BTreeMap::new();
        for link in t.links() {
            let [a, b] = link.endpoints;
            counters.insert((a, b), ClassBytes::default());
            counters.insert((b, a), ClassBytes::default());
        }
        Self { counters }
    }

    /// Adds every flow to its link. Fails without recording anything if a
    /// flow names a link that does not exist.
    pub fn record_flows(&mut self, flows: &[Flow]) -> Result<(), MetricsError> {
        if let Some(f) = flows.iter().find(|f| !self.counters.contains_key(&(f.from, f.to))) {
            return Err(MetricsError::UnknownLink(f.from, f.to));
        }
        for f in flows {
            self.counters.get_mut(&(f.from, f.to)).unwrap().add(f.class, f.bytes);
        }
        Ok(())
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> Option<ClassBytes> {
        self.counters.get(&(from, to)).copied()
    }

    /// Network-wide byte-hops per class.
    pub fn totals(&self) -> ClassBytes {
        let mut total = ClassBytes::default();
        for c in self.counters.values() {
            total.accumulate(c);
        }
        total
    }

    pub fn rows(&self) -> Vec<LinkRow> {
        self.counters
            .iter()
            .map(|(&(from, to), &bytes)| LinkRow { from, to, bytes })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_creation: f64,
    pub t_signaling: f64,
    pub t_processing: f64,
    pub t_http: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.t_creation + self.t_signaling + self.t_processing + self.t_http
    }
}

/// Where the bytes of one request came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub node: NodeId,
    pub entries: usize,
    pub bytes: u64,
    /// Nodes from the source to the client.
    pub segment: Vec<NodeId>,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub index: usize,
    pub client: NodeId,
    pub mode: DeploymentMode,
    pub issued_at: f64,
    pub completed_at: f64,
    pub path: Vec<NodeId>,
    pub chain: Vec<NodeId>,
    pub redirect_target: NodeId,
    pub timing: Timing,
    pub total: f64,
    pub entries: usize,
    pub package_bytes: u64,
    /// Byte-hops by class attributed to this request.
    pub traffic: ClassBytes,
    pub sources: Vec<SourceRecord>,
    pub flows: Vec<Flow>,
    pub warnings: Vec<String>,
}

impl RequestRecord {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    /// True when some of the content had to come from the gateway.
    pub fn reached_gateway(&self) -> bool {
        self.sources.iter().any(|s| s.node == self.path[0] && s.bytes > 0)
    }
}

/// An explicit teardown issued between requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub after_request: usize,
    pub client: NodeId,
    pub at: f64,
    pub uninstalled: Vec<NodeId>,
    pub flows: Vec<Flow>,
}

/// What two runs must agree on to be compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioShape {
    pub name: String,
    pub clients: Vec<NodeId>,
    pub query: Query,
    pub sensors: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub t_creation: f64,
    pub t_signaling: f64,
    pub t_processing: f64,
    pub t_http: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedSeries {
    /// `cumulative[k]` is the traffic of requests `1..=k`; `cumulative[0]` is zero.
    pub cumulative: Vec<ClassBytes>,
    pub download_times: Vec<f64>,
    pub mean: Option<Decomposition>,
}

impl DerivedSeries {
    pub fn from_records(records: &[RequestRecord]) -> Self {
        let mut cumulative = vec![ClassBytes::default()];
        let mut acc = ClassBytes::default();
        for r in records {
            acc.accumulate(&r.traffic);
            cumulative.push(acc);
        }
        Self {
            cumulative,
            download_times: records.iter().map(|r| r.total).collect(),
            mean: mean_of(records),
        }
    }
}

fn mean_of(records: &[RequestRecord]) -> Option<Decomposition> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let mut d = Decomposition::default();
    for r in records {
        d.t_creation += r.timing.t_creation;
        d.t_signaling += r.timing.t_signaling;
        d.t_processing += r.timing.t_processing;
        d.t_http += r.timing.t_http;
        d.total += r.total;
    }
    d.t_creation /= n;
    d.t_signaling /= n;
    d.t_processing /= n;
    d.t_http /= n;
    d.total /= n;
    Some(d)
}

/// Everything a run produced. The link table and derived series are
/// functions of the request and removal records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: DeploymentMode,
    pub seed: u64,
    pub shape: ScenarioShape,
    /// Echo of the configuration the run used.
    pub config: serde_json::Value,
    pub requests: Vec<RequestRecord>,
    pub removals: Vec<RemovalRecord>,
    pub links: Vec<LinkRow>,
    pub series: DerivedSeries,
}

impl RunReport {
    pub fn new(
        t: &Topology,
        mode: DeploymentMode,
        seed: u64,
        shape: ScenarioShape,
        config: serde_json::Value,
        requests: Vec<RequestRecord>,
        removals: Vec<RemovalRecord>,
    ) -> Result<Self, MetricsError> {
        let mut counters = LinkCounters::new(t);
        for r in &requests {
            counters.record_flows(&r.flows)?;
        }
        for r in &removals {
            counters.record_flows(&r.flows)?;
        }
        let series = DerivedSeries::from_records(&requests);
        Ok(Self {
            mode,
            seed,
            shape,
            config,
            requests,
            removals,
            links: counters.rows(),
            series,
        })
    }

    /// Network-wide byte-hops over requests and removals.
    pub fn totals(&self) -> ClassBytes {
        let mut total = ClassBytes::default();
        for row in &self.links {
            total.accumulate(&row.bytes);
        }
        total
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Byte-hops of requests `1..=k` in the given classes.
pub fn cumulative_traffic(report: &RunReport, k: usize, classes: &[TrafficClass]) -> Result<u64, MetricsError> {
    let n = report.requests.len();
    if k > n {
        return Err(MetricsError::IndexOutOfRange { k, n });
    }
    Ok(report.requests[..k].iter().map(|r| r.traffic.filtered(classes)).sum())
}

/// Mean of each timing component over all requests.
pub fn average_decomposition(report: &RunReport) -> Result<Decomposition, MetricsError> {
    mean_of(&report.requests).ok_or(MetricsError::EmptyReport)
}

fn check_shape(a: &RunReport, b: &RunReport) -> Result<(), MetricsError> {
    let (x, y) = (&a.shape, &b.shape);
    if x.clients != y.clients {
        return Err(MetricsError::ShapeMismatch("client sequences differ".into()));
    }
    if x.query != y.query {
        return Err(MetricsError::ShapeMismatch("queries differ".into()));
    }
    if x.sensors != y.sensors {
        return Err(MetricsError::ShapeMismatch(format!(
            "sensor counts differ ({} vs {})",
            x.sensors, y.sensors
        )));
    }
    Ok(())
}

/// `1 - programmable / legacy` over HTTP byte-hops.
pub fn traffic_reduction(legacy: &RunReport, programmable: &RunReport) -> Result<f64, MetricsError> {
    check_shape(legacy, programmable)?;
    let base = cumulative_traffic(legacy, legacy.requests.len(), HTTP_ONLY)?;
    let other = cumulative_traffic(programmable, programmable.requests.len(), HTTP_ONLY)?;
    if base == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - other as f64 / base as f64)
}

/// Side-by-side view of several runs of the same scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub modes: Vec<DeploymentMode>,
    /// One cumulative HTTP curve per run.
    pub http_curves: Vec<Vec<u64>>,
    /// One cumulative HTTP+signaling curve per run.
    pub total_curves: Vec<Vec<u64>>,
    /// Reduction of every run relative to the first one, HTTP class.
    pub reduction_vs_first: Vec<f64>,
    pub means: Vec<Decomposition>,
    pub mean_download_time: Vec<f64>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

pub fn compare_runs(reports: &[RunReport]) -> Result<Comparison, MetricsError> {
    let first = reports.first().ok_or(MetricsError::EmptyReport)?;
    for r in reports {
        check_shape(first, r)?;
    }
    let curve = |r: &RunReport, classes: &[TrafficClass]| {
        r.series.cumulative.iter().map(|c| c.filtered(classes)).collect::<Vec<u64>>()
    };
    let mut out = Comparison {
        modes: Vec::new(),
        http_curves: Vec::new(),
        total_curves: Vec::new(),
        reduction_vs_first: Vec::new(),
        means: Vec::new(),
        mean_download_time: Vec::new(),
    };
    for r in reports {
        let mean = average_decomposition(r)?;
        out.modes.push(r.mode);
        out.http_curves.push(curve(r, HTTP_ONLY));
        out.total_curves.push(curve(r, HTTP_AND_SIGNALING));
        out.reduction_vs_first.push(traffic_reduction(first, r)?);
        out.means.push(mean);
        out.mean_download_time.push(mean.total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensordata::Timestamp;
    use crate::topology::{LinkSpec, NodeKind, NodeSpec};

    fn line3() -> Topology {
        Topology::new(
            vec![
                NodeSpec::new(0, NodeKind::Gateway, false),
                NodeSpec::new(1, NodeKind::Edge, true),
                NodeSpec::new(2, NodeKind::Edge, true),
                NodeSpec::new(3, NodeKind::End, false),
            ],
            vec![
                LinkSpec::new(0, 1, 1e7, 0.0),
                LinkSpec::new(1, 2, 1e9, 0.0),
                LinkSpec::new(2, 3, 1e9, 0.0),
            ],
        )
        .unwrap()
    }

    fn flows_along(path: &[u32], class: TrafficClass, bytes: u64) -> Vec<Flow> {
        path.windows(2)
            .map(|w| Flow {
                from: NodeId(w[0]),
                to: NodeId(w[1]),
                class,
                bytes,
            })
            .collect()
    }

    fn record(index: usize, http_per_hop: u64, timing: Timing) -> RequestRecord {
        let flows = flows_along(&[0, 1, 2, 3], TrafficClass::Http, http_per_hop);
        RequestRecord {
            index,
            client: NodeId(3),
            mode: DeploymentMode::Legacy,
            issued_at: 0.0,
            completed_at: timing.total(),
            path: vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)],
            chain: vec![],
            redirect_target: NodeId(0),
            timing,
            total: timing.total(),
            entries: 0,
            package_bytes: http_per_hop,
            traffic: flow_totals(&flows),
            sources: vec![],
            flows,
            warnings: vec![],
        }
    }

    fn report(records: Vec<RequestRecord>) -> RunReport {
        let shape = ScenarioShape {
            name: "t".into(),
            clients: records.iter().map(|r| r.client).collect(),
            query: Query::all(Timestamp(0), Timestamp(1)).unwrap(),
            sensors: 1,
        };
        RunReport::new(&line3(), DeploymentMode::Legacy, 0, shape, serde_json::Value::Null, records, vec![]).unwrap()
    }

    #[test]
    fn record_flows_counts_byte_hops() {
        let mut c = LinkCounters::new(&line3());
        c.record_flows(&[]).unwrap();
        assert_eq!(c.totals(), ClassBytes::default());

        c.record_flows(&flows_along(&[0, 1, 2, 3], TrafficClass::Signaling, 100)).unwrap();
        assert_eq!(c.totals().signaling, 300);

        c.record_flows(&flows_along(&[0, 1, 2, 3], TrafficClass::Http, 4_320_000)).unwrap();
        assert_eq!(c.totals().http, 4_320_000 * 3);
        assert_eq!(c.get(NodeId(1), NodeId(0)).unwrap(), ClassBytes::default());

        let bad = flows_along(&[0, 2], TrafficClass::Http, 1);
        assert!(matches!(c.record_flows(&bad), Err(MetricsError::UnknownLink(NodeId(0), NodeId(2)))));
    }

    #[test]
    fn cumulative_and_decomposition() {
        let t = Timing {
            t_creation: 0.5,
            t_signaling: 0.0,
            t_processing: 0.01,
            t_http: 4.0,
        };
        let r = report((0..4).map(|i| record(i, 1000, t)).collect());
        assert_eq!(cumulative_traffic(&r, 0, HTTP_ONLY).unwrap(), 0);
        for k in 0..=4 {
            // equal hop counts: exactly linear
            assert_eq!(cumulative_traffic(&r, k, HTTP_ONLY).unwrap(), 3000 * k as u64);
            assert_eq!(r.series.cumulative[k].http, 3000 * k as u64);
        }
        assert!(cumulative_traffic(&r, 5, HTTP_ONLY).is_err());
        let d = average_decomposition(&r).unwrap();
        assert_eq!(d.t_creation, 0.5);
        assert_eq!(d.t_processing, 0.01);
        assert!(matches!(average_decomposition(&report(vec![])), Err(MetricsError::EmptyReport)));
    }

    #[test]
    fn reduction_of_identical_runs_is_zero() {
        let t = Timing::default();
        let r = report((0..3).map(|i| record(i, 10, t)).collect());
        assert_eq!(traffic_reduction(&r, &r).unwrap(), 0.0);
        let cmp = compare_runs(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(cmp.reduction_vs_first, vec![0.0, 0.0]);

        let mut other = report((0..2).map(|i| record(i, 10, t)).collect());
        assert!(matches!(traffic_reduction(&r, &other), Err(MetricsError::ShapeMismatch(_))));
        other.shape = r.shape.clone();
        other.shape.sensors = 2;
        assert!(traffic_reduction(&r, &other).is_err());
    }

    #[test]
    fn series_are_recomputable_after_serde() {
        let t = Timing {
            t_creation: 0.1,
            t_signaling: 1.6,
            t_processing: 0.01,
            t_http: 0.3,
        };
        let r = report((0..5).map(|i| record(i, 7 * i as u64, t)).collect());
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(DerivedSeries::from_records(&back.requests), back.series);
        assert_eq!(back, r);
    }
}
