//! Scenario configuration files.
//!
//! A scenario is one TOML file. Relative paths inside it (the topology and
//! an optional reading dump) are resolved against the file's directory.
//!
//! ```toml
//! name = "preset-4mb"
//! topology = "ref60.toml"
//! mode = "edge_only"
//! seed = 1
//!
//! [sensors]
//! count = 1000
//! rate_per_min = 4.0
//! duration_s = 360.0
//!
//! [query]
//! window_s = 360.0
//!
//! [schedule]
//! requests = 35
//! order = "round_robin"
//!
//! [model]
//! goodput = 0.85
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::delivery::ModelParams;
use crate::sensordata::{SensorGenerator, WireFormat, DEFAULT_ENTRY_BYTES};
use crate::topology::{DeploymentMode, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub count: u32,
    /// Updates per minute per sensor.
    pub rate_per_min: f64,
    /// Length of the generated history; also the simulation start time.
    pub duration_s: f64,
    #[serde(default = "default_entry_bytes")]
    pub entry_bytes: u64,
    #[serde(default)]
    pub envelope_bytes: u64,
    /// Replay readings from a dump instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readings: Option<PathBuf>,
}

fn default_entry_bytes() -> u64 {
    DEFAULT_ENTRY_BYTES
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            rate_per_min: 4.0,
            duration_s: 360.0,
            entry_bytes: DEFAULT_ENTRY_BYTES,
            envelope_bytes: 0,
            readings: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    /// The query covers the last `window_s` seconds of the history.
    pub window_s: f64,
    /// Restrict the query to these sensors; empty means all.
    pub sensors: Vec<u32>,
    pub type_tag: String,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            window_s: 360.0,
            sensors: Vec::new(),
            type_tag: "sensor_data".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientOrder {
    /// One client per edge node in turn, edges in id order.
    #[default]
    RoundRobin,
    ById,
    /// Seeded shuffle of the client list.
    Shuffled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Each request starts `gap_s` after the previous one completes.
    #[default]
    Sequential,
    /// Request `i` starts at `i * interval_s`, regardless of completions.
    FixedInterval,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSharing {
    #[default]
    None,
    /// Transfers overlapping in time split each shared link equally.
    EqualShare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovalConfig {
    /// 1-based index of the request after whose completion Remove is sent.
    pub after_request: usize,
    pub client: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub requests: usize,
    pub order: ClientOrder,
    /// Explicit client sequence; overrides `order` when non-empty.
    pub clients: Vec<NodeId>,
    pub kind: ScheduleKind,
    pub gap_s: f64,
    pub interval_s: f64,
    pub bandwidth_sharing: BandwidthSharing,
    pub removals: Vec<RemovalConfig>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            requests: 35,
            order: ClientOrder::RoundRobin,
            clients: Vec::new(),
            kind: ScheduleKind::Sequential,
            gap_s: 0.0,
            interval_s: 1.0,
            bandwidth_sharing: BandwidthSharing::None,
            removals: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeRateOverride {
    pub node: NodeId,
    /// Bits per second.
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub topology: PathBuf,
    #[serde(default, with = "mode_name")]
    pub mode: DeploymentMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub query: QueryConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub serve_rate_overrides: Vec<ServeRateOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_seed() -> u64 {
    1
}

mod mode_name {
    use super::DeploymentMode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DeploymentMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DeploymentMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

impl ScenarioConfig {
    /// A default scenario over the given topology file.
    pub fn with_topology(topology: impl Into<PathBuf>) -> Self {
        Self {
            name: default_name(),
            topology: topology.into(),
            mode: DeploymentMode::Legacy,
            seed: default_seed(),
            sensors: SensorConfig::default(),
            query: QueryConfig::default(),
            schedule: ScheduleConfig::default(),
            model: ModelParams::default(),
            serve_rate_overrides: Vec::new(),
            output_dir: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("")).to_owned();
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_owned();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn topology_path(&self) -> PathBuf {
        self.resolve(&self.topology)
    }

    pub fn generator(&self) -> SensorGenerator {
        SensorGenerator {
            sensors: self.sensors.count,
            rate_per_min: self.sensors.rate_per_min,
            duration_s: self.sensors.duration_s,
            seed: self.seed,
        }
    }

    pub fn wire_format(&self) -> WireFormat {
        WireFormat {
            entry_bytes: self.sensors.entry_bytes,
            envelope_bytes: self.sensors.envelope_bytes,
        }
    }

    pub fn serve_rates(&self) -> BTreeMap<NodeId, f64> {
        self.serve_rate_overrides.iter().map(|o| (o.node, o.rate)).collect()
    }

    /// Checks that every dimensional parameter is in range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |field, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be non-negative, got {v}")))
            }
        };
        let s = &self.sensors;
        if s.count == 0 {
            return Err(invalid("sensors.count", "must be at least 1"));
        }
        positive("sensors.rate_per_min", s.rate_per_min)?;
        positive("sensors.duration_s", s.duration_s)?;
        if s.entry_bytes == 0 {
            return Err(invalid("sensors.entry_bytes", "must be at least 1"));
        }
        if self.generator().period_ms() == 0 {
            return Err(invalid("sensors.rate_per_min", "sampling period rounds to zero"));
        }
        positive("query.window_s", self.query.window_s)?;
        if self.query.window_s > s.duration_s {
            return Err(invalid(
                "query.window_s",
                format!("{} s exceeds the {} s history", self.query.window_s, s.duration_s),
            ));
        }
        let sch = &self.schedule;
        if sch.requests == 0 {
            return Err(invalid("schedule.requests", "must be at least 1"));
        }
        non_negative("schedule.gap_s", sch.gap_s)?;
        if sch.kind == ScheduleKind::FixedInterval {
            positive("schedule.interval_s", sch.interval_s)?;
        }
        for r in &sch.removals {
            if r.after_request == 0 || r.after_request > sch.requests {
                return Err(invalid(
                    "schedule.removals.after_request",
                    format!("{} is outside 1..={}", r.after_request, sch.requests),
                ));
            }
        }
        let m = &self.model;
        non_negative("model.k_create", m.k_create)?;
        if !(m.goodput > 0.0 && m.goodput <= 1.0) {
            return Err(invalid("model.goodput", format!("must be in (0, 1], got {}", m.goodput)));
        }
        for g in m.goodput_overrides.values() {
            if !(*g > 0.0 && *g <= 1.0) {
                return Err(invalid("model.goodput_overrides", format!("must be in (0, 1], got {g}")));
            }
        }
        non_negative("model.processing", m.processing)?;
        non_negative("model.signaling.latency", m.signaling.latency)?;
        positive("model.ttl", m.ttl)?;
        for o in &self.serve_rate_overrides {
            positive("serve_rate_overrides.rate", o.rate)?;
        }
        Ok(())
    }

    /// Echo used in reports. Paths are kept as written.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
