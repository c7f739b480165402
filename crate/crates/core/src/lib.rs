//! On-path caching of sensor data in programmable network nodes.
//!
//! The crate models a sensor gateway that distributes time-windowed sensor
//! readings to clients. In the programmable deployment modes, a path-coupled
//! signaling handshake installs cache modules on the programmable nodes along
//! the gateway-to-client path, chains them toward the gateway, and redirects
//! the client to the nearest one. Caches answer what they hold and pull only
//! the missing part from upstream.
//!
//! Module map:
//!
//! - [`topology`]: network graph, deterministic routing, programmable chains.
//! - [`sensordata`]: synthetic readings, the gateway store and data packages.
//! - [`signaling`]: SETUP / PROBE / REMOVE sessions and chain configuration.
//! - [`cache`]: per-node cache instances with TTL soft state and partial fill.
//! - [`delivery`]: end-to-end request orchestration and the bottleneck model.
//! - [`metrics`]: per-link traffic accounting and report aggregation.
//! - [`harness`]: event engine, scenario configuration and report emission.

pub mod cache;
pub mod delivery;
pub mod harness;
pub mod metrics;
pub mod sensordata;
pub mod signaling;
pub mod topology;

pub use cache::{CacheInstance, CacheTable, LookupResult};
pub use delivery::{ModelParams, RequestOutcome, World};
pub use harness::{run_scenario, ScenarioConfig};
pub use metrics::{RunReport, TrafficClass};
pub use sensordata::{DataPackage, Query, ReadingStore, SensorReading, Timestamp};
pub use signaling::{ConfiguredChain, NslpMessage, SignalingSession};
pub use topology::{DeploymentMode, NodeId, NodeKind, PathRoute, Topology};
