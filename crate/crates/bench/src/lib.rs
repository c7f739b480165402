//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use pathcache::{DeploymentMode, ScenarioConfig, Topology};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn ref60() -> Topology {
    let text = std::fs::read_to_string(scenarios_dir().join("ref60.toml")).expect("ref60.toml is readable");
    pathcache::topology::load_topology(&text).expect("ref60.toml is valid")
}

/// The 4 MB preset with the given mode and sensor count.
pub fn preset(mode: DeploymentMode, sensors: u32) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::load(&scenarios_dir().join("preset-4mb.toml")).expect("preset loads");
    cfg.mode = mode;
    cfg.sensors.count = sensors;
    cfg
}
