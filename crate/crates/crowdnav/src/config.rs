//! Configuration file shared by the host and gateway roles.
//!
//! ```toml
//! [host]
//! host_id = "host-1"
//! bind = "127.0.0.1:7101"
//! max_sessions = 10
//!
//! [gateway]
//! bind = "127.0.0.1:7100"
//! hosts = [{ id = "host-1", url = "http://127.0.0.1:7101" }]
//! ```
//!
//! Host settings can be overridden from the environment with
//! `CROWDNAV_HOST_ID`, `CROWDNAV_BIND`, `CROWDNAV_MAX_SESSIONS`,
//! `CROWDNAV_TIME_LIMIT`, `CROWDNAV_DATA_DIR` and `CROWDNAV_PACING`.

use std::path::{Path, PathBuf};

use crowdnav_core::nav::NavParams;
use crowdnav_core::session::{HostConfig, DEFAULT_LAUNCH_LANES, DEFAULT_MAX_SESSIONS, DEFAULT_TIME_LIMIT_S};
use crowdnav_core::task::TaskParams;
use crowdnav_core::WorldConfig;
use serde::{Deserialize, Serialize};

/// How a session worker advances its clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Fixed-rate ticks on the wall clock.
    Realtime,
    /// One tick per client key message. Makes scripted runs reproducible.
    Lockstep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostSettings {
    pub host_id: String,
    pub bind: String,
    pub max_sessions: usize,
    /// seconds; the shorter of this and the scenario limit applies
    pub time_limit: f64,
    pub data_dir: PathBuf,
    pub launch_lanes: usize,
    pub reap_period_ms: u64,
    pub pacing: Pacing,
    /// Log every n-th tick.
    pub decimation: u32,
    /// Send a snapshot every n-th tick in realtime pacing.
    pub snapshot_every: u32,
    /// Wall-clock deadline multiplier for lockstep sessions, which expire
    /// on simulated time.
    pub lockstep_deadline_factor: f64,
    /// Extra `maps/` and `scenarios/` on top of the built-in set.
    pub asset_dir: Option<PathBuf>,
    pub world: WorldConfig,
    pub nav: NavParams,
    pub tasks: TaskParams,
}

impl Default for HostSettings {
    fn default() -> Self {
        Self {
            host_id: "host-1".into(),
            bind: "127.0.0.1:7101".into(),
            max_sessions: DEFAULT_MAX_SESSIONS,
            time_limit: DEFAULT_TIME_LIMIT_S,
            data_dir: PathBuf::from("data"),
            launch_lanes: DEFAULT_LAUNCH_LANES,
            reap_period_ms: 500,
            pacing: Pacing::Realtime,
            decimation: 1,
            snapshot_every: 2,
            lockstep_deadline_factor: 20.0,
            asset_dir: None,
            world: WorldConfig::default(),
            nav: NavParams::default(),
            tasks: TaskParams::default(),
        }
    }
}

impl HostSettings {
    pub fn registry_config(&self) -> HostConfig {
        let time_limit = match self.pacing {
            Pacing::Realtime => self.time_limit,
            Pacing::Lockstep => self.time_limit * self.lockstep_deadline_factor,
        };
        HostConfig {
            host_id: self.host_id.clone(),
            max_sessions: self.max_sessions,
            time_limit,
            launch_lanes: self.launch_lanes,
        }
    }

    /// Applies `CROWDNAV_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = var("CROWDNAV_HOST_ID") {
            self.host_id = v;
        }
        if let Some(v) = var("CROWDNAV_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("CROWDNAV_MAX_SESSIONS") {
            self.max_sessions = v.parse().map_err(|_| anyhow::anyhow!("CROWDNAV_MAX_SESSIONS={v:?} is not a count"))?;
        }
        if let Some(v) = var("CROWDNAV_TIME_LIMIT") {
            self.time_limit = v.parse().map_err(|_| anyhow::anyhow!("CROWDNAV_TIME_LIMIT={v:?} is not a number"))?;
        }
        if let Some(v) = var("CROWDNAV_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("CROWDNAV_PACING") {
            self.pacing = match v.as_str() {
                "realtime" => Pacing::Realtime,
                "lockstep" => Pacing::Lockstep,
                _ => anyhow::bail!("CROWDNAV_PACING={v:?} must be realtime or lockstep"),
            };
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.registry_config().validate()?;
        anyhow::ensure!(self.decimation >= 1, "decimation must be at least 1");
        anyhow::ensure!(self.snapshot_every >= 1, "snapshot_every must be at least 1");
        anyhow::ensure!(self.reap_period_ms >= 1, "reap_period_ms must be positive");
        anyhow::ensure!(self.lockstep_deadline_factor >= 1.0, "lockstep_deadline_factor must be at least 1");
        self.world.social_force.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostEndpoint {
    pub id: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub bind: String,
    pub hosts: Vec<HostEndpoint>,
    /// seconds
    pub sticky_window: u64,
    pub health_period_ms: u64,
    pub probe_timeout_ms: u64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7100".into(),
            hosts: Vec::new(),
            sticky_window: 7200,
            health_period_ms: 1000,
            probe_timeout_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub host: HostSettings,
    pub gateway: GatewaySettings,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}
