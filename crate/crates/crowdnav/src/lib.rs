//! Services, file formats and the command line around `crowdnav_core`.

pub mod assets;
pub mod batch;
pub mod bots;
pub mod config;
pub mod gateway;
pub mod host;
pub mod protocol;
pub mod replay;
pub mod telemetry;
pub mod worker;
