//! Allocation-only core of the crowdnav platform.
//!
//! Everything in this crate is deterministic and free of IO: the 2D world
//! simulation, the robot's navigation stack, the participant task script,
//! the per-host session registry, the sticky round-robin router used by
//! the gateway, and the metrics computed over trajectory logs. The `std`
//! companion crate wires these into services.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod avatar;
pub mod collision;
pub mod geometry;
pub mod grid;
pub mod lidar;
pub mod metrics;
pub mod nav;
pub mod routing;
pub mod scenario;
pub mod session;
pub mod social_force;
pub mod task;
pub mod world;

pub use agent::{AgentId, AgentKind, AgentState};
pub use avatar::{AvatarCommand, Camera, Key};
pub use geometry::{normalize_angle, Pose2D, Vec2};
pub use grid::{Cell, CellIndex, OccupancyGrid};
pub use social_force::SocialForceParams;
pub use world::{WorldConfig, WorldEvent, WorldState};
