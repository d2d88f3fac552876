//! Circular-specification social force model: goal relaxation plus
//! exponential repulsion from neighbors and the nearest static obstacle.

use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentId, AgentState};
use crate::geometry::{Pose2D, Vec2};
use crate::grid::OccupancyGrid;

/// Obstacles whose surface is farther than this from the agent's rim are
/// ignored (the term is below 0.02 at that range with default values).
pub const OBSTACLE_CUTOFF: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialForceParams {
    /// τ, seconds
    pub relaxation_time: f64,
    pub repulsion_strength: f64,
    /// meters
    pub repulsion_range: f64,
    pub obstacle_strength: f64,
    /// meters
    pub obstacle_range: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            relaxation_time: 0.5,
            repulsion_strength: 2.0,
            repulsion_range: 0.35,
            obstacle_strength: 3.0,
            obstacle_range: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("social force parameter `{name}` must be strictly positive, got {value}")]
pub struct ParamError {
    pub name: &'static str,
    pub value: f64,
}

impl SocialForceParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let fields = [
            ("relaxation_time", self.relaxation_time),
            ("repulsion_strength", self.repulsion_strength),
            ("repulsion_range", self.repulsion_range),
            ("obstacle_strength", self.obstacle_strength),
            ("obstacle_range", self.obstacle_range),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ParamError { name, value });
            }
        }
        Ok(())
    }
}

/// `desired_speed` along the unit vector toward `waypoint`.
pub fn desired_velocity(agent: &AgentState, waypoint: &Pose2D) -> Vec2 {
    (waypoint.position() - agent.position())
        .normalized()
        .map_or(Vec2::ZERO, |dir| dir * agent.desired_speed)
}

pub fn goal_term(agent: &AgentState, waypoint: &Pose2D, params: &SocialForceParams) -> Vec2 {
    (desired_velocity(agent, waypoint) - agent.velocity) * (1.0 / params.relaxation_time)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Direction pushing `a` away from `b` when their centers coincide. The pair
/// hash fixes an angle; the two agents get opposite directions.
pub fn tie_break_direction(a: AgentId, b: AgentId) -> Vec2 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let h = splitmix64(((lo.0 as u64) << 32) | hi.0 as u64);
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 * PI;
    let dir = Vec2::from_angle(angle);
    if a == lo {
        dir
    } else {
        -dir
    }
}

/// Repulsion exerted on `agent` by `other`: `A·exp((r_i + r_j − d)/B)`
/// along the unit vector from `other` to `agent`.
pub fn pair_repulsion(agent: &AgentState, other: &AgentState, params: &SocialForceParams) -> Vec2 {
    let offset = agent.position() - other.position();
    let d = offset.norm();
    let dir = if d > 0.0 {
        offset * (1.0 / d)
    } else {
        tie_break_direction(agent.id, other.id)
    };
    let magnitude = params.repulsion_strength * libm::exp((agent.radius + other.radius - d) / params.repulsion_range);
    dir * magnitude
}

/// Repulsion from the nearest occupied cell surface.
pub fn obstacle_term(agent: &AgentState, grid: &OccupancyGrid, params: &SocialForceParams) -> Vec2 {
    let p = agent.position();
    let Some((point, d)) = grid.nearest_obstacle(p, agent.radius + OBSTACLE_CUTOFF) else {
        return Vec2::ZERO;
    };
    let Some(dir) = (p - point).normalized() else {
        return Vec2::ZERO;
    };
    dir * (params.obstacle_strength * libm::exp((agent.radius - d) / params.obstacle_range))
}

/// Total force on `agent`. The goal and obstacle terms are counted once;
/// neighbor terms are accumulated in the order given.
pub fn social_force(
    agent: &AgentState,
    neighbors: &[AgentState],
    grid: &OccupancyGrid,
    params: &SocialForceParams,
    waypoint: &Pose2D,
) -> Vec2 {
    debug_assert!(neighbors.iter().all(|n| n.id != agent.id), "agent listed as its own neighbor");
    let mut force = goal_term(agent, waypoint, params) + obstacle_term(agent, grid, params);
    for other in neighbors {
        force += pair_repulsion(agent, other, params);
    }
    force
}
