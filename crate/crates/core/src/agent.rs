use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2D, Vec2};

pub const MIN_RADIUS: f64 = 0.2;
pub const MAX_RADIUS: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Avatar,
    Npc,
    Robot,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Avatar => "avatar",
            AgentKind::Npc => "npc",
            AgentKind::Robot => "robot",
        }
    }

    /// Avatars and NPCs are the humans the robot has to be social around.
    pub fn is_human(self) -> bool {
        matches!(self, AgentKind::Avatar | AgentKind::Npc)
    }
}

/// Per-kind speed caps in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedLimits {
    pub avatar: f64,
    pub npc: f64,
    pub robot: f64,
}

impl Default for SpeedLimits {
    fn default() -> Self {
        Self {
            avatar: 1.4,
            npc: 1.8,
            robot: 0.8,
        }
    }
}

impl SpeedLimits {
    pub fn max_speed(&self, kind: AgentKind) -> f64 {
        match kind {
            AgentKind::Avatar => self.avatar,
            AgentKind::Npc => self.npc,
            AgentKind::Robot => self.robot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub kind: AgentKind,
    pub pose: Pose2D,
    pub velocity: Vec2,
    pub radius: f64,
    pub goal: Pose2D,
    pub desired_speed: f64,
}

impl AgentState {
    pub fn new(id: u32, kind: AgentKind, pose: Pose2D, radius: f64) -> Self {
        Self {
            id: AgentId(id),
            kind,
            pose,
            velocity: Vec2::ZERO,
            radius,
            goal: pose,
            desired_speed: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Center distance minus both radii, floored at zero.
    pub fn surface_distance(&self, other: &AgentState) -> f64 {
        (self.position().distance(other.position()) - self.radius - other.radius).max(0.0)
    }
}
