//! Disc separation and de-bounced contact episodes.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentId, AgentKind, AgentState};
use crate::geometry::Vec2;
use crate::grid::OccupancyGrid;
use crate::social_force::tie_break_direction;

/// Centers within `radius sum + CONTACT_EPSILON` are in contact. Blocked
/// avatar motion stops exactly at the radius sum, so touching counts.
pub const CONTACT_EPSILON: f64 = 1e-3;
/// An episode ends once the pair separates beyond `radius sum + margin`.
pub const HYSTERESIS_MARGIN: f64 = 0.1;
/// Allowed residual overlap after resolution.
pub const PENETRATION_TOLERANCE: f64 = 1e-6;

const SEPARATION_PASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    AvatarNpc,
    AvatarRobot,
    NpcNpc,
    NpcRobot,
}

impl PairKind {
    pub fn of(a: AgentKind, b: AgentKind) -> Option<PairKind> {
        use AgentKind::*;
        match (a.min(b), a.max(b)) {
            (Avatar, Npc) => Some(PairKind::AvatarNpc),
            (Avatar, Robot) => Some(PairKind::AvatarRobot),
            (Npc, Npc) => Some(PairKind::NpcNpc),
            (Npc, Robot) => Some(PairKind::NpcRobot),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::AvatarNpc => "avatar_npc",
            PairKind::AvatarRobot => "avatar_robot",
            PairKind::NpcNpc => "npc_npc",
            PairKind::NpcRobot => "npc_robot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Collision,
    /// The avatar walked into the robot.
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub a: AgentId,
    pub b: AgentId,
    pub pair: PairKind,
    pub kind: ContactKind,
}

/// Pairs currently in a contact episode, keyed `(lower id, higher id)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactTracker {
    active: BTreeSet<(AgentId, AgentId)>,
}

impl ContactTracker {
    pub fn is_active(&self, a: AgentId, b: AgentId) -> bool {
        self.active.contains(&(a.min(b), a.max(b)))
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

fn try_shift(grid: &OccupancyGrid, agent: &AgentState, shift: Vec2) -> bool {
    !grid.disc_hits_obstacle(agent.position() + shift, agent.radius)
}

fn separate(grid: &OccupancyGrid, agents: &mut [AgentState]) {
    for _ in 0..SEPARATION_PASSES {
        let mut moved = false;
        for i in 0..agents.len() {
            for j in (i + 1)..agents.len() {
                let (a, b) = (agents[i], agents[j]);
                let offset = a.position() - b.position();
                let d = offset.norm();
                let penetration = a.radius + b.radius - d;
                if penetration <= PENETRATION_TOLERANCE {
                    continue;
                }
                let dir = if d > 0.0 {
                    offset * (1.0 / d)
                } else {
                    tie_break_direction(a.id, b.id)
                };
                let half = dir * (0.5 * penetration);
                let (a_ok, b_ok) = (try_shift(grid, &a, half), try_shift(grid, &b, -half));
                let (da, db) = match (a_ok, b_ok) {
                    (true, true) => (half, -half),
                    (true, false) if try_shift(grid, &a, half * 2.0) => (half * 2.0, Vec2::ZERO),
                    (false, true) if try_shift(grid, &b, -half * 2.0) => (Vec2::ZERO, -half * 2.0),
                    (true, false) => (half, Vec2::ZERO),
                    (false, true) => (Vec2::ZERO, -half),
                    (false, false) => continue,
                };
                let pa = agents[i].position() + da;
                let pb = agents[j].position() + db;
                agents[i].pose.x = pa.x;
                agents[i].pose.y = pa.y;
                agents[j].pose.x = pb.x;
                agents[j].pose.y = pb.y;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Separates overlapping discs (each member of a pair moves half the
/// penetration along the center line) and reports contact episodes that
/// started this step. `avatar_intent` is the avatar's commanded direction,
/// used to tag avatar→robot contacts as pushes.
pub fn resolve_collisions(
    agents: &mut [AgentState],
    grid: &OccupancyGrid,
    tracker: &mut ContactTracker,
    avatar_intent: Vec2,
) -> Vec<CollisionEvent> {
    separate(grid, agents);
    let mut events = Vec::new();
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            let (a, b) = (&agents[i], &agents[j]);
            let Some(pair) = PairKind::of(a.kind, b.kind) else {
                continue;
            };
            let key = (a.id.min(b.id), a.id.max(b.id));
            let d = a.position().distance(b.position());
            let reach = a.radius + b.radius;
            if d <= reach + CONTACT_EPSILON {
                if tracker.active.insert(key) {
                    let kind = match pair {
                        PairKind::AvatarRobot => {
                            let (avatar, robot) = if a.kind == AgentKind::Avatar { (a, b) } else { (b, a) };
                            if avatar_intent.dot(robot.position() - avatar.position()) > 0.0 {
                                ContactKind::Push
                            } else {
                                ContactKind::Collision
                            }
                        }
                        _ => ContactKind::Collision,
                    };
                    events.push(CollisionEvent {
                        a: key.0,
                        b: key.1,
                        pair,
                        kind,
                    });
                }
            } else if d > reach + HYSTERESIS_MARGIN {
                tracker.active.remove(&key);
            }
        }
    }
    events
}
