//! Server-authoritative fixed-step world.
//!
//! NPCs follow a global waypoint route and are driven between waypoints by
//! the social force model (semi-implicit Euler). The avatar moves by key
//! state, the robot by differential-drive commands. Every step ends with
//! disc collision resolution.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentId, AgentKind, AgentState, SpeedLimits, MAX_RADIUS, MIN_RADIUS};
use crate::avatar::{apply_avatar_command, move_disc, AvatarCommand};
use crate::collision::{resolve_collisions, CollisionEvent, ContactTracker};
use crate::geometry::{Pose2D, Vec2};
use crate::grid::OccupancyGrid;
use crate::nav::local::integrate;
use crate::nav::RobotCommand;
use crate::social_force::{social_force, SocialForceParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// seconds per tick
    pub dt: f64,
    /// avatar speed while a movement key is held, m/s
    pub walk_speed: f64,
    pub speed_limits: SpeedLimits,
    pub social_force: SocialForceParams,
    /// NPC waypoint acceptance radius, meters
    pub waypoint_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            walk_speed: 1.4,
            speed_limits: SpeedLimits::default(),
            social_force: SocialForceParams::default(),
            waypoint_radius: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("world needs exactly one avatar, found {0}")]
    AvatarCount(usize),
    #[error("world allows at most one robot, found {0}")]
    RobotCount(usize),
    #[error("agent id {0} is used twice")]
    DuplicateId(AgentId),
    #[error("agent {id} radius {radius} outside [0.2, 0.6]")]
    Radius { id: AgentId, radius: f64 },
    #[error("agent {0} has a non-finite pose")]
    NonFinite(AgentId),
    #[error("no NPC with id {0}")]
    NotAnNpc(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    CollisionStart(CollisionEvent),
    WaypointReached { agent: AgentId, index: usize },
    GoalReached { agent: AgentId },
}

/// Waypoint route an NPC walks back and forth along.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcRoute {
    pub waypoints: Vec<Pose2D>,
    pub next: usize,
    pub forward: bool,
}

impl NpcRoute {
    pub fn new(waypoints: Vec<Pose2D>) -> Self {
        let next = if waypoints.len() > 1 { 1 } else { 0 };
        Self {
            waypoints,
            next,
            forward: true,
        }
    }

    pub fn target(&self) -> Option<&Pose2D> {
        self.waypoints.get(self.next)
    }

    fn last_index(&self) -> usize {
        if self.forward {
            self.waypoints.len() - 1
        } else {
            0
        }
    }

    /// Moves to the next waypoint; at either end the route reverses.
    /// Returns true when an end was reached.
    fn advance(&mut self) -> bool {
        if self.waypoints.len() < 2 {
            return false;
        }
        let at_end = self.next == self.last_index();
        if at_end {
            self.forward = !self.forward;
        }
        self.next = if self.forward { self.next + 1 } else { self.next - 1 };
        at_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    tick: u64,
    config: WorldConfig,
    agents: Vec<AgentState>,
    grid: Arc<OccupancyGrid>,
    contacts: ContactTracker,
    routes: BTreeMap<AgentId, NpcRoute>,
    avatar_intent: Vec2,
}

impl WorldState {
    pub fn new(grid: Arc<OccupancyGrid>, config: WorldConfig, mut agents: Vec<AgentState>) -> Result<Self, WorldError> {
        agents.sort_by_key(|a| a.id);
        for w in agents.windows(2) {
            if w[0].id == w[1].id {
                return Err(WorldError::DuplicateId(w[0].id));
            }
        }
        let avatars = agents.iter().filter(|a| a.kind == AgentKind::Avatar).count();
        if avatars != 1 {
            return Err(WorldError::AvatarCount(avatars));
        }
        let robots = agents.iter().filter(|a| a.kind == AgentKind::Robot).count();
        if robots > 1 {
            return Err(WorldError::RobotCount(robots));
        }
        for a in &agents {
            if !(MIN_RADIUS..=MAX_RADIUS).contains(&a.radius) {
                return Err(WorldError::Radius { id: a.id, radius: a.radius });
            }
            if !a.pose.is_finite() || !a.velocity.is_finite() {
                return Err(WorldError::NonFinite(a.id));
            }
        }
        Ok(Self {
            tick: 0,
            config,
            agents,
            grid,
            contacts: ContactTracker::default(),
            routes: BTreeMap::new(),
            avatar_intent: Vec2::ZERO,
        })
    }

    pub fn set_route(&mut self, npc: AgentId, waypoints: Vec<Pose2D>) -> Result<(), WorldError> {
        let agent = self
            .agents
            .iter_mut()
            .find(|a| a.id == npc && a.kind == AgentKind::Npc)
            .ok_or(WorldError::NotAnNpc(npc))?;
        if let Some(last) = waypoints.last() {
            agent.goal = *last;
        }
        self.routes.insert(npc, NpcRoute::new(waypoints));
        Ok(())
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// `tick · dt`, computed from the tick count so it never drifts.
    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<OccupancyGrid> {
        Arc::clone(&self.grid)
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn avatar(&self) -> &AgentState {
        self.agents
            .iter()
            .find(|a| a.kind == AgentKind::Avatar)
            .expect("world invariant: one avatar")
    }

    pub fn robot(&self) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.kind == AgentKind::Robot)
    }

    pub fn npcs(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.iter().filter(|a| a.kind == AgentKind::Npc)
    }

    pub fn route(&self, npc: AgentId) -> Option<&NpcRoute> {
        self.routes.get(&npc)
    }

    pub fn contacts(&self) -> &ContactTracker {
        &self.contacts
    }

    /// Advances one fixed step.
    pub fn step(&mut self, avatar_cmd: &AvatarCommand, robot_cmd: RobotCommand) -> Vec<WorldEvent> {
        let dt = self.config.dt;
        let snapshot = self.agents.clone();
        let mut events = Vec::new();
        self.avatar_intent = avatar_cmd.direction();

        for i in 0..self.agents.len() {
            let agent = snapshot[i];
            let others: Vec<AgentState> = snapshot.iter().filter(|o| o.id != agent.id).copied().collect();
            let next = match agent.kind {
                AgentKind::Avatar => {
                    apply_avatar_command(&agent, avatar_cmd, dt, self.config.walk_speed, &self.grid, &others)
                }
                AgentKind::Npc => self.step_npc(&agent, &others, &mut events),
                AgentKind::Robot => self.step_robot(&agent, robot_cmd),
            };
            self.agents[i] = next;
        }

        for c in resolve_collisions(&mut self.agents, &self.grid, &mut self.contacts, self.avatar_intent) {
            events.push(WorldEvent::CollisionStart(c));
        }
        self.tick += 1;
        events
    }

    fn step_npc(&mut self, npc: &AgentState, others: &[AgentState], events: &mut Vec<WorldEvent>) -> AgentState {
        let dt = self.config.dt;
        let waypoint = self.routes.get(&npc.id).and_then(|r| r.target().copied()).unwrap_or(npc.goal);
        let force = social_force(npc, others, &self.grid, &self.config.social_force, &waypoint);
        let velocity = (npc.velocity + force * dt).clamp_norm(self.config.speed_limits.max_speed(AgentKind::Npc));
        let step = velocity * dt;
        let moved = move_disc(&self.grid, &[], npc, step);
        let mut next = *npc;
        let pos = npc.position() + moved;
        next.velocity = if moved == step { velocity } else { moved * (1.0 / dt) };
        let theta = if next.velocity.norm() > 1e-6 {
            next.velocity.angle()
        } else {
            npc.pose.theta
        };
        next.pose = Pose2D::at(pos, theta);

        if let Some(route) = self.routes.get_mut(&npc.id) {
            if let Some(target) = route.target().filter(|_| route.waypoints.len() > 1) {
                if target.position().distance(pos) <= self.config.waypoint_radius {
                    let index = route.next;
                    events.push(WorldEvent::WaypointReached { agent: npc.id, index });
                    if route.advance() {
                        events.push(WorldEvent::GoalReached { agent: npc.id });
                    }
                    if let Some(end) = route.waypoints.get(route.last_index()) {
                        next.goal = *end;
                    }
                }
            }
        }
        next
    }

    fn step_robot(&self, robot: &AgentState, cmd: RobotCommand) -> AgentState {
        let dt = self.config.dt;
        let v_max = self.config.speed_limits.max_speed(AgentKind::Robot);
        let cmd = RobotCommand::new(cmd.linear.clamp(-v_max, v_max), cmd.angular);
        let target = integrate(robot.pose, cmd, dt);
        let step = target.position() - robot.position();
        let moved = move_disc(&self.grid, &[], robot, step);
        let mut next = *robot;
        next.pose = Pose2D::at(robot.position() + moved, target.theta);
        next.velocity = if moved == step {
            robot.pose.heading() * cmd.linear
        } else {
            moved * (1.0 / dt)
        };
        next
    }
}

/// Functional form of [`WorldState::step`]. `dt` must equal the configured
/// fixed timestep.
pub fn step_world(
    world: &WorldState,
    dt: f64,
    avatar_cmd: &AvatarCommand,
    robot_cmd: RobotCommand,
) -> (WorldState, Vec<WorldEvent>) {
    assert_eq!(dt, world.config.dt, "step_world called with a non-configured timestep");
    let mut next = world.clone();
    let events = next.step(avatar_cmd, robot_cmd);
    (next, events)
}
