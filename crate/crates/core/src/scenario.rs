//! Trial scenarios: validation, world construction and trial ordering.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentKind, AgentState};
use crate::geometry::Pose2D;
use crate::grid::OccupancyGrid;
use crate::nav::costmap::{Costmap, InflationParams};
use crate::nav::planner::{prune_path, Planner};
use crate::nav::{NavParams, NavState};
use crate::social_force::SocialForceParams;
use crate::world::{WorldConfig, WorldError, WorldState};

pub const AVATAR_RADIUS: f64 = 0.3;
pub const NPC_RADIUS: f64 = 0.3;
pub const ROBOT_RADIUS: f64 = 0.25;
pub const NPC_DESIRED_SPEED: f64 = 1.4;

pub const AVATAR_ID: u32 = 0;
pub const ROBOT_ID: u32 = 1;
pub const FIRST_NPC_ID: u32 = 2;

pub const TRIALS_PER_ENVIRONMENT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Warehouse,
    Lab,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Warehouse => "warehouse",
            Environment::Lab => "lab",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub start: Pose2D,
    pub goal: Pose2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub pose: Pose2D,
    /// Visual marker the client renders.
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub environment: Environment,
    /// Reference to the map this scenario is played on.
    pub map: String,
    /// seconds
    pub time_limit: f64,
    pub avatar: Endpoints,
    pub robot: Endpoints,
    pub landmark: Landmark,
    pub npcs: Vec<Endpoints>,
    pub social_force: SocialForceParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfBounds { what: String },
    InObstacle { what: String },
    InitialOverlap { a: String, b: String },
    Unreachable { what: String },
    NotOpposite,
    BadTimeLimit(f64),
    BadParameters(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds { what } => write!(f, "{what} outside the map"),
            Violation::InObstacle { what } => write!(f, "{what} inside an obstacle"),
            Violation::InitialOverlap { a, b } => write!(f, "initial overlap between {a} and {b}"),
            Violation::Unreachable { what } => write!(f, "unreachable {what}"),
            Violation::NotOpposite => f.write_str("avatar and robot routes are not opposite"),
            Violation::BadTimeLimit(t) => write!(f, "time limit must be positive, got {t}"),
            Violation::BadParameters(msg) => write!(f, "bad parameters: {msg}"),
        }
    }
}

struct Probe {
    what: String,
    pose: Pose2D,
    radius: f64,
}

fn check_pose(grid: &OccupancyGrid, probe: &Probe, out: &mut Vec<Violation>) -> bool {
    if !probe.pose.is_finite() || !grid.contains(probe.pose.position()) {
        out.push(Violation::OutOfBounds {
            what: probe.what.clone(),
        });
        return false;
    }
    if grid.disc_hits_obstacle(probe.pose.position(), probe.radius) {
        out.push(Violation::InObstacle {
            what: probe.what.clone(),
        });
    }
    true
}

fn reachable(planner: &mut Planner, map: &Costmap, from: Pose2D, to: Pose2D) -> bool {
    planner.plan(map, from, to).is_ok()
}

/// Checks every scenario invariant against its map, including planner
/// reachability of each goal. Never stops at the first problem.
pub fn validate_scenario(scenario: &Scenario, grid: &OccupancyGrid, nav: &NavParams) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if !(scenario.time_limit > 0.0 && scenario.time_limit.is_finite()) {
        out.push(Violation::BadTimeLimit(scenario.time_limit));
    }
    if let Err(e) = scenario.social_force.validate() {
        out.push(Violation::BadParameters(e.to_string()));
    }

    let mut starts = vec![
        Probe {
            what: "avatar start".into(),
            pose: scenario.avatar.start,
            radius: AVATAR_RADIUS,
        },
        Probe {
            what: "robot start".into(),
            pose: scenario.robot.start,
            radius: ROBOT_RADIUS,
        },
    ];
    for (i, npc) in scenario.npcs.iter().enumerate() {
        starts.push(Probe {
            what: format!("npc {i} start"),
            pose: npc.start,
            radius: NPC_RADIUS,
        });
    }
    let mut goals = vec![
        Probe {
            what: "avatar goal".into(),
            pose: scenario.avatar.goal,
            radius: AVATAR_RADIUS,
        },
        Probe {
            what: "robot goal".into(),
            pose: scenario.robot.goal,
            radius: ROBOT_RADIUS,
        },
        Probe {
            what: "landmark".into(),
            pose: scenario.landmark.pose,
            radius: 0.0,
        },
    ];
    for (i, npc) in scenario.npcs.iter().enumerate() {
        goals.push(Probe {
            what: format!("npc {i} goal"),
            pose: npc.goal,
            radius: NPC_RADIUS,
        });
    }
    let starts_ok: Vec<bool> = starts.iter().map(|p| check_pose(grid, p, &mut out)).collect();
    let goals_ok: Vec<bool> = goals.iter().map(|p| check_pose(grid, p, &mut out)).collect();

    for i in 0..starts.len() {
        for j in (i + 1)..starts.len() {
            let (a, b) = (&starts[i], &starts[j]);
            if a.pose.distance(&b.pose) < a.radius + b.radius {
                out.push(Violation::InitialOverlap {
                    a: a.what.clone(),
                    b: b.what.clone(),
                });
            }
        }
    }

    let res = grid.resolution();
    let robot_map = Costmap::from_grid(grid, &nav.inflation.padded_for(res));
    let human_map = Costmap::from_grid(grid, &InflationParams::for_disc(AVATAR_RADIUS, res));
    let npc_map = Costmap::from_grid(grid, &InflationParams::for_disc(NPC_RADIUS, res));
    let mut planner = Planner::new();
    let mut need = |ok: bool, map: &Costmap, from: Pose2D, to: Pose2D, what: &str, out: &mut Vec<Violation>| {
        if ok && !reachable(&mut planner, map, from, to) {
            out.push(Violation::Unreachable { what: what.into() });
        }
    };
    need(starts_ok[1] && goals_ok[1], &robot_map, scenario.robot.start, scenario.robot.goal, "robot goal", &mut out);
    need(starts_ok[0] && goals_ok[0], &human_map, scenario.avatar.start, scenario.avatar.goal, "avatar goal", &mut out);
    need(starts_ok[0] && goals_ok[2], &human_map, scenario.avatar.start, scenario.landmark.pose, "landmark", &mut out);
    for (i, npc) in scenario.npcs.iter().enumerate() {
        let what = format!("npc {i} goal");
        need(starts_ok[2 + i] && goals_ok[3 + i], &npc_map, npc.start, npc.goal, &what, &mut out);
    }

    let avatar_dir = scenario.avatar.goal.position() - scenario.avatar.start.position();
    let robot_dir = scenario.robot.goal.position() - scenario.robot.start.position();
    if avatar_dir.dot(robot_dir) >= 0.0 {
        out.push(Violation::NotOpposite);
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Instantiates the scenario: avatar, robot and NPCs with their walking
/// routes, plus the robot's navigation state.
pub fn build_world(
    scenario: &Scenario,
    grid: Arc<OccupancyGrid>,
    mut config: WorldConfig,
    nav: NavParams,
) -> Result<(WorldState, NavState), BuildError> {
    config.social_force = scenario.social_force;
    let mut agents = Vec::with_capacity(2 + scenario.npcs.len());
    let mut avatar = AgentState::new(AVATAR_ID, AgentKind::Avatar, scenario.avatar.start, AVATAR_RADIUS);
    avatar.goal = scenario.avatar.goal;
    agents.push(avatar);
    let mut robot = AgentState::new(ROBOT_ID, AgentKind::Robot, scenario.robot.start, ROBOT_RADIUS);
    robot.goal = scenario.robot.goal;
    robot.desired_speed = nav.local.v_max;
    agents.push(robot);
    for (i, npc) in scenario.npcs.iter().enumerate() {
        let mut a = AgentState::new(FIRST_NPC_ID + i as u32, AgentKind::Npc, npc.start, NPC_RADIUS);
        a.goal = npc.goal;
        a.desired_speed = NPC_DESIRED_SPEED;
        agents.push(a);
    }
    let mut world = WorldState::new(Arc::clone(&grid), config, agents)?;

    let npc_map = Costmap::from_grid(&grid, &InflationParams::for_disc(NPC_RADIUS, grid.resolution()));
    let mut planner = Planner::new();
    for (i, npc) in scenario.npcs.iter().enumerate() {
        let route = match planner.plan(&npc_map, npc.start, npc.goal) {
            Ok(path) => prune_path(&npc_map, &path),
            Err(_) => vec![npc.start, npc.goal],
        };
        world.set_route(crate::agent::AgentId(FIRST_NPC_ID + i as u32), route)?;
    }
    let nav_state = NavState::new(&grid, scenario.robot.goal, nav);
    Ok((world, nav_state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// 1-based position in the participant's sequence
    pub index: usize,
    pub scenario_id: String,
    pub environment: Environment,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("need at least {needed} distinct {environment} scenarios, have {have}")]
    Insufficient {
        environment: Environment,
        needed: usize,
        have: usize,
    },
}

/// Six trials, three per environment, in a seeded random order. When more
/// than three variants of an environment exist, three are drawn.
pub fn make_trial_sequence(scenarios: &[Scenario], seed: u64) -> Result<Vec<Trial>, TrialError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(2 * TRIALS_PER_ENVIRONMENT);
    for env in [Environment::Warehouse, Environment::Lab] {
        let mut seen = BTreeSet::new();
        let mut pool: Vec<&Scenario> = scenarios
            .iter()
            .filter(|s| s.environment == env && seen.insert(s.id.as_str()))
            .collect();
        if pool.len() < TRIALS_PER_ENVIRONMENT {
            return Err(TrialError::Insufficient {
                environment: env,
                needed: TRIALS_PER_ENVIRONMENT,
                have: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        picked.extend(pool.into_iter().take(TRIALS_PER_ENVIRONMENT));
    }
    picked.shuffle(&mut rng);
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, s)| Trial {
            index: i + 1,
            scenario_id: s.id.clone(),
            environment: s.environment,
        })
        .collect())
}
