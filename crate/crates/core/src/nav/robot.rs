//! Per-tick navigation for the robot: social costmap refresh, scheduled
//! re-planning and local control. Localization is the ground-truth pose.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::costmap::{Costmap, InflationParams, SocialLayerParams};
use super::local::{local_control, LocalParams, RobotCommand};
use super::planner::{PlanError, PlanPath, Planner};
use crate::agent::AgentState;
use crate::geometry::Pose2D;
use crate::grid::OccupancyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavParams {
    pub inflation: InflationParams,
    pub social: SocialLayerParams,
    pub local: LocalParams,
    /// seconds between scheduled re-plans
    pub replan_period: f64,
    /// meters
    pub goal_tolerance: f64,
}

impl Default for NavParams {
    fn default() -> Self {
        Self {
            inflation: InflationParams::default(),
            social: SocialLayerParams::default(),
            local: LocalParams::default(),
            replan_period: 2.0,
            goal_tolerance: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavStatus {
    Navigating,
    GoalReached,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "nav", rename_all = "snake_case")]
pub enum NavEvent {
    Replanned { length: f64 },
    GoalReached,
    NavFailed { explored: usize },
}

#[derive(Debug, Clone)]
pub struct NavState {
    pub goal: Pose2D,
    pub params: NavParams,
    pub path: Option<PlanPath>,
    pub last_plan_time: Option<f64>,
    pub status: NavStatus,
    costmap: Costmap,
    planner: Planner,
}

impl NavState {
    /// Caches the static and inflation layers for `grid`. The inflation
    /// footprint is padded by the cell size (see [`InflationParams::padded_for`]).
    pub fn new(grid: &OccupancyGrid, goal: Pose2D, params: NavParams) -> Self {
        Self {
            goal,
            params,
            path: None,
            last_plan_time: None,
            status: NavStatus::Navigating,
            costmap: Costmap::from_grid(grid, &params.inflation.padded_for(grid.resolution())),
            planner: Planner::new(),
        }
    }

    pub fn costmap(&self) -> &Costmap {
        &self.costmap
    }

    fn path_blocked(&self) -> bool {
        self.path
            .as_ref()
            .is_some_and(|p| p.cells.iter().skip(1).any(|c| self.costmap.is_lethal(*c)))
    }
}

/// One control step. `agents` is the full world snapshot; the robot itself
/// is excluded from the social layer by kind.
pub fn robot_tick(nav: &mut NavState, robot: &AgentState, agents: &[AgentState], sim_time: f64) -> (RobotCommand, Vec<NavEvent>) {
    let mut events = Vec::new();
    if nav.status == NavStatus::GoalReached {
        return (RobotCommand::STOP, events);
    }
    if robot.pose.distance(&nav.goal) <= nav.params.goal_tolerance {
        nav.status = NavStatus::GoalReached;
        nav.path = None;
        events.push(NavEvent::GoalReached);
        return (RobotCommand::STOP, events);
    }

    nav.costmap.update_social(agents, &nav.params.social);

    let due = nav
        .last_plan_time
        .is_none_or(|t| sim_time - t >= nav.params.replan_period - 1e-9);
    if nav.path.is_none() || due || nav.path_blocked() {
        nav.last_plan_time = Some(sim_time);
        match nav.planner.plan(&nav.costmap, robot.pose, nav.goal) {
            Ok(path) => {
                events.push(NavEvent::Replanned {
                    length: path.total_length,
                });
                nav.path = Some(path);
                nav.status = NavStatus::Navigating;
            }
            Err(err) => {
                let explored = match err {
                    PlanError::Unreachable { explored } => explored,
                    PlanError::OutOfBounds => 0,
                };
                nav.path = None;
                if nav.status != NavStatus::Failed {
                    events.push(NavEvent::NavFailed { explored });
                }
                nav.status = NavStatus::Failed;
            }
        }
    }

    let cmd = match &nav.path {
        Some(path) => local_control(robot.pose, path, &nav.costmap, &nav.params.local),
        None => RobotCommand::STOP,
    };
    (nav.params.local.clamp(cmd), events)
}
