//! The participant's three-phase task script.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;
use crate::world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    FindRobot,
    FollowRobot,
    ReachLandmark,
    Done,
    /// Reserved: stand in the robot's way. Never entered.
    BlockPath,
    /// Reserved: walk alongside the robot. Never entered.
    WalkAlongside,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::FindRobot => "find_robot",
            Phase::FollowRobot => "follow_robot",
            Phase::ReachLandmark => "reach_landmark",
            Phase::Done => "done",
            Phase::BlockPath => "block_path",
            Phase::WalkAlongside => "walk_alongside",
        }
    }

    /// Successor in the scripted order.
    pub fn next(self) -> Phase {
        match self {
            Phase::FindRobot => Phase::FollowRobot,
            Phase::FollowRobot => Phase::ReachLandmark,
            Phase::ReachLandmark | Phase::Done => Phase::Done,
            reserved => reserved,
        }
    }

    /// Instruction shown to the participant.
    pub fn instruction(self) -> &'static str {
        match self {
            Phase::FindRobot => "Find the robot.",
            Phase::FollowRobot => "Follow the robot and watch how it moves.",
            Phase::ReachLandmark => "Walk to the marked landmark.",
            Phase::Done => "All tasks complete.",
            Phase::BlockPath | Phase::WalkAlongside => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    /// meters, with line of sight
    pub find_radius: f64,
    pub follow_radius: f64,
    /// seconds of accumulated following
    pub follow_duration: f64,
    pub goal_radius: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            find_radius: 5.0,
            follow_radius: 3.0,
            follow_duration: 30.0,
            goal_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    /// the phase that just finished
    pub completed: Phase,
    pub next: Phase,
    /// simulated seconds
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub phase: Phase,
    pub follow_accum: f64,
    pub found_at: Option<f64>,
    pub followed_at: Option<f64>,
    pub landmark_at: Option<f64>,
}

impl Default for TaskState {
    fn default() -> Self {
        Self {
            phase: Phase::FindRobot,
            follow_accum: 0.0,
            found_at: None,
            followed_at: None,
            landmark_at: None,
        }
    }
}

impl TaskState {
    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn finish(&mut self, at: f64) -> TaskEvent {
        let completed = self.phase;
        match completed {
            Phase::FindRobot => self.found_at = Some(at),
            Phase::FollowRobot => self.followed_at = Some(at),
            Phase::ReachLandmark => self.landmark_at = Some(at),
            _ => {}
        }
        self.phase = completed.next();
        TaskEvent {
            completed,
            next: self.phase,
            at,
        }
    }
}

/// Checks the active phase against the world after a step. At most one
/// phase completes per call.
pub fn update_tasks(
    state: &mut TaskState,
    world: &WorldState,
    dt: f64,
    landmark: &Pose2D,
    params: &TaskParams,
) -> Vec<TaskEvent> {
    let mut events = Vec::new();
    let avatar = world.avatar().position();
    let now = world.sim_time();
    match state.phase {
        Phase::FindRobot => {
            if let Some(robot) = world.robot() {
                let d = avatar.distance(robot.position());
                if d <= params.find_radius && world.grid().line_of_sight(avatar, robot.position()) {
                    events.push(state.finish(now));
                }
            }
        }
        Phase::FollowRobot => {
            if let Some(robot) = world.robot() {
                if avatar.distance(robot.position()) <= params.follow_radius {
                    state.follow_accum += dt;
                }
                if state.follow_accum >= params.follow_duration - 1e-9 {
                    state.follow_accum = params.follow_duration;
                    events.push(state.finish(now));
                }
            }
        }
        Phase::ReachLandmark => {
            if avatar.distance(landmark.position()) <= params.goal_radius {
                events.push(state.finish(now));
            }
        }
        Phase::Done | Phase::BlockPath | Phase::WalkAlongside => {}
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentKind, AgentState};
    use crate::grid::{Cell, CellIndex, OccupancyGrid};
    use crate::world::WorldConfig;
    use alloc::sync::Arc;
    use alloc::vec;

    fn world(avatar: (f64, f64), robot: (f64, f64), grid: OccupancyGrid) -> WorldState {
        let a = AgentState::new(0, AgentKind::Avatar, Pose2D::new(avatar.0, avatar.1, 0.0), 0.3);
        let r = AgentState::new(1, AgentKind::Robot, Pose2D::new(robot.0, robot.1, 0.0), 0.25);
        WorldState::new(Arc::new(grid), WorldConfig::default(), vec![a, r]).unwrap()
    }

    fn room() -> OccupancyGrid {
        OccupancyGrid::closed_room(200, 100, 0.1, Pose2D::default()).unwrap()
    }

    #[test]
    fn find_within_radius_with_sight() {
        let w = world((2.0, 5.0), (6.0, 5.0), room());
        let mut s = TaskState::default();
        let events = update_tasks(&mut s, &w, 0.05, &Pose2D::new(18.0, 5.0, 0.0), &TaskParams::default());
        assert_eq!(s.phase, Phase::FollowRobot);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].completed, Phase::FindRobot);
    }

    #[test]
    fn occluded_robot_is_not_found() {
        let mut g = room();
        for r in 0..100 {
            g.set(CellIndex::new(40, r), Cell::Occupied);
        }
        let w = world((2.0, 5.0), (6.0, 5.0), g);
        let mut s = TaskState::default();
        update_tasks(&mut s, &w, 0.05, &Pose2D::new(18.0, 5.0, 0.0), &TaskParams::default());
        assert_eq!(s.phase, Phase::FindRobot);
    }

    #[test]
    fn follow_completes_after_600_ticks() {
        let w = world((2.0, 5.0), (4.0, 5.0), room());
        let mut s = TaskState {
            phase: Phase::FollowRobot,
            ..Default::default()
        };
        let landmark = Pose2D::new(18.0, 5.0, 0.0);
        for _ in 0..599 {
            assert!(update_tasks(&mut s, &w, 0.05, &landmark, &TaskParams::default()).is_empty());
        }
        let events = update_tasks(&mut s, &w, 0.05, &landmark, &TaskParams::default());
        assert_eq!(events.len(), 1);
        assert_eq!(s.follow_accum, 30.0);
        assert_eq!(s.phase, Phase::ReachLandmark);
    }

    #[test]
    fn excursions_pause_but_do_not_reset() {
        let near = world((2.0, 5.0), (4.0, 5.0), room());
        let far = world((2.0, 5.0), (9.0, 5.0), room());
        let mut s = TaskState {
            phase: Phase::FollowRobot,
            ..Default::default()
        };
        let landmark = Pose2D::new(18.0, 5.0, 0.0);
        for _ in 0..100 {
            update_tasks(&mut s, &near, 0.05, &landmark, &TaskParams::default());
        }
        for _ in 0..100 {
            update_tasks(&mut s, &far, 0.05, &landmark, &TaskParams::default());
        }
        assert!((s.follow_accum - 5.0).abs() < 1e-9);
    }

    #[test]
    fn landmark_during_find_does_not_skip() {
        let w = world((18.0, 5.0), (2.0, 5.0), room());
        let mut s = TaskState::default();
        let events = update_tasks(&mut s, &w, 0.05, &Pose2D::new(18.0, 5.0, 0.0), &TaskParams::default());
        assert!(events.is_empty());
        assert_eq!(s.phase, Phase::FindRobot);
    }

    #[test]
    fn landmark_completes_script() {
        let w = world((17.5, 5.0), (2.0, 5.0), room());
        let mut s = TaskState {
            phase: Phase::ReachLandmark,
            ..Default::default()
        };
        update_tasks(&mut s, &w, 0.05, &Pose2D::new(18.0, 5.0, 0.0), &TaskParams::default());
        assert!(s.is_done());
        assert!(update_tasks(&mut s, &w, 0.05, &Pose2D::new(18.0, 5.0, 0.0), &TaskParams::default()).is_empty());
    }
}
