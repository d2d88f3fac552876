//! Arc-sampling local controller for a differential-drive base.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::costmap::Costmap;
use super::planner::PlanPath;
use crate::geometry::{normalize_angle, point_segment_distance, Pose2D, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotCommand {
    /// m/s
    pub linear: f64,
    /// rad/s
    pub angular: f64,
}

impl RobotCommand {
    pub const STOP: RobotCommand = RobotCommand {
        linear: 0.0,
        angular: 0.0,
    };

    pub fn new(linear: f64, angular: f64) -> Self {
        Self { linear, angular }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalParams {
    pub v_max: f64,
    pub omega_max: f64,
    pub linear_samples: usize,
    pub angular_samples: usize,
    /// seconds simulated per candidate
    pub horizon: f64,
    pub rollout_step: f64,
    pub w_path: f64,
    pub w_cost: f64,
    pub w_speed: f64,
}

impl Default for LocalParams {
    fn default() -> Self {
        Self {
            v_max: 0.8,
            omega_max: 1.5,
            linear_samples: 7,
            angular_samples: 15,
            horizon: 1.0,
            rollout_step: 0.05,
            w_path: 1.0,
            w_cost: 0.02,
            w_speed: 0.5,
        }
    }
}

impl LocalParams {
    /// Clamps a command into the velocity limits.
    pub fn clamp(&self, cmd: RobotCommand) -> RobotCommand {
        RobotCommand::new(
            cmd.linear.clamp(-self.v_max, self.v_max),
            cmd.angular.clamp(-self.omega_max, self.omega_max),
        )
    }

    /// Candidate commands: linear in `[0, v_max]`, angular in
    /// `[-ω_max, ω_max]`, evenly spaced.
    pub fn lattice(&self) -> Vec<RobotCommand> {
        let spread = |n: usize, lo: f64, hi: f64, i: usize| if n <= 1 { hi } else { lo + (hi - lo) * (i as f64 / (n - 1) as f64) };
        let mut out = Vec::with_capacity(self.linear_samples * self.angular_samples);
        for i in 0..self.linear_samples {
            let v = spread(self.linear_samples, 0.0, self.v_max, i);
            for j in 0..self.angular_samples {
                let w = if self.angular_samples <= 1 {
                    0.0
                } else {
                    spread(self.angular_samples, -self.omega_max, self.omega_max, j)
                };
                out.push(RobotCommand::new(v, w));
            }
        }
        out
    }
}

/// One unicycle integration step: translate along the current heading,
/// then turn.
pub fn integrate(pose: Pose2D, cmd: RobotCommand, dt: f64) -> Pose2D {
    Pose2D::new(
        pose.x + cmd.linear * libm::cos(pose.theta) * dt,
        pose.y + cmd.linear * libm::sin(pose.theta) * dt,
        pose.theta + cmd.angular * dt,
    )
}

/// Poses after each integration step over the horizon.
pub fn rollout(pose: Pose2D, cmd: RobotCommand, horizon: f64, step: f64) -> Vec<Pose2D> {
    let n = libm::round(horizon / step) as usize;
    let mut out = Vec::with_capacity(n);
    let mut p = pose;
    for _ in 0..n {
        p = integrate(p, cmd, step);
        out.push(p);
    }
    out
}

/// Index of the waypoint closest to `p`.
fn nearest_waypoint(path: &PlanPath, p: Vec2) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, w) in path.waypoints.iter().enumerate() {
        let d = w.position().distance(p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Distance from `p` to the polyline through `waypoints`.
pub fn polyline_distance(waypoints: &[Pose2D], p: Vec2) -> f64 {
    match waypoints {
        [] => f64::INFINITY,
        [only] => only.position().distance(p),
        _ => waypoints
            .windows(2)
            .map(|w| point_segment_distance(p, w[0].position(), w[1].position()))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Point about `lookahead` meters further along the remaining path.
pub fn lookahead_point(path: &PlanPath, from: usize, lookahead: f64) -> Vec2 {
    let pts = &path.waypoints[from..];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += w[0].position().distance(w[1].position());
        if acc >= lookahead {
            return w[1].position();
        }
    }
    pts.last().map_or(Vec2::ZERO, |p| p.position())
}

/// Scores every lattice command by a forward rollout and returns the best
/// admissible one. A rollout that visits a lethal cell is rejected. If
/// nothing is admissible the robot stops and turns toward the path.
pub fn local_control(pose: Pose2D, path: &PlanPath, costmap: &Costmap, params: &LocalParams) -> RobotCommand {
    assert!(!path.is_empty(), "local control needs a non-empty path");
    let from = nearest_waypoint(path, pose.position());
    let remaining = &path.waypoints[from..];
    let mut best: Option<(f64, RobotCommand)> = None;
    for cmd in params.lattice() {
        let Some(score) = score_command(pose, cmd, remaining, costmap, params) else {
            continue;
        };
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, cmd));
        }
    }
    match best {
        Some((_, cmd)) => cmd,
        None => {
            let target = lookahead_point(path, from, 0.5);
            let error = normalize_angle((target - pose.position()).angle() - pose.theta);
            params.clamp(RobotCommand::new(0.0, 2.0 * error))
        }
    }
}

/// Weighted score of one candidate, `None` when its rollout passes through
/// a lethal cell anywhere along the chords between integration steps.
pub fn score_command(
    pose: Pose2D,
    cmd: RobotCommand,
    remaining: &[Pose2D],
    costmap: &Costmap,
    params: &LocalParams,
) -> Option<f64> {
    let traj = rollout(pose, cmd, params.horizon, params.rollout_step);
    let mut max_cost: f64 = 0.0;
    let mut prev = pose.position();
    for p in &traj {
        if costmap.segment_hits_lethal(prev, p.position()) {
            return None;
        }
        max_cost = max_cost.max(costmap.cost_at(p.position()));
        prev = p.position();
    }
    let end = traj.last().copied().unwrap_or(pose);
    let path_dist = polyline_distance(remaining, end.position());
    Some(params.w_path * path_dist + params.w_cost * max_cost + params.w_speed * (params.v_max - cmd.linear))
}
