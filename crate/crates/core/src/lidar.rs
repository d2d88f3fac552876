use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::agent::AgentState;
use crate::geometry::{Pose2D, Vec2};
use crate::grid::OccupancyGrid;

/// Distance along the ray to the first intersection with a disc, if any.
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    if b > 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    Some(-b - libm::sqrt(disc))
}

/// Simulated planar scan. Beam `k` points at `origin.theta + 2πk/n_beams`
/// and reports the distance to the first occupied cell or agent disc,
/// capped at `max_range`. An origin inside an occupied cell reads all zeros.
pub fn raycast_lidar(
    grid: &OccupancyGrid,
    agents: &[AgentState],
    origin: Pose2D,
    n_beams: usize,
    max_range: f64,
) -> Vec<f64> {
    let start = origin.position();
    if grid.is_occupied_at(start) {
        return vec![0.0; n_beams];
    }
    (0..n_beams)
        .map(|k| {
            let dir = Vec2::from_angle(origin.theta + 2.0 * PI * k as f64 / n_beams as f64);
            let mut range = max_range;
            let exit = grid.traverse(start, dir, max_range, |cell, t| {
                if grid.is_occupied(cell) {
                    range = range.min(t);
                    false
                } else {
                    true
                }
            });
            if let Some(t) = exit {
                range = range.min(t);
            }
            for agent in agents {
                if let Some(t) = ray_circle(start, dir, agent.position(), agent.radius) {
                    range = range.min(t);
                }
            }
            range
        })
        .collect()
}
