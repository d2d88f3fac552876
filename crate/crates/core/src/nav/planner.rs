//! A* over the 8-connected costmap grid.
//!
//! Moving into a cell costs `step length · (1 + cost/128)`; lethal cells
//! are never entered and diagonal moves may not cut a lethal corner.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::costmap::{Costmap, GridGeometry, LETHAL};
use crate::geometry::{Pose2D, Vec2};
use crate::grid::CellIndex;

pub const COST_SCALE: f64 = 128.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("start or goal lies outside the map")]
    OutOfBounds,
    #[error("goal unreachable after exploring {explored} cells")]
    Unreachable { explored: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPath {
    pub waypoints: Vec<Pose2D>,
    pub cells: Vec<CellIndex>,
    /// meters
    pub total_length: f64,
    /// accumulated edge cost
    pub cost: f64,
}

impl PlanPath {
    pub fn goal(&self) -> Option<&Pose2D> {
        self.waypoints.last()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Cost of entering a cell with combined cost `cell_cost` over `step` meters.
pub fn edge_cost(step: f64, cell_cost: f64) -> f64 {
    step * (1.0 + cell_cost / COST_SCALE)
}

/// 8-connected moves as `(dcol, drow)`.
pub const MOVES: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Neighbor reachable from `cell` by `mv`, honoring bounds, lethal cells and
/// corner cutting. Returns the neighbor and the step length in cells.
pub fn neighbor(map: &Costmap, cell: CellIndex, mv: (i64, i64)) -> Option<(CellIndex, f64)> {
    let g = map.geometry();
    let (c, r) = (cell.col as i64 + mv.0, cell.row as i64 + mv.1);
    if c < 0 || r < 0 || c >= g.width as i64 || r >= g.height as i64 {
        return None;
    }
    let next = CellIndex::new(c as usize, r as usize);
    if map.is_lethal(next) {
        return None;
    }
    if mv.0 != 0 && mv.1 != 0 {
        let side_a = CellIndex::new(c as usize, cell.row);
        let side_b = CellIndex::new(cell.col, r as usize);
        if map.is_lethal(side_a) || map.is_lethal(side_b) {
            return None;
        }
        Some((next, SQRT_2))
    } else {
        Some((next, 1.0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Open {
    f: f64,
    g: f64,
    cell: CellIndex,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // max-heap: smaller f first, then smaller (row, col)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.cell.cmp(&self.cell))
            .then_with(|| other.g.total_cmp(&self.g))
    }
}

const NO_PARENT: u32 = u32::MAX;

/// Reusable A* workspace.
#[derive(Debug, Default, Clone)]
pub struct Planner {
    g: Vec<f64>,
    parent: Vec<u32>,
    closed: Vec<bool>,
    touched: Vec<usize>,
    heap: BinaryHeap<Open>,
}

impl Planner {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, n: usize) {
        if self.g.len() != n {
            self.g = vec![f64::INFINITY; n];
            self.parent = vec![NO_PARENT; n];
            self.closed = vec![false; n];
            self.touched.clear();
        } else {
            for &i in &self.touched {
                self.g[i] = f64::INFINITY;
                self.parent[i] = NO_PARENT;
                self.closed[i] = false;
            }
            self.touched.clear();
        }
        self.heap.clear();
    }

    /// Minimum-cost path between the cells containing `start` and `goal`.
    /// The start cell itself may be lethal so a robot pushed into an
    /// inflated band can still plan its way out.
    pub fn plan(&mut self, map: &Costmap, start: Pose2D, goal: Pose2D) -> Result<PlanPath, PlanError> {
        let geometry = *map.geometry();
        let s = geometry.cell_of(start.position()).ok_or(PlanError::OutOfBounds)?;
        let t = geometry.cell_of(goal.position()).ok_or(PlanError::OutOfBounds)?;
        self.plan_cells(map, s, t).map(|(cells, cost)| build_path(&geometry, cells, cost, goal.theta))
    }

    /// Cell-level search; returns the cell sequence and its total cost.
    pub fn plan_cells(&mut self, map: &Costmap, start: CellIndex, goal: CellIndex) -> Result<(Vec<CellIndex>, f64), PlanError> {
        let geometry = *map.geometry();
        if map.is_lethal(goal) {
            return Err(PlanError::Unreachable { explored: 0 });
        }
        self.reset(geometry.len());
        let res = geometry.resolution;
        let heuristic = |c: CellIndex| {
            let dx = c.col.abs_diff(goal.col) as f64;
            let dy = c.row.abs_diff(goal.row) as f64;
            (dx.max(dy) - dx.min(dy) + SQRT_2 * dx.min(dy)) * res
        };
        let si = geometry.index(start);
        self.g[si] = 0.0;
        self.touched.push(si);
        self.heap.push(Open {
            f: heuristic(start),
            g: 0.0,
            cell: start,
        });
        let mut explored = 0usize;
        while let Some(Open { g, cell, .. }) = self.heap.pop() {
            let ci = geometry.index(cell);
            if self.closed[ci] || g > self.g[ci] {
                continue;
            }
            self.closed[ci] = true;
            explored += 1;
            if cell == goal {
                let mut cells = Vec::new();
                let mut cur = ci;
                loop {
                    cells.push(geometry.cell_at(cur));
                    if self.parent[cur] == NO_PARENT {
                        break;
                    }
                    cur = self.parent[cur] as usize;
                }
                cells.reverse();
                return Ok((cells, g));
            }
            for mv in MOVES {
                let Some((next, steps)) = neighbor(map, cell, mv) else {
                    continue;
                };
                let ni = geometry.index(next);
                if self.closed[ni] {
                    continue;
                }
                let ng = g + edge_cost(steps * res, map.cost(next));
                if ng < self.g[ni] {
                    if self.g[ni] == f64::INFINITY {
                        self.touched.push(ni);
                    }
                    self.g[ni] = ng;
                    self.parent[ni] = ci as u32;
                    self.heap.push(Open {
                        f: ng + heuristic(next),
                        g: ng,
                        cell: next,
                    });
                }
            }
        }
        Err(PlanError::Unreachable { explored })
    }
}

fn build_path(geometry: &GridGeometry, cells: Vec<CellIndex>, cost: f64, goal_theta: f64) -> PlanPath {
    let points: Vec<Vec2> = cells.iter().map(|c| geometry.center(*c)).collect();
    let mut waypoints = Vec::with_capacity(points.len());
    let mut total_length = 0.0;
    for (i, p) in points.iter().enumerate() {
        let theta = match points.get(i + 1) {
            Some(next) => {
                total_length += p.distance(*next);
                (*next - *p).angle()
            }
            None => goal_theta,
        };
        waypoints.push(Pose2D::at(*p, theta));
    }
    PlanPath {
        waypoints,
        cells,
        total_length,
        cost,
    }
}

/// One-shot planning with a fresh workspace.
pub fn plan_global(map: &Costmap, start: Pose2D, goal: Pose2D) -> Result<PlanPath, PlanError> {
    Planner::new().plan(map, start, goal)
}

/// True when the straight segment stays on non-lethal cells (sampled at a
/// quarter cell).
pub fn segment_clear(map: &Costmap, a: Vec2, b: Vec2) -> bool {
    let step = map.geometry().resolution * 0.25;
    let n = libm::ceil(a.distance(b) / step) as usize;
    (0..=n).all(|i| {
        let t = if n == 0 { 0.0 } else { i as f64 / n as f64 };
        map.cost_at(a + (b - a) * t) < LETHAL
    })
}

/// Drops intermediate waypoints that can be skipped in a straight line.
pub fn prune_path(map: &Costmap, path: &PlanPath) -> Vec<Pose2D> {
    let pts = &path.waypoints;
    if pts.len() <= 2 {
        return pts.clone();
    }
    let mut out = vec![pts[0]];
    let mut anchor = 0;
    let mut i = 1;
    while i < pts.len() {
        let mut far = i;
        while far + 1 < pts.len() && segment_clear(map, pts[anchor].position(), pts[far + 1].position()) {
            far += 1;
        }
        out.push(pts[far]);
        anchor = far;
        i = far + 1;
    }
    out
}
