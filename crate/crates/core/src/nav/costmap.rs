//! Layered costmap. Layers are combined by per-cell maximum; values live in
//! `[0, 255]` with 255 reserved for lethal cells.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent::AgentState;
use crate::geometry::{Pose2D, Vec2};
use crate::grid::{CellIndex, OccupancyGrid};

pub const LETHAL: f64 = 255.0;
/// Cost at exactly the robot radius from an obstacle.
pub const INSCRIBED: f64 = 254.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Pose2D,
}

impl GridGeometry {
    pub fn of(grid: &OccupancyGrid) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            origin: grid.origin(),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cell: CellIndex) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell_at(&self, index: usize) -> CellIndex {
        CellIndex::new(index % self.width, index / self.width)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<CellIndex> {
        let gx = (p.x - self.origin.x) / self.resolution;
        let gy = (p.y - self.origin.y) / self.resolution;
        if !(gx >= 0.0 && gy >= 0.0) {
            return None;
        }
        let (col, row) = (libm::floor(gx) as usize, libm::floor(gy) as usize);
        (col < self.width && row < self.height).then_some(CellIndex::new(col, row))
    }

    pub fn center(&self, cell: CellIndex) -> Vec2 {
        Vec2::new(
            self.origin.x + (cell.col as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.row as f64 + 0.5) * self.resolution,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InflationParams {
    pub robot_radius: f64,
    pub inflation_radius: f64,
    /// 1/m
    pub decay: f64,
}

impl InflationParams {
    /// Widens the lethal and inflation bands by the worst-case offset
    /// between a disc centered anywhere in a cell and that cell's center,
    /// so a center-cell check guarantees the body clears every wall.
    pub fn padded_for(self, resolution: f64) -> Self {
        let pad = resolution * (1.0 + core::f64::consts::SQRT_2) / 2.0;
        Self {
            robot_radius: self.robot_radius + pad,
            inflation_radius: self.inflation_radius + pad,
            decay: self.decay,
        }
    }

    /// Footprint for a disc of `radius` with default decay.
    pub fn for_disc(radius: f64, resolution: f64) -> Self {
        Self {
            robot_radius: radius,
            inflation_radius: radius,
            decay: 5.0,
        }
        .padded_for(resolution)
    }
}

impl Default for InflationParams {
    fn default() -> Self {
        Self {
            robot_radius: 0.25,
            inflation_radius: 0.55,
            decay: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialLayerParams {
    pub peak: f64,
    /// meters
    pub sigma: f64,
    /// Bumps are truncated beyond this many standard deviations.
    pub cutoff_sigmas: f64,
}

impl Default for SocialLayerParams {
    fn default() -> Self {
        Self {
            peak: 200.0,
            sigma: 0.8,
            cutoff_sigmas: 4.0,
        }
    }
}

/// Distance (meters, center to center) from every cell to the nearest
/// occupied cell, or infinity when none lies within `max_range`.
pub fn obstacle_distances(grid: &OccupancyGrid, max_range: f64) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let res = grid.resolution();
    let reach = libm::ceil(max_range / res) as i64;
    let mut dist = vec![f64::INFINITY; w * h];
    let occupied = |c: i64, r: i64| {
        c < 0 || r < 0 || c >= w as i64 || r >= h as i64 || grid.is_occupied(CellIndex::new(c as usize, r as usize))
    };
    for row in 0..h as i64 {
        for col in 0..w as i64 {
            if !occupied(col, row) {
                continue;
            }
            // the nearest obstacle to any free cell always has a free 4-neighbor
            if occupied(col - 1, row) && occupied(col + 1, row) && occupied(col, row - 1) && occupied(col, row + 1) {
                dist[row as usize * w + col as usize] = 0.0;
                continue;
            }
            for dr in -reach..=reach {
                let r = row + dr;
                if r < 0 || r >= h as i64 {
                    continue;
                }
                for dc in -reach..=reach {
                    let c = col + dc;
                    if c < 0 || c >= w as i64 {
                        continue;
                    }
                    let d = libm::sqrt((dr * dr + dc * dc) as f64) * res;
                    if d > max_range {
                        continue;
                    }
                    let slot = &mut dist[r as usize * w + c as usize];
                    if d < *slot {
                        *slot = d;
                    }
                }
            }
        }
    }
    dist
}

/// Inflation cost for a cell at distance `d` from the nearest obstacle.
pub fn inflation_cost(d: f64, params: &InflationParams) -> f64 {
    if d < params.robot_radius {
        LETHAL
    } else if d <= params.inflation_radius {
        INSCRIBED * libm::exp(-params.decay * (d - params.robot_radius))
    } else {
        0.0
    }
}

/// Inflation layer over a static map.
pub fn inflate(grid: &OccupancyGrid, params: &InflationParams) -> Vec<f64> {
    obstacle_distances(grid, params.inflation_radius)
        .into_iter()
        .map(|d| inflation_cost(d, params))
        .collect()
}

pub fn social_cost(d: f64, params: &SocialLayerParams) -> f64 {
    if d > params.cutoff_sigmas * params.sigma {
        return 0.0;
    }
    (params.peak * libm::exp(-d * d / (2.0 * params.sigma * params.sigma))).min(INSCRIBED)
}

/// Gaussian bumps around every human (avatar or NPC). Overlapping bumps
/// combine by maximum. The robot contributes nothing.
pub fn social_layer(geometry: &GridGeometry, agents: &[AgentState], params: &SocialLayerParams) -> Vec<f64> {
    let mut layer = vec![0.0; geometry.len()];
    stamp_social(&mut layer, geometry, agents, params);
    layer
}

fn stamp_social(layer: &mut [f64], geometry: &GridGeometry, agents: &[AgentState], params: &SocialLayerParams) {
    let reach = params.cutoff_sigmas * params.sigma;
    let res = geometry.resolution;
    for human in agents.iter().filter(|a| a.kind.is_human()) {
        let p = human.position();
        let gx0 = libm::floor((p.x - reach - geometry.origin.x) / res).max(0.0) as usize;
        let gy0 = libm::floor((p.y - reach - geometry.origin.y) / res).max(0.0) as usize;
        let gx1 = (libm::floor((p.x + reach - geometry.origin.x) / res) + 1.0).clamp(0.0, geometry.width as f64) as usize;
        let gy1 = (libm::floor((p.y + reach - geometry.origin.y) / res) + 1.0).clamp(0.0, geometry.height as f64) as usize;
        for row in gy0..gy1 {
            for col in gx0..gx1 {
                let cell = CellIndex::new(col, row);
                let c = social_cost(geometry.center(cell).distance(p), params);
                let slot = &mut layer[geometry.index(cell)];
                if c > *slot {
                    *slot = c;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Costmap {
    geometry: GridGeometry,
    static_layer: Vec<f64>,
    inflation: Vec<f64>,
    social: Vec<f64>,
    combined: Vec<f64>,
}

impl Costmap {
    pub fn from_grid(grid: &OccupancyGrid, params: &InflationParams) -> Self {
        let geometry = GridGeometry::of(grid);
        let static_layer: Vec<f64> = grid
            .cells()
            .iter()
            .map(|c| if *c == crate::grid::Cell::Occupied { LETHAL } else { 0.0 })
            .collect();
        let inflation = inflate(grid, params);
        let n = geometry.len();
        let mut map = Self {
            geometry,
            static_layer,
            inflation,
            social: vec![0.0; n],
            combined: vec![0.0; n],
        };
        map.recombine();
        map
    }

    /// A costmap whose static layer is given directly. Values are clamped
    /// to `[0, 255]`.
    pub fn from_costs(geometry: GridGeometry, costs: Vec<f64>) -> Self {
        assert_eq!(costs.len(), geometry.len(), "cost buffer does not match geometry");
        let n = costs.len();
        let static_layer: Vec<f64> = costs.into_iter().map(|c| c.clamp(0.0, LETHAL)).collect();
        Self {
            geometry,
            combined: static_layer.clone(),
            static_layer,
            inflation: vec![0.0; n],
            social: vec![0.0; n],
        }
    }

    fn recombine(&mut self) {
        for i in 0..self.combined.len() {
            self.combined[i] = self.static_layer[i].max(self.inflation[i]).max(self.social[i]);
        }
    }

    /// Rebuilds the social layer from the current agents.
    pub fn update_social(&mut self, agents: &[AgentState], params: &SocialLayerParams) {
        self.social.iter_mut().for_each(|c| *c = 0.0);
        let geometry = self.geometry;
        stamp_social(&mut self.social, &geometry, agents, params);
        self.recombine();
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn static_layer(&self) -> &[f64] {
        &self.static_layer
    }

    pub fn inflation_layer(&self) -> &[f64] {
        &self.inflation
    }

    pub fn social_layer(&self) -> &[f64] {
        &self.social
    }

    pub fn combined(&self) -> &[f64] {
        &self.combined
    }

    pub fn cost(&self, cell: CellIndex) -> f64 {
        self.combined[self.geometry.index(cell)]
    }

    /// Outside the map counts as lethal.
    pub fn cost_at(&self, p: Vec2) -> f64 {
        self.geometry.cell_of(p).map_or(LETHAL, |c| self.cost(c))
    }

    pub fn is_lethal(&self, cell: CellIndex) -> bool {
        self.cost(cell) >= LETHAL
    }

    pub fn is_lethal_at(&self, p: Vec2) -> bool {
        self.cost_at(p) >= LETHAL
    }

    /// True when any cell the segment `a`-`b` passes through is lethal or
    /// the segment leaves the map.
    pub fn segment_hits_lethal(&self, a: Vec2, b: Vec2) -> bool {
        let g = &self.geometry;
        let delta = b - a;
        let len = delta.norm();
        let Some(dir) = delta.normalized() else {
            return self.is_lethal_at(a);
        };
        let mut hit = false;
        let left = crate::grid::traverse_cells(g.width, g.height, g.resolution, g.origin.position(), a, dir, len, |cell, _| {
            hit = self.is_lethal(cell);
            !hit
        });
        hit || left.is_some()
    }
}
