//! Static occupancy map shared by the simulation and the planners.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose2D, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Free,
    Occupied,
}

/// Grid coordinates. Ordered by `(row, col)` so ties resolve toward the
/// lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("grid must be at least 3x3 cells, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("cell buffer holds {actual} cells, expected {expected}")]
    CellCount { expected: usize, actual: usize },
    #[error("rotated grid origins are not supported")]
    RotatedOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    resolution: f64,
    width: usize,
    height: usize,
    origin: Pose2D,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    /// Builds a grid from raw cells (row-major, row 0 at `origin.y`) and
    /// closes its boundary.
    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Pose2D,
        cells: Vec<Cell>,
    ) -> Result<Self, GridError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::BadResolution(resolution));
        }
        if width < 3 || height < 3 {
            return Err(GridError::TooSmall { width, height });
        }
        if cells.len() != width * height {
            return Err(GridError::CellCount {
                expected: width * height,
                actual: cells.len(),
            });
        }
        if origin.theta != 0.0 {
            return Err(GridError::RotatedOrigin);
        }
        let mut grid = Self {
            resolution,
            width,
            height,
            origin,
            cells,
        };
        grid.close_boundary();
        Ok(grid)
    }

    /// An empty room whose only obstacles are the boundary cells.
    pub fn closed_room(width: usize, height: usize, resolution: f64, origin: Pose2D) -> Result<Self, GridError> {
        Self::from_cells(width, height, resolution, origin, vec![Cell::Free; width * height])
    }

    /// Rasterizes axis-aligned rectangles `[x0, y0, x1, y1]` (meters, world
    /// frame) into a closed room of `width_m` × `height_m` anchored at the
    /// world origin. A cell is occupied when its center lies inside a
    /// rectangle.
    pub fn from_rectangles(
        width_m: f64,
        height_m: f64,
        resolution: f64,
        rectangles: &[[f64; 4]],
    ) -> Result<Self, GridError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::BadResolution(resolution));
        }
        let width = libm::round(width_m / resolution) as usize;
        let height = libm::round(height_m / resolution) as usize;
        let mut grid = Self::closed_room(width, height, resolution, Pose2D::default())?;
        for rect in rectangles {
            let (x0, x1) = (rect[0].min(rect[2]), rect[0].max(rect[2]));
            let (y0, y1) = (rect[1].min(rect[3]), rect[1].max(rect[3]));
            for row in 0..height {
                for col in 0..width {
                    let c = grid.center(CellIndex::new(col, row));
                    if c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1 {
                        grid.set(CellIndex::new(col, row), Cell::Occupied);
                    }
                }
            }
        }
        Ok(grid)
    }

    fn close_boundary(&mut self) {
        for col in 0..self.width {
            self.set(CellIndex::new(col, 0), Cell::Occupied);
            self.set(CellIndex::new(col, self.height - 1), Cell::Occupied);
        }
        for row in 0..self.height {
            self.set(CellIndex::new(0, row), Cell::Occupied);
            self.set(CellIndex::new(self.width - 1, row), Cell::Occupied);
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn index(&self, cell: CellIndex) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell_at(&self, index: usize) -> CellIndex {
        CellIndex::new(index % self.width, index / self.width)
    }

    pub fn get(&self, cell: CellIndex) -> Cell {
        self.cells[self.index(cell)]
    }

    pub fn set(&mut self, cell: CellIndex, value: Cell) {
        let i = self.index(cell);
        self.cells[i] = value;
    }

    pub fn is_occupied(&self, cell: CellIndex) -> bool {
        self.get(cell) == Cell::Occupied
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some()
    }

    /// Cell containing the world point, if inside the grid.
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

    /// Points outside the grid count as occupied.
    pub fn is_occupied_at(&self, p: Vec2) -> bool {
        self.cell_of(p).is_none_or(|c| self.is_occupied(c))
    }

    fn cell_square_distance(&self, cell: CellIndex, p: Vec2) -> (f64, Vec2) {
        let lo = Vec2::new(
            self.origin.x + cell.col as f64 * self.resolution,
            self.origin.y + cell.row as f64 * self.resolution,
        );
        let nearest = Vec2::new(
            p.x.clamp(lo.x, lo.x + self.resolution),
            p.y.clamp(lo.y, lo.y + self.resolution),
        );
        (p.distance(nearest), nearest)
    }

    /// Cells whose squares intersect the axis-aligned box around `p` with
    /// half-extent `r`. Out-of-grid area is reported through the flag.
    fn window(&self, p: Vec2, r: f64) -> (core::ops::Range<usize>, core::ops::Range<usize>, bool) {
        let gx0 = libm::floor((p.x - r - self.origin.x) / self.resolution);
        let gx1 = libm::floor((p.x + r - self.origin.x) / self.resolution);
        let gy0 = libm::floor((p.y - r - self.origin.y) / self.resolution);
        let gy1 = libm::floor((p.y + r - self.origin.y) / self.resolution);
        let outside = gx0 < 0.0 || gy0 < 0.0 || gx1 >= self.width as f64 || gy1 >= self.height as f64;
        let c0 = gx0.max(0.0) as usize;
        let c1 = (gx1.max(-1.0) + 1.0).min(self.width as f64) as usize;
        let r0 = gy0.max(0.0) as usize;
        let r1 = (gy1.max(-1.0) + 1.0).min(self.height as f64) as usize;
        (r0..r1, c0..c1, outside)
    }

    /// True when a disc overlaps any occupied cell or leaves the grid.
    /// Touching (distance exactly `radius`) is not an overlap.
    pub fn disc_hits_obstacle(&self, center: Vec2, radius: f64) -> bool {
        let (rows, cols, outside) = self.window(center, radius);
        if outside {
            return true;
        }
        for row in rows {
            for col in cols.clone() {
                let cell = CellIndex::new(col, row);
                if self.is_occupied(cell) && self.cell_square_distance(cell, center).0 < radius {
                    return true;
                }
            }
        }
        false
    }

    /// Closest point on any occupied cell within `max_range` of `p`, with its
    /// distance. Ties keep the first cell in `(row, col)` order.
    pub fn nearest_obstacle(&self, p: Vec2, max_range: f64) -> Option<(Vec2, f64)> {
        let (rows, cols, _) = self.window(p, max_range);
        let mut best: Option<(Vec2, f64)> = None;
        for row in rows {
            for col in cols.clone() {
                let cell = CellIndex::new(col, row);
                if !self.is_occupied(cell) {
                    continue;
                }
                let (d, point) = self.cell_square_distance(cell, p);
                if d <= max_range && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((point, d));
                }
            }
        }
        best
    }

    /// Walks the cells pierced by the ray `origin + t·dir`, `t ∈ [0, max_t]`,
    /// in order. See [`traverse_cells`].
    pub fn traverse(&self, origin: Vec2, dir: Vec2, max_t: f64, visit: impl FnMut(CellIndex, f64) -> bool) -> Option<f64> {
        traverse_cells(self.width, self.height, self.resolution, self.origin.position(), origin, dir, max_t, visit)
    }

    /// True when every cell on the segment `a`-`b` is free.
    pub fn line_of_sight(&self, a: Vec2, b: Vec2) -> bool {
        let delta = b - a;
        let len = delta.norm();
        let Some(dir) = delta.normalized() else {
            return !self.is_occupied_at(a);
        };
        let mut clear = true;
        let left = self.traverse(a, dir, len, |cell, _| {
            if self.is_occupied(cell) {
                clear = false;
            }
            clear
        });
        clear && left.is_none()
    }

    /// True when the boundary ring is fully occupied.
    pub fn is_closed(&self) -> bool {
        (0..self.width).all(|c| {
            self.is_occupied(CellIndex::new(c, 0)) && self.is_occupied(CellIndex::new(c, self.height - 1))
        }) && (0..self.height).all(|r| {
            self.is_occupied(CellIndex::new(0, r)) && self.is_occupied(CellIndex::new(self.width - 1, r))
        })
    }
}

/// Amanatides-Woo walk over an axis-aligned `width`×`height` lattice of
/// square cells with lower-left corner `corner`. `visit` receives each cell
/// pierced by `origin + t·dir`, `t ∈ [0, max_t]`, with the parameter at which
/// the ray enters it, and returns `false` to stop. Returns the entry
/// parameter of the first point outside the lattice, if reached.
#[allow(clippy::too_many_arguments)]
pub fn traverse_cells(
    width: usize,
    height: usize,
    res: f64,
    corner: Vec2,
    origin: Vec2,
    dir: Vec2,
    max_t: f64,
    mut visit: impl FnMut(CellIndex, f64) -> bool,
) -> Option<f64> {
    let rel = origin - corner;
    let (fc, fr) = (libm::floor(rel.x / res), libm::floor(rel.y / res));
    if !(fc >= 0.0 && fr >= 0.0 && fc < width as f64 && fr < height as f64) {
        return Some(0.0);
    }
    let (mut col, mut row) = (fc as i64, fr as i64);
    let step_x: i64 = if dir.x > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dir.y > 0.0 { 1 } else { -1 };
    let boundary = |idx: i64, step: i64, o: f64| o + (idx + if step > 0 { 1 } else { 0 }) as f64 * res;
    let mut t_max_x = if dir.x != 0.0 {
        (boundary(col, step_x, corner.x) - origin.x) / dir.x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dir.y != 0.0 {
        (boundary(row, step_y, corner.y) - origin.y) / dir.y
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dir.x != 0.0 { res / dir.x.abs() } else { f64::INFINITY };
    let t_delta_y = if dir.y != 0.0 { res / dir.y.abs() } else { f64::INFINITY };
    let mut t_enter = 0.0;
    loop {
        if t_enter > max_t {
            return None;
        }
        if !visit(CellIndex::new(col as usize, row as usize), t_enter) {
            return None;
        }
        if t_max_x < t_max_y {
            t_enter = t_max_x;
            col += step_x;
            t_max_x += t_delta_x;
        } else {
            t_enter = t_max_y;
            row += step_y;
            t_max_y += t_delta_y;
        }
        if col < 0 || row < 0 || col >= width as i64 || row >= height as i64 {
            return (t_enter <= max_t).then_some(t_enter);
        }
    }
}
