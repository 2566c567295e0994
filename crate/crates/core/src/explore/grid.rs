//! Top-down occupancy mapping and goal sampling.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::depth_is_valid;
use crate::ingest::PosedFrame;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Unknown,
    Free,
    Occupied,
}

pub type CellIndex = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: f64,
    /// Heights (m) treated as obstacles for the agent.
    pub band: [f64; 2],
    /// Points below this height are ground.
    pub ground_height: f64,
    /// Mark cells under camera rays as free.
    pub carve: bool,
    /// Pixel stride used when integrating a frame.
    pub stride: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 0.05, band: [0.05, 1.2], ground_height: 0.03, carve: true, stride: 2 }
    }
}

/// Cells are indexed `(ix, iy)`; cell `(i, j)` covers
/// `[origin + i·res, origin + (i+1)·res)` in x and likewise in y.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(origin: [f64; 2], width: usize, height: usize, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidInput(format!("grid resolution {resolution} must be positive")));
        }
        Ok(Self { resolution, origin, width, height, cells: vec![Cell::Unknown; width * height] })
    }

    /// Grid covering `[min, max]` with its origin snapped to the resolution.
    pub fn covering(min: [f64; 2], max: [f64; 2], resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidInput(format!("grid resolution {resolution} must be positive")));
        }
        let o = [(min[0] / resolution).floor() * resolution, (min[1] / resolution).floor() * resolution];
        let w = ((max[0] - o[0]) / resolution).floor() as usize + 1;
        let h = ((max[1] - o[1]) / resolution).floor() as usize + 1;
        Self::new(o, w, h, resolution)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<CellIndex> {
        let i = ((x - self.origin[0]) / self.resolution).floor();
        let j = ((y - self.origin[1]) / self.resolution).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height).then(|| (i as usize, j as usize))
    }

    pub fn center(&self, (i, j): CellIndex) -> [f64; 2] {
        [self.origin[0] + (i as f64 + 0.5) * self.resolution, self.origin[1] + (j as f64 + 0.5) * self.resolution]
    }

    pub fn get(&self, (i, j): CellIndex) -> Cell {
        self.cells[j * self.width + i]
    }

    pub fn set(&mut self, (i, j): CellIndex, cell: Cell) {
        self.cells[j * self.width + i] = cell;
    }

    pub fn cells(&self) -> impl Iterator<Item = (CellIndex, Cell)> + '_ {
        self.cells.iter().enumerate().map(|(k, &c)| ((k % self.width, k / self.width), c))
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == cell).count()
    }

    /// Marks free unless already occupied.
    pub fn mark_free(&mut self, x: f64, y: f64) {
        if let Some(c) = self.cell_of(x, y) {
            if self.get(c) != Cell::Occupied {
                self.set(c, Cell::Free);
            }
        }
    }

    pub fn mark_occupied(&mut self, x: f64, y: f64) {
        if let Some(c) = self.cell_of(x, y) {
            self.set(c, Cell::Occupied);
        }
    }

    /// Frees every non-occupied cell whose center lies within `radius`.
    pub fn mark_free_disk(&mut self, x: f64, y: f64, radius: f64) {
        let r = (radius / self.resolution).ceil() as i64 + 1;
        let Some((ci, cj)) = self.cell_of(x, y) else { return };
        for dj in -r..=r {
            for di in -r..=r {
                let (i, j) = (ci as i64 + di, cj as i64 + dj);
                if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
                    continue;
                }
                let c = (i as usize, j as usize);
                let p = self.center(c);
                if (p[0] - x).hypot(p[1] - y) <= radius && self.get(c) != Cell::Occupied {
                    self.set(c, Cell::Free);
                }
            }
        }
    }

    /// Adds one frame's observations, with coordinates in the frame's
    /// reference (z up).
    pub fn integrate(&mut self, frame: &PosedFrame, config: &GridConfig) {
        let c2w = frame.pose.inverse();
        let eye = c2w.translation;
        let stride = config.stride.max(1);
        let mut occupied = Vec::new();
        for v in (0..frame.depth.height()).step_by(stride as usize) {
            for u in (0..frame.depth.width()).step_by(stride as usize) {
                let z = *frame.depth.get(u, v);
                if !depth_is_valid(z) {
                    continue;
                }
                let p = c2w.apply(frame.intrinsics.unproject(u as f64, v as f64, z as f64));
                let obstacle = p.z >= config.band[0] && p.z <= config.band[1];
                if config.carve && p.z <= config.band[1] {
                    let (dx, dy) = (p.x - eye.x, p.y - eye.y);
                    let steps = (dx.hypot(dy) / (0.5 * self.resolution)).ceil() as usize;
                    // Stop short of the end point when it is an obstacle.
                    let last = if obstacle { steps.saturating_sub(2) } else { steps };
                    for s in 0..=last {
                        let t = if steps == 0 { 0.0 } else { s as f64 / steps as f64 };
                        self.mark_free(eye.x + t * dx, eye.y + t * dy);
                    }
                }
                if obstacle {
                    occupied.push((p.x, p.y));
                } else if p.z < config.ground_height {
                    self.mark_free(p.x, p.y);
                }
            }
        }
        for (x, y) in occupied {
            self.mark_occupied(x, y);
        }
    }

    pub fn occupied_centers(&self) -> BTreeSet<[i64; 2]> {
        let key = |v: f64| (v / self.resolution).floor() as i64;
        self.cells()
            .filter(|(_, c)| *c == Cell::Occupied)
            .map(|(ix, _)| {
                let p = self.center(ix);
                [key(p[0]), key(p[1])]
            })
            .collect()
    }

    /// Copy in which every cell within `radius` of an occupied cell is occupied.
    pub fn inflate(&self, radius: f64) -> Self {
        let mut out = self.clone();
        let r = (radius / self.resolution).ceil() as i64;
        let occ: Vec<CellIndex> = self.cells().filter(|(_, c)| *c == Cell::Occupied).map(|(ix, _)| ix).collect();
        for (ci, cj) in occ {
            for dj in -r..=r {
                for di in -r..=r {
                    let (i, j) = (ci as i64 + di, cj as i64 + dj);
                    if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
                        continue;
                    }
                    if ((di * di + dj * dj) as f64).sqrt() * self.resolution <= radius {
                        out.set((i as usize, j as usize), Cell::Occupied);
                    }
                }
            }
        }
        out
    }
}

/// Grid spanning every observed point and camera position.
pub fn build_occupancy_grid(frames: &[PosedFrame], config: &GridConfig) -> Result<OccupancyGrid> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("occupancy grid needs at least one frame".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut extend = |x: f64, y: f64| {
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    };
    for f in frames {
        let c2w = f.pose.inverse();
        extend(c2w.translation.x, c2w.translation.y);
        for v in (0..f.depth.height()).step_by(config.stride.max(1) as usize) {
            for u in (0..f.depth.width()).step_by(config.stride.max(1) as usize) {
                let z = *f.depth.get(u, v);
                if depth_is_valid(z) {
                    let p = c2w.apply(f.intrinsics.unproject(u as f64, v as f64, z as f64));
                    if p.z <= config.band[1] {
                        extend(p.x, p.y);
                    }
                }
            }
        }
    }
    let mut grid = OccupancyGrid::covering(lo, hi, config.resolution)?;
    for f in frames {
        grid.integrate(f, config);
    }
    Ok(grid)
}

pub const GOAL_TRIALS: usize = 1000;

/// Uniformly samples a free cell whose center lies at distance
/// `[r_min, r_max]` from `centroid`.
pub fn sample_goal(grid: &OccupancyGrid, centroid: [f64; 2], r_min: f64, r_max: f64, rng: &mut impl Rng) -> Result<CellIndex> {
    sample_goal_where(grid, centroid, r_min, r_max, rng, |_| true)
}

/// [`sample_goal`] restricted to cells accepted by `accept`.
pub fn sample_goal_where(
    grid: &OccupancyGrid,
    centroid: [f64; 2],
    r_min: f64,
    r_max: f64,
    rng: &mut impl Rng,
    accept: impl Fn(CellIndex) -> bool,
) -> Result<CellIndex> {
    if !(r_min >= 0.0 && r_min < r_max) {
        return Err(Error::InvalidInput(format!("annulus [{r_min}, {r_max}] is empty")));
    }
    let lo = |c: f64, o: f64| (((c - r_max - o) / grid.resolution).floor().max(0.0)) as usize;
    let hi = |c: f64, o: f64, n: usize| (((c + r_max - o) / grid.resolution).ceil().max(-1.0) as i64).min(n as i64 - 1);
    let (i0, j0) = (lo(centroid[0], grid.origin[0]), lo(centroid[1], grid.origin[1]));
    let (i1, j1) = (hi(centroid[0], grid.origin[0], grid.width), hi(centroid[1], grid.origin[1], grid.height));
    if i1 < i0 as i64 || j1 < j0 as i64 {
        return Err(Error::NoFreeCell(0));
    }
    for _ in 0..GOAL_TRIALS {
        let c = (rng.random_range(i0..=i1 as usize), rng.random_range(j0..=j1 as usize));
        let p = grid.center(c);
        let d = (p[0] - centroid[0]).hypot(p[1] - centroid[1]);
        if grid.get(c) == Cell::Free && d >= r_min && d <= r_max && accept(c) {
            return Ok(c);
        }
    }
    Err(Error::NoFreeCell(GOAL_TRIALS))
}
