//! Fast-marching path planning on an occupancy grid.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::grid::{Cell, CellIndex, OccupancyGrid};
use crate::error::{Error, Result};

const AXES: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Arrival times (in cells) from `goal` over traversable cells.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    pub time: Vec<f64>,
}

impl DistanceField {
    pub fn get(&self, (i, j): CellIndex) -> f64 {
        self.time[j * self.width + i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedPath {
    pub cells: Vec<CellIndex>,
    /// Arrival time at the start, in cells.
    pub arrival: f64,
    /// Sum of step lengths, in cells.
    pub length: f64,
}

/// Moves between cells: `traversable(c)` says whether a cell may be entered.
/// Diagonal steps need both adjacent axis cells to be traversable.
struct Lattice<'a, F: Fn(CellIndex) -> bool> {
    width: usize,
    height: usize,
    traversable: &'a F,
}

impl<F: Fn(CellIndex) -> bool> Lattice<'_, F> {
    fn offset(&self, (i, j): CellIndex, (di, dj): (i64, i64)) -> Option<CellIndex> {
        let (a, b) = (i as i64 + di, j as i64 + dj);
        (a >= 0 && b >= 0 && (a as usize) < self.width && (b as usize) < self.height).then(|| (a as usize, b as usize))
    }

    fn step(&self, c: CellIndex, d: (i64, i64)) -> Option<CellIndex> {
        let n = self.offset(c, d).filter(|&n| (self.traversable)(n))?;
        if d.0 != 0 && d.1 != 0 {
            let side_a = self.offset(c, (d.0, 0)).is_some_and(|x| (self.traversable)(x));
            let side_b = self.offset(c, (0, d.1)).is_some_and(|x| (self.traversable)(x));
            if !(side_a && side_b) {
                return None;
            }
        }
        Some(n)
    }
}

/// First-order update from two orthogonal neighbour times at spacing `h`.
fn godunov(a: f64, b: f64, h: f64) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if !b.is_finite() || b - a >= h {
        return a + h;
    }
    0.5 * (a + b + (2.0 * h * h - (a - b) * (a - b)).sqrt())
}

fn is_free(grid: &OccupancyGrid) -> impl Fn(CellIndex) -> bool + '_ {
    move |c| grid.get(c) == Cell::Free
}

/// Eikonal arrival times with unit speed on free cells, using the better of
/// an axis-aligned and a diagonal upwind stencil.
pub fn fast_marching(grid: &OccupancyGrid, goal: CellIndex) -> DistanceField {
    let free = is_free(grid);
    let lat = Lattice { width: grid.width, height: grid.height, traversable: &free };
    let n = grid.width * grid.height;
    let idx = |(i, j): CellIndex| j * grid.width + i;
    let mut time = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    if free(goal) {
        time[idx(goal)] = 0.0;
        heap.push(Reverse((0u64, idx(goal))));
    }
    let t_of = |time: &[f64], c: CellIndex, d: (i64, i64)| lat.step(c, d).map_or(f64::INFINITY, |n| time[idx(n)]);
    while let Some(Reverse((_, k))) = heap.pop() {
        if done[k] {
            continue;
        }
        done[k] = true;
        let c = (k % grid.width, k / grid.width);
        for d in NEIGHBOURS {
            let Some(nb) = lat.step(c, d) else { continue };
            let nk = idx(nb);
            if done[nk] {
                continue;
            }
            let ax = t_of(&time, nb, AXES[0]).min(t_of(&time, nb, AXES[1]));
            let ay = t_of(&time, nb, AXES[2]).min(t_of(&time, nb, AXES[3]));
            let d1 = t_of(&time, nb, (1, 1)).min(t_of(&time, nb, (-1, -1)));
            let d2 = t_of(&time, nb, (1, -1)).min(t_of(&time, nb, (-1, 1)));
            let t = godunov(ax, ay, 1.0).min(godunov(d1, d2, std::f64::consts::SQRT_2));
            if t < time[nk] {
                time[nk] = t;
                // Non-negative floats order like their bit patterns.
                heap.push(Reverse((t.to_bits(), nk)));
            }
        }
    }
    DistanceField { width: grid.width, height: grid.height, time }
}

/// Plans from `start` to `goal` by steepest descent on the arrival field.
pub fn plan_path(grid: &OccupancyGrid, start: CellIndex, goal: CellIndex) -> Result<PlannedPath> {
    let inside = |(i, j): CellIndex| i < grid.width && j < grid.height;
    if !inside(start) || !inside(goal) {
        return Err(Error::InvalidInput("start or goal outside the grid".into()));
    }
    if grid.get(start) != Cell::Free || grid.get(goal) != Cell::Free {
        return Err(Error::InvalidInput("start and goal must be free cells".into()));
    }
    let field = fast_marching(grid, goal);
    let arrival = field.get(start);
    if !arrival.is_finite() {
        return Err(Error::Unreachable);
    }
    let free = is_free(grid);
    let lat = Lattice { width: grid.width, height: grid.height, traversable: &free };
    let mut cells = vec![start];
    let mut length = 0.0;
    let mut cur = start;
    while cur != goal {
        let mut best: Option<(f64, CellIndex, f64)> = None;
        for d in NEIGHBOURS {
            if let Some(nb) = lat.step(cur, d) {
                let t = field.get(nb);
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, nb, if d.0 != 0 && d.1 != 0 { std::f64::consts::SQRT_2 } else { 1.0 }));
                }
            }
        }
        let (t, nb, step) = best.ok_or(Error::Unreachable)?;
        if t >= field.get(cur) {
            return Err(Error::Degenerate("descent stalled on the arrival field".into()));
        }
        length += step;
        cells.push(nb);
        cur = nb;
    }
    Ok(PlannedPath { cells, arrival, length })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 8-connected Dijkstra with the same corner rule.
    pub(crate) fn dijkstra(grid: &OccupancyGrid, start: CellIndex, goal: CellIndex) -> f64 {
        let free = is_free(grid);
        let lat = Lattice { width: grid.width, height: grid.height, traversable: &free };
        let idx = |(i, j): CellIndex| j * grid.width + i;
        let mut dist = vec![f64::INFINITY; grid.width * grid.height];
        let mut heap = BinaryHeap::new();
        dist[idx(start)] = 0.0;
        heap.push(Reverse((0u64, idx(start))));
        while let Some(Reverse((bits, k))) = heap.pop() {
            let d = f64::from_bits(bits);
            if d > dist[k] {
                continue;
            }
            let c = (k % grid.width, k / grid.width);
            for s in NEIGHBOURS {
                if let Some(nb) = lat.step(c, s) {
                    let nd = d + if s.0 != 0 && s.1 != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    if nd < dist[idx(nb)] {
                        dist[idx(nb)] = nd;
                        heap.push(Reverse((nd.to_bits(), idx(nb))));
                    }
                }
            }
        }
        dist[idx(goal)]
    }

    fn grid(w: usize, h: usize, occupied: impl Fn(usize, usize) -> bool) -> OccupancyGrid {
        let mut g = OccupancyGrid::new([0.0, 0.0], w, h, 0.1).unwrap();
        for j in 0..h {
            for i in 0..w {
                g.set((i, j), if occupied(i, j) { Cell::Occupied } else { Cell::Free });
            }
        }
        g
    }

    #[test]
    fn straight_path_on_empty_grid() {
        let g = grid(10, 10, |_, _| false);
        let p = plan_path(&g, (0, 0), (0, 9)).unwrap();
        assert!((p.arrival - 9.0).abs() <= 0.45);
        assert_eq!(p.length, 9.0);
        assert!(p.cells.iter().all(|c| c.0 == 0));
    }

    #[test]
    fn diagonal_arrival_is_euclidean() {
        let g = grid(20, 20, |_, _| false);
        let f = fast_marching(&g, (0, 0));
        assert!((f.get((15, 15)) - 15.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
        let t = f.get((19, 7));
        assert!((t - (19f64).hypot(7.0)).abs() / t < 0.05);
    }

    #[test]
    fn path_uses_the_gap() {
        let g = grid(20, 20, |i, j| i == 10 && j != 15);
        let p = plan_path(&g, (2, 2), (18, 2)).unwrap();
        assert!(p.cells.contains(&(10, 15)));
        let d = dijkstra(&g, (2, 2), (18, 2));
        assert!((p.length - d).abs() / d <= 0.05, "{} vs {d}", p.length);
    }

    #[test]
    fn sealed_goal_is_unreachable() {
        let g = grid(10, 10, |i, j| (i == 6 || i == 8 || j == 6 || j == 8) && (6..=8).contains(&i) && (6..=8).contains(&j));
        assert!(matches!(plan_path(&g, (0, 0), (7, 7)), Err(Error::Unreachable)));
        assert!(plan_path(&g, (0, 0), (6, 6)).is_err());
    }

    #[test]
    fn random_grids_match_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 20 {
            let occ: Vec<bool> = (0..40 * 40).map(|_| rng.random::<f64>() < 0.25).collect();
            let g = grid(40, 40, |i, j| occ[j * 40 + i]);
            let pick = |rng: &mut ChaCha8Rng| (rng.random_range(0..40), rng.random_range(0..40));
            let (s, t) = (pick(&mut rng), pick(&mut rng));
            if g.get(s) != Cell::Free || g.get(t) != Cell::Free || s == t {
                continue;
            }
            let d = dijkstra(&g, s, t);
            match plan_path(&g, s, t) {
                Ok(p) => {
                    assert!(p.cells.iter().all(|&c| g.get(c) == Cell::Free));
                    assert!((p.length - d).abs() / d <= 0.05, "{} vs {d}", p.length);
                    checked += 1;
                }
                Err(Error::Unreachable) => assert!(d.is_infinite()),
                Err(e) => panic!("{e}"),
            }
        }
    }
}
