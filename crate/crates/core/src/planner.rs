//! From link probabilities to a ranked list of navigation goals.
//!
//! Correlated objects spread their probability over nearby cells, the map is
//! tiled into square regions whose summed likelihood is the region weight,
//! and regions are ranked by a blend of weight and A* travel distance.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defaults;
use crate::scene::{Cell, OccupancyGrid};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("likelihood map {map:?} does not match grid {grid:?}")]
    GridMismatch { map: (usize, usize), grid: (usize, usize) },
    #[error("no path between {from:?} and {to:?}")]
    Unreachable { from: Cell, to: Cell },
    #[error("no region with positive weight and a reachable centre")]
    NoCandidates,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Spread radius in meters; regions are squares of side `2r`.
    pub r: f64,
    /// Award per correlated object.
    pub w: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Objects with a link probability above this count as correlated.
    pub link_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self::from_preset(defaults::SINGLE_ROOM)
    }
}

impl PlannerConfig {
    pub fn from_preset(p: defaults::PlannerPreset) -> Self {
        Self {
            r: defaults::SPREAD_RADIUS,
            w: p.w,
            alpha: p.alpha,
            beta: p.beta,
            link_threshold: defaults::LINK_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: String| Err(PlannerError::Config(m));
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("r = {} must be positive", self.r));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return bad(format!("w = {} must be non-negative", self.w));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha = {} and beta = {} must be non-negative", self.alpha, self.beta));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return bad(format!("alpha + beta = {} must equal 1", self.alpha + self.beta));
        }
        Ok(())
    }
}

/// Per-cell target likelihood, congruent with an [`OccupancyGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMap {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub values: Vec<f64>,
}

impl LikelihoodMap {
    pub fn zeros_like(grid: &OccupancyGrid) -> Self {
        Self {
            width: grid.width,
            height: grid.height,
            resolution: grid.resolution,
            origin_x: grid.origin_x,
            origin_y: grid.origin_y,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn get(&self, c: Cell) -> f64 {
        self.values[c.row * self.width + c.col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn check(&self, grid: &OccupancyGrid) -> Result<(), PlannerError> {
        if (self.width, self.height) != (grid.width, grid.height) {
            return Err(PlannerError::GridMismatch {
                map: (self.width, self.height),
                grid: (grid.width, grid.height),
            });
        }
        Ok(())
    }

    /// Values scaled to bytes by `round(v · 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// P2 greyscale image, +y up.
    pub fn to_pgm(&self) -> String {
        crate::scene::pgm(self.width, self.height, &self.to_bytes())
    }

    /// `x,y,value` rows at cell centres.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for row in 0..self.height {
            for col in 0..self.width {
                let x = self.origin_x + (col as f64 + 0.5) * self.resolution;
                let y = self.origin_y + (row as f64 + 0.5) * self.resolution;
                let _ = writeln!(out, "{x},{y},{}", self.values[row * self.width + col]);
            }
        }
        out
    }
}

/// Keeps the `(location, probability)` pairs whose probability exceeds the
/// link threshold.
pub fn select_correlated(objects: &[((f64, f64), f64)], cfg: &PlannerConfig) -> Vec<((f64, f64), f64)> {
    objects.iter().copied().filter(|&(_, h)| h > cfg.link_threshold).collect()
}

/// `M = min(1, mean_i h_i·max(0, r − d_i) + w·K)` on every cell whose centre
/// lies strictly within `r` of at least one correlated object; zero
/// elsewhere and everywhere when `K = 0`.
pub fn project_likelihood(
    correlated: &[((f64, f64), f64)],
    grid: &OccupancyGrid,
    cfg: &PlannerConfig,
) -> Result<LikelihoodMap, PlannerError> {
    cfg.validate()?;
    let mut map = LikelihoodMap::zeros_like(grid);
    let k = correlated.len();
    if k == 0 {
        return Ok(map);
    }
    for (idx, c) in grid.cells().enumerate() {
        let (x, y) = grid.center(c);
        let mut sum = 0.0;
        let mut covered = false;
        for &((ox, oy), h) in correlated {
            let d = (x - ox).hypot(y - oy);
            if d < cfg.r {
                covered = true;
                sum += h * (cfg.r - d);
            }
        }
        if covered {
            map.values[idx] = (sum / k as f64 + cfg.w * k as f64).min(1.0);
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub col0: usize,
    pub row0: usize,
    pub cols: usize,
    pub rows: usize,
    pub weight: f64,
    /// Free cell nearest to the region's geometric centre (inside the region
    /// when possible); `None` on a grid without free cells.
    pub center: Option<Cell>,
}

impl Region {
    pub fn contains(&self, c: Cell) -> bool {
        c.col >= self.col0 && c.col < self.col0 + self.cols && c.row >= self.row0 && c.row < self.row0 + self.rows
    }
}

/// Cells per region side: `round(2r / resolution)`, at least one.
pub fn region_side_cells(resolution: f64, cfg: &PlannerConfig) -> usize {
    ((2.0 * cfg.r / resolution).round() as usize).max(1)
}

/// Disjoint square tiling anchored at the grid origin, row-major ids; the
/// last row and column of tiles may be partial.
pub fn partition_regions(m: &LikelihoodMap, grid: &OccupancyGrid, cfg: &PlannerConfig) -> Result<Vec<Region>, PlannerError> {
    cfg.validate()?;
    m.check(grid)?;
    let side = region_side_cells(grid.resolution, cfg);
    let mut regions = Vec::new();
    for row0 in (0..grid.height).step_by(side) {
        for col0 in (0..grid.width).step_by(side) {
            let cols = side.min(grid.width - col0);
            let rows = side.min(grid.height - row0);
            let mut weight = 0.0;
            for r in row0..row0 + rows {
                for c in col0..col0 + cols {
                    weight += m.values[r * grid.width + c];
                }
            }
            let mut region = Region {
                id: regions.len(),
                col0,
                row0,
                cols,
                rows,
                weight,
                center: None,
            };
            let cx = grid.origin_x + (col0 as f64 + cols as f64 / 2.0) * grid.resolution;
            let cy = grid.origin_y + (row0 as f64 + rows as f64 / 2.0) * grid.resolution;
            region.center = grid
                .nearest_free(cx, cy, |c| region.contains(c))
                .or_else(|| grid.nearest_free(cx, cy, |_| true));
            regions.push(region);
        }
    }
    Ok(regions)
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    f: f64,
    g: f64,
    index: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // Reversed so BinaryHeap pops the smallest f, then the lowest index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Octile distance in meters.
pub fn octile(grid: &OccupancyGrid, a: Cell, b: Cell) -> f64 {
    let dx = a.col.abs_diff(b.col) as f64;
    let dy = a.row.abs_diff(b.row) as f64;
    grid.resolution * (dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy))
}

fn search(grid: &OccupancyGrid, from: Cell, goal: Option<Cell>) -> (Vec<f64>, Vec<usize>) {
    let n = grid.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let start = grid.index(from);
    dist[start] = 0.0;
    let h = |c: Cell| goal.map_or(0.0, |g| octile(grid, c, g));
    heap.push(Frontier {
        f: h(from),
        g: 0.0,
        index: start,
    });
    while let Some(Frontier { g, index, .. }) = heap.pop() {
        if closed[index] || g > dist[index] {
            continue;
        }
        closed[index] = true;
        let cell = grid.cell_at(index);
        if Some(cell) == goal {
            break;
        }
        for (next, len) in grid.neighbors(cell) {
            let j = grid.index(next);
            let ng = g + len * grid.resolution;
            if ng < dist[j] {
                dist[j] = ng;
                parent[j] = index;
                heap.push(Frontier {
                    f: ng + h(next),
                    g: ng,
                    index: j,
                });
            }
        }
    }
    (dist, parent)
}

/// Shortest 8-connected path length in meters and the cells along it
/// (both endpoints included).
pub fn astar_distance(grid: &OccupancyGrid, a: Cell, b: Cell) -> Result<(f64, Vec<Cell>), PlannerError> {
    if grid.is_blocked(a) || grid.is_blocked(b) {
        return Err(PlannerError::Unreachable { from: a, to: b });
    }
    let (dist, parent) = search(grid, a, Some(b));
    let end = grid.index(b);
    if !dist[end].is_finite() {
        return Err(PlannerError::Unreachable { from: a, to: b });
    }
    let mut path = vec![b];
    let mut cur = end;
    while cur != grid.index(a) {
        cur = parent[cur];
        path.push(grid.cell_at(cur));
    }
    path.reverse();
    Ok((dist[end], path))
}

/// Distances in meters from `from` to every cell (infinite when unreachable).
pub fn dijkstra(grid: &OccupancyGrid, from: Cell) -> Vec<f64> {
    if grid.is_blocked(from) {
        return vec![f64::INFINITY; grid.len()];
    }
    search(grid, from, None).0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub region: usize,
    pub weight: f64,
    pub center: Cell,
    pub center_xy: (f64, f64),
    pub distance: f64,
    pub cost: f64,
}

/// Ranks regions by `C = α(1 − W/W_max) + β(D/D_max)`, ascending; ties go
/// to the larger weight, then the lower region id. Regions with zero weight,
/// without a reachable centre, or listed in `exclude` are dropped. With a
/// single survivor both terms are defined as zero.
pub fn rank_candidates(
    regions: &[Region],
    robot: Cell,
    grid: &OccupancyGrid,
    cfg: &PlannerConfig,
    exclude: &HashSet<usize>,
) -> Result<Vec<Candidate>, PlannerError> {
    cfg.validate()?;
    let mut kept: Vec<Candidate> = Vec::new();
    for r in regions {
        if r.weight <= 0.0 || exclude.contains(&r.id) {
            continue;
        }
        let Some(center) = r.center else { continue };
        let Ok((distance, _)) = astar_distance(grid, robot, center) else { continue };
        kept.push(Candidate {
            region: r.id,
            weight: r.weight,
            center,
            center_xy: grid.center(center),
            distance,
            cost: 0.0,
        });
    }
    if kept.is_empty() {
        return Err(PlannerError::NoCandidates);
    }
    if kept.len() > 1 {
        let w_max = kept.iter().map(|c| c.weight).fold(0.0, f64::max);
        let d_max = kept.iter().map(|c| c.distance).fold(0.0, f64::max);
        for c in &mut kept {
            let d_term = if d_max > 0.0 { c.distance / d_max } else { 0.0 };
            c.cost = cfg.alpha * (1.0 - c.weight / w_max) + cfg.beta * d_term;
        }
    }
    kept.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then_with(|| b.weight.total_cmp(&a.weight))
            .then_with(|| a.region.cmp(&b.region))
    });
    Ok(kept)
}
