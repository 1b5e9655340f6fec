use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Scene, SceneError, SceneObject, Wall};

/// Grid cell; `col` grows with x and `row` with y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Free/blocked raster aligned with a scene extent.
///
/// Cell `(col, row)` covers `[origin_x + col·res, origin_x + (col+1)·res)`
/// horizontally (likewise for rows); the last column/row also owns the far
/// boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    blocked: Vec<bool>,
}

const DIRS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

impl OccupancyGrid {
    pub fn free(width: usize, height: usize, resolution: f64, origin_x: f64, origin_y: f64) -> Self {
        Self {
            resolution,
            width,
            height,
            origin_x,
            origin_y,
            blocked: vec![false; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row * self.width + c.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell_at(i))
    }

    pub fn contains(&self, col: isize, row: isize) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    /// Cell containing the point, with the far boundary folded into the last
    /// column/row. `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        let fx = ((x - self.origin_x) / self.resolution).floor();
        let fy = ((y - self.origin_y) / self.resolution).floor();
        let col = if fx as isize == self.width as isize && (x - self.max_x()).abs() < 1e-9 {
            self.width as isize - 1
        } else {
            fx as isize
        };
        let row = if fy as isize == self.height as isize && (y - self.max_y()).abs() < 1e-9 {
            self.height as isize - 1
        } else {
            fy as isize
        };
        self.contains(col, row).then(|| Cell::new(col as usize, row as usize))
    }

    pub fn max_x(&self) -> f64 {
        self.origin_x + self.width as f64 * self.resolution
    }

    pub fn max_y(&self) -> f64 {
        self.origin_y + self.height as f64 * self.resolution
    }

    pub fn center(&self, c: Cell) -> (f64, f64) {
        (
            self.origin_x + (c.col as f64 + 0.5) * self.resolution,
            self.origin_y + (c.row as f64 + 0.5) * self.resolution,
        )
    }

    /// Closed rectangle `[x0, x1] × [y0, y1]` of the cell.
    pub fn bounds(&self, c: Cell) -> (f64, f64, f64, f64) {
        let x0 = self.origin_x + c.col as f64 * self.resolution;
        let y0 = self.origin_y + c.row as f64 * self.resolution;
        (x0, y0, x0 + self.resolution, y0 + self.resolution)
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.index(c)]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_blocked(c)
    }

    pub fn set_blocked(&mut self, c: Cell) {
        let i = self.index(c);
        self.blocked[i] = true;
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| self.is_free(c))
    }

    /// True when the open disc overlaps the cell rectangle.
    pub fn disc_overlaps(&self, c: Cell, x: f64, y: f64, r: f64) -> bool {
        let (x0, y0, x1, y1) = self.bounds(c);
        let nx = x.clamp(x0, x1);
        let ny = y.clamp(y0, y1);
        (nx - x).hypot(ny - y) < r
    }

    pub fn mark_disc(&mut self, x: f64, y: f64, r: f64) {
        let res = self.resolution;
        let c0 = (((x - r - self.origin_x) / res).floor() as isize).max(0);
        let c1 = (((x + r - self.origin_x) / res).floor() as isize).min(self.width as isize - 1);
        let r0 = (((y - r - self.origin_y) / res).floor() as isize).max(0);
        let r1 = (((y + r - self.origin_y) / res).floor() as isize).min(self.height as isize - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = Cell::new(col as usize, row as usize);
                if self.disc_overlaps(cell, x, y, r) {
                    self.set_blocked(cell);
                }
            }
        }
    }

    /// Blocks every cell whose half-open extent contains a point of the
    /// segment. Walls must be axis-aligned.
    pub fn mark_wall(&mut self, w: &Wall) {
        let (Some(a), Some(b)) = (self.cell_of(w.x0, w.y0), self.cell_of(w.x1, w.y1)) else {
            return;
        };
        for row in a.row.min(b.row)..=a.row.max(b.row) {
            for col in a.col.min(b.col)..=a.col.max(b.col) {
                self.set_blocked(Cell::new(col, row));
            }
        }
    }

    /// 8-connected moves from `c` with their length in cells (1 or √2).
    /// Diagonal moves may not cut a blocked corner.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        DIRS.iter().filter_map(move |&(dc, dr)| self.step_target(c, dc, dr))
    }

    /// Destination of a single move from `c` by `(dc, dr)`, if legal.
    pub fn step_target(&self, c: Cell, dc: isize, dr: isize) -> Option<(Cell, f64)> {
        let (col, row) = (c.col as isize + dc, c.row as isize + dr);
        if !self.contains(col, row) {
            return None;
        }
        let to = Cell::new(col as usize, row as usize);
        if self.is_blocked(to) {
            return None;
        }
        if dc != 0 && dr != 0 {
            let side_a = Cell::new(col as usize, c.row);
            let side_b = Cell::new(c.col, row as usize);
            if self.is_blocked(side_a) || self.is_blocked(side_b) {
                return None;
            }
            Some((to, std::f64::consts::SQRT_2))
        } else {
            Some((to, 1.0))
        }
    }

    /// Free cells reachable from `start` under the move rules of [`Self::neighbors`].
    pub fn reachable_from(&self, start: Cell) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        if self.is_blocked(start) {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[self.index(start)] = true;
        while let Some(c) = queue.pop_front() {
            for (n, _) in self.neighbors(c) {
                let i = self.index(n);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Nearest free cell to a point by Euclidean distance between the point
    /// and cell centres; ties go to the lowest cell index.
    pub fn nearest_free(&self, x: f64, y: f64, filter: impl Fn(Cell) -> bool) -> Option<Cell> {
        let mut best: Option<(f64, Cell)> = None;
        for c in self.free_cells().filter(|&c| filter(c)) {
            let (cx, cy) = self.center(c);
            let d = (cx - x).hypot(cy - y);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Walks the cells crossed by the segment `from → to` and reports whether
    /// none of them is blocked. The cell containing `from` is skipped and
    /// cells for which `exempt` returns true are treated as transparent.
    pub fn line_of_sight(&self, from: (f64, f64), to: (f64, f64), exempt: impl Fn(Cell) -> bool) -> bool {
        let (Some(start), Some(end)) = (self.cell_of(from.0, from.1), self.cell_of(to.0, to.1)) else {
            return false;
        };
        let res = self.resolution;
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let (mut col, mut row) = (start.col as isize, start.row as isize);
        let step_c: isize = if dx > 0.0 { 1 } else { -1 };
        let step_r: isize = if dy > 0.0 { 1 } else { -1 };
        let boundary = |idx: isize, step: isize, origin: f64| origin + (idx + if step > 0 { 1 } else { 0 }) as f64 * res;
        let mut t_max_c = if dx != 0.0 {
            (boundary(col, step_c, self.origin_x) - from.0) / dx
        } else {
            f64::INFINITY
        };
        let mut t_max_r = if dy != 0.0 {
            (boundary(row, step_r, self.origin_y) - from.1) / dy
        } else {
            f64::INFINITY
        };
        let t_delta_c = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
        let t_delta_r = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };

        let limit = self.width + self.height + 2;
        for _ in 0..limit {
            if (col as usize, row as usize) == (end.col, end.row) {
                break;
            }
            if t_max_c.min(t_max_r) > 1.0 {
                break;
            }
            if t_max_c < t_max_r {
                col += step_c;
                t_max_c += t_delta_c;
            } else {
                row += step_r;
                t_max_r += t_delta_r;
            }
            if !self.contains(col, row) {
                break;
            }
            let cell = Cell::new(col as usize, row as usize);
            if self.is_blocked(cell) && !exempt(cell) {
                return false;
            }
        }
        true
    }

    /// Plain-text PGM (P2), blocked = 0, free = 255. The first image row is
    /// the highest `row` so the picture has +y pointing up.
    pub fn to_pgm(&self) -> String {
        let values: Vec<u8> = self.blocked.iter().map(|&b| if b { 0 } else { 255 }).collect();
        pgm(self.width, self.height, &values)
    }
}

/// P2 encoding of a row-major raster whose row 0 is the bottom of the map.
pub fn pgm(width: usize, height: usize, values: &[u8]) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in (0..height).rev() {
        let line: Vec<String> = values[row * width..(row + 1) * width].iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

fn check_resolution(scene: &Scene, resolution: f64) -> Result<(), SceneError> {
    let max = scene.extent.width().min(scene.extent.height()) / 4.0;
    if !(resolution.is_finite() && resolution > 0.0 && resolution <= max) {
        return Err(SceneError::Resolution { resolution, max });
    }
    Ok(())
}

/// Rasterizes walls and stationary footprints.
pub fn rasterize_occupancy(scene: &Scene, resolution: f64) -> Result<OccupancyGrid, SceneError> {
    rasterize_where(scene, resolution, SceneObject::is_stationary)
}

/// Rasterizes walls and the footprints of objects accepted by `include`.
pub fn rasterize_where(
    scene: &Scene,
    resolution: f64,
    include: impl Fn(&SceneObject) -> bool,
) -> Result<OccupancyGrid, SceneError> {
    check_resolution(scene, resolution)?;
    let e = &scene.extent;
    let width = (e.width() / resolution - 1e-9).ceil().max(1.0) as usize;
    let height = (e.height() / resolution - 1e-9).ceil().max(1.0) as usize;
    let mut grid = OccupancyGrid::free(width, height, resolution, e.min_x, e.min_y);
    for w in &scene.walls {
        grid.mark_wall(w);
    }
    for o in scene.objects.iter().filter(|o| include(o)) {
        grid.mark_disc(o.pose.x, o.pose.y, o.footprint_radius);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Extent, Mobility, Pose2H};

    fn room(objects: Vec<SceneObject>, walls: Vec<Wall>) -> Scene {
        Scene {
            objects,
            receptacles: vec![],
            extent: Extent::new(0.0, 0.0, 4.0, 4.0),
            walls,
            resolution_hint: 0.25,
        }
    }

    fn disc(id: &str, x: f64, y: f64, r: f64, mobility: Mobility) -> SceneObject {
        SceneObject {
            id: id.into(),
            category: "table".into(),
            mobility,
            pose: Pose2H::new(x, y, 0.5),
            footprint_radius: r,
        }
    }

    /// Dense point sampling of each cell (boundary included) as an
    /// independent overlap test.
    fn brute_force_disc_cells(grid: &OccupancyGrid, x: f64, y: f64, r: f64) -> usize {
        let k = 200;
        grid.cells()
            .filter(|&c| {
                let (x0, y0, x1, y1) = grid.bounds(c);
                (0..=k).any(|i| {
                    (0..=k).any(|j| {
                        let px = x0 + (x1 - x0) * i as f64 / k as f64;
                        let py = y0 + (y1 - y0) * j as f64 / k as f64;
                        (px - x).hypot(py - y) < r
                    })
                })
            })
            .count()
    }

    #[test]
    fn empty_room_is_all_free() {
        let s = room(vec![disc("m", 2.0, 2.0, 0.3, Mobility::Movable)], vec![]);
        let g = rasterize_occupancy(&s, 0.25).unwrap();
        assert_eq!((g.width, g.height), (16, 16));
        assert_eq!(g.blocked_count(), 0);
    }

    #[test]
    fn centered_disc_matches_brute_force() {
        let s = room(vec![disc("t", 2.0, 2.0, 0.5, Mobility::Stationary)], vec![]);
        let g = rasterize_occupancy(&s, 0.25).unwrap();
        let expected = brute_force_disc_cells(&g, 2.0, 2.0, 0.5);
        assert_eq!(g.blocked_count(), expected);
        // the disc touches the 2 m grid lines only at tangent points
        assert_eq!(expected, 16);
    }

    #[test]
    fn wall_blocks_one_column() {
        let s = room(
            vec![disc("m", 1.0, 1.0, 0.1, Mobility::Movable)],
            vec![Wall::new(2.0, 0.0, 2.0, 4.0)],
        );
        let g = rasterize_occupancy(&s, 0.25).unwrap();
        assert_eq!(g.blocked_count(), 16);
        assert!((0..16).all(|row| g.is_blocked(Cell::new(8, row))));
    }

    #[test]
    fn resolution_bounds() {
        let s = room(vec![disc("t", 2.0, 2.0, 0.5, Mobility::Stationary)], vec![]);
        assert!(matches!(rasterize_occupancy(&s, 0.0), Err(SceneError::Resolution { .. })));
        assert!(matches!(rasterize_occupancy(&s, 1.5), Err(SceneError::Resolution { .. })));
        assert!(rasterize_occupancy(&s, 1.0).is_ok());
    }

    #[test]
    fn line_of_sight_through_wall() {
        let s = room(
            vec![disc("m", 1.0, 1.0, 0.1, Mobility::Movable)],
            vec![Wall::new(2.0, 0.0, 2.0, 4.0)],
        );
        let g = rasterize_occupancy(&s, 0.25).unwrap();
        assert!(!g.line_of_sight((1.1, 2.1), (3.1, 2.1), |_| false));
        assert!(g.line_of_sight((1.1, 2.1), (1.9, 3.6), |_| false));
        assert!(g.line_of_sight((1.1, 2.1), (3.1, 2.1), |c| c.col == 8));
    }

    #[test]
    fn diagonal_moves_do_not_cut_corners() {
        let mut g = OccupancyGrid::free(3, 3, 0.25, 0.0, 0.0);
        g.set_blocked(Cell::new(1, 0));
        let targets: Vec<Cell> = g.neighbors(Cell::new(0, 0)).map(|(c, _)| c).collect();
        assert_eq!(targets, vec![Cell::new(0, 1)]);
    }

    #[test]
    fn pgm_header_and_orientation() {
        let mut g = OccupancyGrid::free(2, 2, 0.25, 0.0, 0.0);
        g.set_blocked(Cell::new(0, 0));
        assert_eq!(g.to_pgm(), "P2\n2 2\n255\n255 255\n0 255\n");
    }
}
