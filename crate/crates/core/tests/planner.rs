use std::collections::HashSet;
use std::path::PathBuf;

use csg_core::planner::{
    astar_distance, dijkstra, partition_regions, project_likelihood, rank_candidates, select_correlated, LikelihoodMap,
    PlannerConfig, PlannerError, Region,
};
use csg_core::scene::{load_scene, rasterize_occupancy, Cell, OccupancyGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(r: f64, w: f64, alpha: f64, beta: f64) -> PlannerConfig {
    PlannerConfig {
        r,
        w,
        alpha,
        beta,
        link_threshold: 0.5,
    }
}

#[test]
fn no_correlated_objects_gives_a_zero_map() {
    let g = OccupancyGrid::free(10, 10, 0.25, 0.0, 0.0);
    let m = project_likelihood(&[], &g, &cfg(1.0, 0.05, 0.4, 0.6)).unwrap();
    assert!(m.values.iter().all(|&v| v == 0.0));
}

#[test]
fn single_object_likelihood() {
    let g = OccupancyGrid::free(10, 10, 0.25, 0.0, 0.0);
    let (ox, oy) = g.center(Cell::new(4, 4));
    let m = project_likelihood(&[((ox, oy), 1.0)], &g, &cfg(1.0, 0.05, 0.4, 0.6)).unwrap();
    // 1·(1 − 0) + 0.05 clips to 1.
    assert_eq!(m.get(Cell::new(4, 4)), 1.0);
    // Two cells over is 0.5 m away: 1·0.5 + 0.05.
    assert!((m.get(Cell::new(6, 4)) - 0.55).abs() < 1e-12);
    // Outside the radius nothing is added, not even the award.
    assert_eq!(m.get(Cell::new(9, 9)), 0.0);
}

#[test]
fn selection_uses_a_strict_threshold() {
    let objs = [((0.0, 0.0), 0.5), ((1.0, 0.0), 0.51), ((2.0, 0.0), 0.2)];
    assert_eq!(select_correlated(&objs, &cfg(1.0, 0.0, 0.5, 0.5)), vec![((1.0, 0.0), 0.51)]);
}

fn map_from(g: &OccupancyGrid, values: Vec<f64>) -> LikelihoodMap {
    LikelihoodMap {
        values,
        ..LikelihoodMap::zeros_like(g)
    }
}

#[test]
fn region_weights() {
    let g = OccupancyGrid::free(4, 4, 0.5, 0.0, 0.0);
    let c = cfg(0.5, 0.0, 0.5, 0.5);
    let zero = partition_regions(&LikelihoodMap::zeros_like(&g), &g, &c).unwrap();
    assert_eq!(zero.len(), 4);
    assert!(zero.iter().all(|r| r.weight == 0.0));

    let mut v = vec![0.0; 16];
    v[g.index(Cell::new(3, 2))] = 0.7;
    let one = partition_regions(&map_from(&g, v), &g, &c).unwrap();
    let w: Vec<f64> = one.iter().map(|r| r.weight).collect();
    assert_eq!(w, vec![0.0, 0.0, 0.0, 0.7]);

    let v: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let all = partition_regions(&map_from(&g, v.clone()), &g, &c).unwrap();
    // Row-major cells: region 0 holds 0,1,4,5; region 1 holds 2,3,6,7 and so on.
    let hand = [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]];
    for (r, cells) in all.iter().zip(hand) {
        let want: f64 = cells.iter().map(|&i| v[i]).sum();
        assert!((r.weight - want).abs() < 1e-12);
    }
}

#[test]
fn partial_tiles_at_the_edge() {
    let g = OccupancyGrid::free(5, 3, 0.5, 0.0, 0.0);
    let regions = partition_regions(&LikelihoodMap::zeros_like(&g), &g, &cfg(0.5, 0.0, 0.5, 0.5)).unwrap();
    let shapes: Vec<(usize, usize)> = regions.iter().map(|r| (r.cols, r.rows)).collect();
    assert_eq!(shapes, vec![(2, 2), (2, 2), (1, 2), (2, 1), (2, 1), (1, 1)]);
}

fn hand_region(id: usize, weight: f64, center: Cell) -> Region {
    Region {
        id,
        col0: center.col,
        row0: 0,
        cols: 1,
        rows: 1,
        weight,
        center: Some(center),
    }
}

#[test]
fn cost_example() {
    // One row of 1 m cells; the robot sits at column 2.
    let g = OccupancyGrid::free(11, 1, 1.0, 0.0, 0.0);
    let regions = [hand_region(1, 10.0, Cell::new(10, 0)), hand_region(2, 5.0, Cell::new(0, 0))];
    let ranked = rank_candidates(&regions, Cell::new(2, 0), &g, &cfg(1.0, 0.0, 0.4, 0.6), &HashSet::new()).unwrap();
    assert_eq!(ranked.iter().map(|c| c.region).collect::<Vec<_>>(), vec![2, 1]);
    assert!((ranked[0].cost - 0.35).abs() < 1e-12);
    assert!((ranked[1].cost - 0.6).abs() < 1e-12);
    assert_eq!(ranked[1].distance, 8.0);

    let single = rank_candidates(&regions[..1], Cell::new(2, 0), &g, &cfg(1.0, 0.0, 0.4, 0.6), &HashSet::new()).unwrap();
    assert_eq!(single[0].cost, 0.0);

    let by_weight = rank_candidates(&regions, Cell::new(2, 0), &g, &cfg(1.0, 0.0, 1.0, 0.0), &HashSet::new()).unwrap();
    assert_eq!(by_weight[0].region, 1);

    let skip = rank_candidates(&regions, Cell::new(2, 0), &g, &cfg(1.0, 0.0, 0.4, 0.6), &HashSet::from([2])).unwrap();
    assert_eq!(skip.len(), 1);
    assert!(matches!(
        rank_candidates(&regions, Cell::new(2, 0), &g, &cfg(1.0, 0.0, 0.4, 0.6), &HashSet::from([1, 2])),
        Err(PlannerError::NoCandidates)
    ));
}

#[test]
fn weights_must_sum_to_one() {
    assert!(matches!(cfg(1.0, 0.0, 0.5, 0.6).validate(), Err(PlannerError::Config(_))));
    assert!(matches!(cfg(1.0, 0.0, -0.2, 1.2).validate(), Err(PlannerError::Config(_))));
    assert!(matches!(cfg(0.0, 0.0, 0.5, 0.5).validate(), Err(PlannerError::Config(_))));
    let g = OccupancyGrid::free(4, 4, 0.5, 0.0, 0.0);
    assert!(project_likelihood(&[], &g, &cfg(1.0, 0.0, 0.5, 0.6)).is_err());
}

#[test]
fn astar_basics() {
    let g = OccupancyGrid::free(10, 10, 0.25, 0.0, 0.0);
    let a = Cell::new(3, 3);
    assert_eq!(astar_distance(&g, a, a).unwrap(), (0.0, vec![a]));
    let (d, path) = astar_distance(&g, Cell::new(0, 0), Cell::new(9, 9)).unwrap();
    assert!((d - 9.0 * 0.25 * std::f64::consts::SQRT_2).abs() < 1e-12);
    assert_eq!(path.len(), 10);

    let mut walled = g.clone();
    for row in 0..10 {
        walled.set_blocked(Cell::new(5, row));
    }
    assert!(matches!(
        astar_distance(&walled, Cell::new(0, 0), Cell::new(9, 9)),
        Err(PlannerError::Unreachable { .. })
    ));
}

/// Plain label-correcting shortest paths with the move rules restated here:
/// 8-connected, diagonals may not cut a blocked corner.
fn oracle_distances(g: &OccupancyGrid, from: Cell) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; g.len()];
    if g.is_blocked(from) {
        return d;
    }
    d[g.index(from)] = 0.0;
    let free = |c: isize, r: isize| {
        c >= 0 && r >= 0 && (c as usize) < g.width && (r as usize) < g.height && g.is_free(Cell::new(c as usize, r as usize))
    };
    loop {
        let mut changed = false;
        for i in 0..g.len() {
            if !d[i].is_finite() {
                continue;
            }
            let c = g.cell_at(i);
            let (col, row) = (c.col as isize, c.row as isize);
            for dc in -1..=1isize {
                for dr in -1..=1isize {
                    if (dc, dr) == (0, 0) || !free(col + dc, row + dr) {
                        continue;
                    }
                    if dc != 0 && dr != 0 && (!free(col + dc, row) || !free(col, row + dr)) {
                        continue;
                    }
                    let len = if dc != 0 && dr != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    let j = g.index(Cell::new((col + dc) as usize, (row + dr) as usize));
                    let nd = d[i] + len * g.resolution;
                    if nd < d[j] - 1e-12 {
                        d[j] = nd;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

#[test]
fn astar_matches_exhaustive_search_on_golden_maps() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenes");
    for name in ["kitchen_small.json", "two_room_flat.json"] {
        let g = rasterize_occupancy(&load_scene(root.join(name)).unwrap(), 0.25).unwrap();
        let free: Vec<Cell> = g.free_cells().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = free[rng.gen_range(0..free.len())];
            let b = free[rng.gen_range(0..free.len())];
            let want = oracle_distances(&g, a)[g.index(b)];
            let dj = dijkstra(&g, a)[g.index(b)];
            assert!((dj - want).abs() < 1e-9 || (dj.is_infinite() && want.is_infinite()));
            match astar_distance(&g, a, b) {
                Ok((d, path)) => {
                    assert!((d - want).abs() < 1e-9, "{name} {a:?} -> {b:?}: {d} vs {want}");
                    assert_eq!(path.first(), Some(&a));
                    assert_eq!(path.last(), Some(&b));
                    let walked: f64 = path.windows(2).map(|w| step_len(&g, w[0], w[1])).sum();
                    assert!((walked - d).abs() < 1e-9);
                }
                Err(_) => assert!(want.is_infinite()),
            }
        }
    }
}

fn step_len(g: &OccupancyGrid, a: Cell, b: Cell) -> f64 {
    let (dx, dy) = (a.col.abs_diff(b.col), a.row.abs_diff(b.row));
    assert!(dx <= 1 && dy <= 1 && dx + dy > 0);
    g.resolution * if dx + dy == 2 { std::f64::consts::SQRT_2 } else { 1.0 }
}

fn objects() -> impl Strategy<Value = Vec<((f64, f64), f64)>> {
    proptest::collection::vec(((0.0f64..5.0, 0.0f64..5.0), 0.0f64..1.0), 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_stays_in_unit_range(objs in objects(), r in 0.2f64..2.0, w in 0.0f64..0.3) {
        let g = OccupancyGrid::free(20, 20, 0.25, 0.0, 0.0);
        let m = project_likelihood(&objs, &g, &cfg(r, w, 0.5, 0.5)).unwrap();
        prop_assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn award_is_monotone(objs in objects(), w in 0.0f64..0.2, extra in 0.0f64..0.2) {
        let g = OccupancyGrid::free(20, 20, 0.25, 0.0, 0.0);
        let lo = project_likelihood(&objs, &g, &cfg(1.0, w, 0.5, 0.5)).unwrap();
        let hi = project_likelihood(&objs, &g, &cfg(1.0, w + extra, 0.5, 0.5)).unwrap();
        for (a, b) in lo.values.iter().zip(&hi.values) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn regions_partition_the_map(objs in objects(), r in 0.2f64..1.5, cols in 3usize..25, rows in 3usize..25) {
        let g = OccupancyGrid::free(cols, rows, 0.25, 0.0, 0.0);
        let m = project_likelihood(&objs, &g, &cfg(r, 0.05, 0.5, 0.5)).unwrap();
        let regions = partition_regions(&m, &g, &cfg(r, 0.05, 0.5, 0.5)).unwrap();
        let sum: f64 = regions.iter().map(|r| r.weight).sum();
        prop_assert!((sum - m.total()).abs() < 1e-9);
        for c in g.cells() {
            prop_assert_eq!(regions.iter().filter(|r| r.contains(c)).count(), 1);
        }
    }

    #[test]
    fn costs_are_bounded(objs in objects(), alpha in 0.0f64..1.0, rc in 0usize..20, rr in 0usize..20) {
        let g = OccupancyGrid::free(20, 20, 0.25, 0.0, 0.0);
        let c = cfg(1.0, 0.05, alpha, 1.0 - alpha);
        let m = project_likelihood(&objs, &g, &c).unwrap();
        let regions = partition_regions(&m, &g, &c).unwrap();
        match rank_candidates(&regions, Cell::new(rc, rr), &g, &c, &HashSet::new()) {
            Ok(ranked) => {
                for w in ranked.windows(2) {
                    prop_assert!(w[0].cost <= w[1].cost);
                }
                for k in &ranked {
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&k.cost));
                }
            }
            Err(e) => prop_assert!(matches!(e, PlannerError::NoCandidates)),
        }
    }
}
