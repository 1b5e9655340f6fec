use std::collections::HashSet;
use std::path::PathBuf;

use csg_core::knowledge::Provider;
use csg_core::model::{CsgTl, ModelConfig};
use csg_core::scene::{load_scene, rasterize_occupancy, Cell, Extent, Mobility, OccupancyGrid, Pose2H, Scene, SceneObject, Wall};
use csg_core::sim::{
    detect, metrics, plan_episodes, run_episode, step, Action, DetectorConfig, EpisodeConfig, EpisodeResult, EpisodeSpec,
    Policy, RobotState, SimError, Termination, MIN_START_DISTANCE,
};
use proptest::prelude::*;

fn obj(id: &str, cat: &str, mobility: Mobility, x: f64, y: f64) -> SceneObject {
    SceneObject {
        id: id.into(),
        category: cat.into(),
        mobility,
        pose: Pose2H::new(x, y, 0.4),
        footprint_radius: 0.2,
    }
}

fn room(objects: Vec<SceneObject>, walls: Vec<Wall>) -> Scene {
    Scene {
        objects,
        receptacles: vec![],
        extent: Extent::new(0.0, 0.0, 4.0, 4.0),
        walls,
        resolution_hint: 0.25,
    }
}

fn kitchen() -> Scene {
    load_scene(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenes/kitchen_small.json")).unwrap()
}

#[test]
fn move_ahead_along_heading_zero() {
    let g = OccupancyGrid::free(8, 8, 0.25, 0.0, 0.0);
    let s = RobotState::new(Cell::new(2, 2), 0);
    let out = step(s, Action::MoveAhead, &g);
    let (x0, y0) = s.position(&g);
    let (x1, y1) = out.state.position(&g);
    assert!((x1 - x0 - 0.25).abs() < 1e-12);
    assert_eq!(y1, y0);
    assert_eq!(out.moved, 0.25);
    assert!(!out.collided);

    let diag = step(RobotState::new(Cell::new(2, 2), 45), Action::MoveAhead, &g);
    assert_eq!(diag.state.cell, Cell::new(3, 3));
    assert!((diag.moved - 0.25 * std::f64::consts::SQRT_2).abs() < 1e-12);
}

#[test]
fn eight_left_turns_come_full_circle() {
    let g = OccupancyGrid::free(4, 4, 0.25, 0.0, 0.0);
    for h in (0..360).step_by(45) {
        let start = RobotState::new(Cell::new(1, 1), h);
        let mut s = start;
        for _ in 0..8 {
            s = step(s, Action::RotateLeft, &g).state;
        }
        assert_eq!(s, start);
        assert_eq!(step(step(start, Action::RotateLeft, &g).state, Action::RotateRight, &g).state, start);
    }
    assert_eq!(step(RobotState::new(Cell::new(1, 1), 0), Action::RotateRight, &g).state.heading, 315);
}

#[test]
fn blocked_moves_are_no_ops() {
    let mut g = OccupancyGrid::free(4, 4, 0.25, 0.0, 0.0);
    g.set_blocked(Cell::new(2, 1));
    let s = RobotState::new(Cell::new(1, 1), 0);
    let out = step(s, Action::MoveAhead, &g);
    assert_eq!(out.state, s);
    assert!(out.collided);
    assert_eq!(out.moved, 0.0);
    // Off the edge of the map is a collision too.
    let edge = RobotState::new(Cell::new(0, 0), 180);
    assert_eq!(step(edge, Action::MoveAhead, &g).state, edge);
}

#[test]
fn detection_contract() {
    let cup = obj("cup", "cup", Mobility::Movable, 2.125 + 0.5, 2.125);
    let s = room(vec![cup.clone()], vec![]);
    let g = rasterize_occupancy(&s, 0.25).unwrap();
    let cfg = DetectorConfig::default();
    let at = RobotState::new(g.cell_of(2.125, 2.125).unwrap(), 0);
    assert_eq!(detect(&at, &s, &g, &cfg).len(), 1);
    // Facing away.
    assert!(detect(&RobotState::new(at.cell, 180), &s, &g, &cfg).is_empty());
    // Range is exclusive.
    let edge = DetectorConfig { range: 0.5, ..cfg };
    assert!(detect(&at, &s, &g, &edge).is_empty());
    let past = DetectorConfig { range: 0.5 + 1e-9, ..cfg };
    assert_eq!(detect(&at, &s, &g, &past).len(), 1);

    // A wall between the robot and a cup 1 m ahead hides it.
    let far = obj("cup", "cup", Mobility::Movable, 3.125, 2.125);
    assert_eq!(detect(&at, &room(vec![far.clone()], vec![]), &g, &cfg).len(), 1);
    let walled = room(vec![far], vec![Wall::new(2.6, 1.0, 2.6, 3.0)]);
    let gw = rasterize_occupancy(&walled, 0.25).unwrap();
    assert!(detect(&at, &walled, &gw, &cfg).is_empty());
}

fn near_scene() -> Scene {
    room(
        vec![
            obj("table", "table", Mobility::Stationary, 3.0, 3.0),
            obj("cup", "cup", Mobility::Movable, 1.625, 1.125),
        ],
        vec![],
    )
}

fn untrained() -> CsgTl {
    CsgTl::init(ModelConfig::default(), 0).unwrap()
}

#[test]
fn target_in_reach_is_found_on_the_first_scan() {
    let s = near_scene();
    let g = rasterize_occupancy(&s, 0.25).unwrap();
    let spec = EpisodeSpec {
        target_id: "cup".into(),
        query: None,
        start: RobotState::new(g.cell_of(1.125, 1.125).unwrap(), 0),
    };
    let model = untrained();
    for policy in [Policy::CsgOs, Policy::Random] {
        let cfg = EpisodeConfig { policy, ..EpisodeConfig::default() };
        let ep = run_episode(&s, &spec, &cfg, Some(&model), &Provider::offline()).unwrap();
        assert!(ep.result.success);
        assert!(ep.result.actions_taken <= 8);
        assert_eq!(ep.result.termination, Termination::Success);
    }
}

#[test]
fn one_action_is_not_enough_for_a_far_target() {
    let s = near_scene();
    let g = rasterize_occupancy(&s, 0.25).unwrap();
    let spec = EpisodeSpec {
        target_id: "cup".into(),
        query: None,
        start: RobotState::new(g.cell_of(3.625, 0.375).unwrap(), 90),
    };
    let cfg = EpisodeConfig { max_steps: 1, ..EpisodeConfig::default() };
    let ep = run_episode(&s, &spec, &cfg, Some(&untrained()), &Provider::offline()).unwrap();
    assert!(!ep.result.success);
    assert_eq!(ep.result.termination, Termination::BudgetExhausted);
    assert!(ep.result.actions_taken <= 1);
}

#[test]
fn bad_inputs() {
    let s = near_scene();
    let g = rasterize_occupancy(&s, 0.25).unwrap();
    let start = RobotState::new(g.cell_of(0.375, 0.375).unwrap(), 0);
    let p = Provider::offline();
    let spec = |id: &str| EpisodeSpec { target_id: id.into(), query: None, start };
    assert!(matches!(
        run_episode(&s, &spec("ghost"), &EpisodeConfig::default(), Some(&untrained()), &p),
        Err(SimError::UnknownTarget(_))
    ));
    assert!(matches!(
        run_episode(&s, &spec("cup"), &EpisodeConfig::default(), None, &p),
        Err(SimError::Config(_))
    ));
    let blocked = EpisodeSpec {
        start: RobotState::new(g.cell_of(3.0, 3.0).unwrap(), 0),
        ..spec("cup")
    };
    assert!(matches!(
        run_episode(&s, &blocked, &EpisodeConfig::default(), Some(&untrained()), &p),
        Err(SimError::BlockedStart { .. })
    ));
}

fn result(success: bool, path: f64, shortest: f64) -> EpisodeResult {
    EpisodeResult {
        success,
        actions_taken: 10,
        path_length: path,
        shortest_length: shortest,
        termination: if success { Termination::Success } else { Termination::BudgetExhausted },
    }
}

#[test]
fn metric_examples() {
    let m = metrics(&[result(true, 10.0, 5.0), result(false, 3.0, 2.0)]).unwrap();
    assert_eq!((m.sr, m.spl), (0.5, 0.25));
    let none = metrics(&[result(false, 1.0, 1.0), result(false, 2.0, 1.0)]).unwrap();
    assert_eq!((none.sr, none.spl), (0.0, 0.0));
    assert_eq!(metrics(&[result(true, 4.0, 4.0)]).unwrap().spl, 1.0);
    assert!(matches!(metrics(&[]), Err(SimError::EmptyResults)));
}

#[test]
fn kitchen_episodes_are_reproducible_and_consistent() {
    let s = kitchen();
    let model = untrained();
    let p = Provider::offline();
    let planned = plan_episodes(
        std::slice::from_ref(&s),
        6,
        7,
        0.25,
        &DetectorConfig::default(),
        MIN_START_DISTANCE,
    )
    .unwrap();
    for pe in &planned {
        for policy in [Policy::CsgOs, Policy::Random] {
            let cfg = EpisodeConfig { seed: pe.seed, policy, ..EpisodeConfig::default() };
            let a = run_episode(&s, &pe.spec, &cfg, Some(&model), &p).unwrap();
            let b = run_episode(&s, &pe.spec, &cfg, Some(&model), &p).unwrap();
            assert_eq!(a.trace_jsonl(), b.trace_jsonl());
            assert_eq!(a.result, b.result);

            // Path length is the sum of the distances actually moved.
            let mut walked = 0.0;
            for w in a.trace.windows(2) {
                let (p0, p1) = (&w[0].pose, &w[1].pose);
                walked += (p1.x - p0.x).hypot(p1.y - p0.y);
            }
            assert!((walked - a.result.path_length).abs() < 1e-9);
            assert_eq!(a.trace.iter().filter(|r| r.action.is_some()).count(), a.result.actions_taken);
            assert!(a.result.actions_taken <= cfg.max_steps);

            let mut seen = HashSet::new();
            for e in a.trace.iter().filter_map(|r| r.planner_event.as_ref()) {
                if let Some(region) = e.region {
                    assert!(seen.insert(region), "region {region} targeted twice");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spl_never_exceeds_sr(rs in proptest::collection::vec((any::<bool>(), 0.0f64..20.0, 0.0f64..20.0), 1..20)) {
        let results: Vec<EpisodeResult> = rs.iter().map(|&(s, p, d)| result(s, p, d)).collect();
        let m = metrics(&results).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.spl));
        prop_assert!(m.spl <= m.sr + 1e-12);
    }

    #[test]
    fn moves_stay_on_free_cells(actions in proptest::collection::vec(0u8..3, 0..60), heading in 0u16..8) {
        let s = kitchen();
        let g = rasterize_occupancy(&s, 0.25).unwrap();
        let mut st = RobotState::new(g.cell_of(2.5, 1.125).unwrap(), heading * 45);
        prop_assert!(g.is_free(st.cell));
        for a in actions {
            let a = [Action::MoveAhead, Action::RotateLeft, Action::RotateRight][a as usize];
            st = step(st, a, &g).state;
            prop_assert!(g.is_free(st.cell));
            prop_assert_eq!(st.heading % 45, 0);
        }
    }
}

#[test]
fn kitchen_small_seed_7_matches_the_golden_trace() {
    let s = kitchen();
    let (model, _) = csg_core::model::bundled_model().unwrap();
    let plan = plan_episodes(std::slice::from_ref(&s), 1, 7, 0.25, &DetectorConfig::default(), MIN_START_DISTANCE).unwrap();
    let cfg = EpisodeConfig { seed: plan[0].seed, ..EpisodeConfig::default() };
    let ep = run_episode(&s, &plan[0].spec, &cfg, Some(&model), &Provider::offline()).unwrap();
    let golden = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/golden/kitchen_small_seed7.trace.jsonl"),
    )
    .unwrap();
    assert_eq!(ep.trace_jsonl(), golden);
    assert!(ep.result.success);
}
