//! Grid-world search episodes: kinematics, an oracle detector, the
//! localize/rank/navigate/scan loop, a random-goal baseline, and SR/SPL.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csg::{attach_target, build_csg, update_csg, Csg, CsgError};
use crate::knowledge::{Provider, TargetQuery};
use crate::model::{graph_input, CsgTl, ModelError};
use crate::planner::{
    astar_distance, dijkstra, partition_regions, project_likelihood, rank_candidates, select_correlated, LikelihoodMap,
    PlannerConfig, PlannerError, Region,
};
use crate::scene::{rasterize_occupancy, Cell, OccupancyGrid, Scene, SceneError, SceneObject};
use crate::{defaults, Exec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Csg(#[from] CsgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("unknown target object {0:?}")]
    UnknownTarget(String),
    #[error("start position ({x}, {y}) is not on a free cell")]
    BlockedStart { x: f64, y: f64 },
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error("no episode results to aggregate")]
    EmptyResults,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
}

/// Robot pose snapped to a cell centre. Heading is in degrees,
/// counter-clockwise from +x, always a multiple of 45.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotState {
    pub cell: Cell,
    pub heading: u16,
}

impl RobotState {
    pub fn new(cell: Cell, heading: u16) -> Self {
        Self {
            cell,
            heading: heading % 360,
        }
    }

    pub fn position(&self, grid: &OccupancyGrid) -> (f64, f64) {
        grid.center(self.cell)
    }
}

const TURN: u16 = defaults::TURN_DEGREES as u16;

fn heading_step(heading: u16) -> (isize, isize) {
    match heading % 360 {
        0 => (1, 0),
        45 => (1, 1),
        90 => (0, 1),
        135 => (-1, 1),
        180 => (-1, 0),
        225 => (-1, -1),
        270 => (0, -1),
        315 => (1, -1),
        h => panic!("heading {h} is not a multiple of 45"),
    }
}

fn heading_of(dc: isize, dr: isize) -> u16 {
    let deg = (dr as f64).atan2(dc as f64).to_degrees();
    (deg.round() as i32).rem_euclid(360) as u16
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: RobotState,
    /// Meters travelled: one cell side, or its diagonal, or zero.
    pub moved: f64,
    pub collided: bool,
}

/// Applies one primitive action. MoveAhead advances one cell along the
/// heading (diagonally for odd multiples of 45) when the destination is free
/// and no blocked corner is cut; otherwise the robot stays put.
pub fn step(state: RobotState, action: Action, grid: &OccupancyGrid) -> StepOutcome {
    match action {
        Action::RotateLeft => StepOutcome {
            state: RobotState::new(state.cell, state.heading + TURN),
            moved: 0.0,
            collided: false,
        },
        Action::RotateRight => StepOutcome {
            state: RobotState::new(state.cell, state.heading + 360 - TURN),
            moved: 0.0,
            collided: false,
        },
        Action::MoveAhead => {
            let (dc, dr) = heading_step(state.heading);
            match grid.step_target(state.cell, dc, dr) {
                Some((cell, len)) => StepOutcome {
                    state: RobotState::new(cell, state.heading),
                    moved: len * grid.resolution,
                    collided: false,
                },
                None => StepOutcome {
                    state,
                    moved: 0.0,
                    collided: true,
                },
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub fov_degrees: f64,
    pub range: f64,
    pub success_radius: f64,
    /// Probability of independently missing each visible object.
    pub dropout: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            fov_degrees: defaults::FOV_DEGREES,
            range: defaults::DETECT_RANGE,
            success_radius: defaults::SUCCESS_RADIUS,
            dropout: 0.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.fov_degrees > 0.0 && self.fov_degrees <= 360.0) {
            return Err(SimError::Config(format!("fov {} outside (0, 360]", self.fov_degrees)));
        }
        if !(self.range > 0.0 && self.success_radius > 0.0) {
            return Err(SimError::Config("range and success radius must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SimError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Whether `obj` can be seen from `from` ignoring the field of view: the
/// sight line may pass through the object's own footprint and those of the
/// objects holding it, but through no other blocked cell.
pub fn line_of_sight_to(scene: &Scene, grid: &OccupancyGrid, from: (f64, f64), obj: &SceneObject) -> bool {
    let (ox, oy) = obj.pose.xy();
    let holders: Vec<&SceneObject> = scene.holders_of(&obj.id).filter_map(|h| scene.object(h)).collect();
    grid.line_of_sight(from, (ox, oy), |c| {
        grid.disc_overlaps(c, ox, oy, obj.footprint_radius)
            || holders
                .iter()
                .any(|h| grid.disc_overlaps(c, h.pose.x, h.pose.y, h.footprint_radius))
    })
}

fn in_view(state: &RobotState, from: (f64, f64), to: (f64, f64), cfg: &DetectorConfig) -> bool {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let d = dx.hypot(dy);
    if d >= cfg.range {
        return false;
    }
    if d < 1e-12 {
        return true;
    }
    let bearing = dy.atan2(dx).to_degrees();
    let diff = (bearing - state.heading as f64 + 540.0).rem_euclid(360.0) - 180.0;
    diff.abs() <= cfg.fov_degrees / 2.0 + 1e-9
}

/// Objects whose centre lies strictly within range, inside the field of
/// view and in line of sight, in scene order.
pub fn detect<'a>(state: &RobotState, scene: &'a Scene, grid: &OccupancyGrid, cfg: &DetectorConfig) -> Vec<&'a SceneObject> {
    let from = state.position(grid);
    scene
        .objects
        .iter()
        .filter(|o| in_view(state, from, o.pose.xy(), cfg) && line_of_sight_to(scene, grid, from, o))
        .collect()
}

/// Cells from which the target is within the success radius and in line of
/// sight, indexed like the grid.
pub fn success_cells(scene: &Scene, grid: &OccupancyGrid, target: &SceneObject, cfg: &DetectorConfig) -> Vec<bool> {
    let (tx, ty) = target.pose.xy();
    grid.cells()
        .map(|c| {
            let p = grid.center(c);
            grid.is_free(c) && (p.0 - tx).hypot(p.1 - ty) <= cfg.success_radius && line_of_sight_to(scene, grid, p, target)
        })
        .collect()
}

/// Length of the shortest path from `start` to any success cell.
pub fn shortest_length(grid: &OccupancyGrid, start: Cell, success: &[bool]) -> f64 {
    let dist = dijkstra(grid, start);
    dist.iter()
        .zip(success)
        .filter(|(_, &s)| s)
        .map(|(&d, _)| d)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Likelihood-driven candidate ranking.
    #[default]
    CsgOs,
    /// Uniformly random reachable goal cells.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub detector: DetectorConfig,
    pub planner: PlannerConfig,
    pub d_thre: f64,
    pub resolution: f64,
    pub seed: u64,
    pub policy: Policy,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: defaults::MAX_STEPS,
            detector: DetectorConfig::default(),
            planner: PlannerConfig::default(),
            d_thre: defaults::D_THRE,
            resolution: defaults::GRID_RESOLUTION,
            seed: defaults::SEED,
            policy: Policy::CsgOs,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_steps == 0 {
            return Err(SimError::Config("max_steps must be at least 1".into()));
        }
        self.detector.validate()?;
        self.planner.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub target_id: String,
    /// Query used for the target node; defaults to the target's category.
    pub query: Option<TargetQuery>,
    pub start: RobotState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Success,
    BudgetExhausted,
    PlanningFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub actions_taken: usize,
    pub path_length: f64,
    pub shortest_length: f64,
    pub termination: Termination,
}

impl EpisodeResult {
    pub fn spl_term(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let denom = self.path_length.max(self.shortest_length);
        if denom <= 0.0 {
            1.0
        } else {
            self.shortest_length / denom
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerEvent {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<usize>,
    pub goal: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    pub candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePose {
    pub x: f64,
    pub y: f64,
    pub heading: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    /// `None` for the initial observation before any action.
    pub action: Option<Action>,
    pub pose: TracePose,
    pub detections: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planner_event: Option<PlannerEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub result: EpisodeResult,
    pub trace: Vec<TraceRecord>,
}

impl Episode {
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("trace serializes"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flow {
    Continue,
    /// The target came into view while searching.
    Seen,
    Stop,
}

struct Runner<'a> {
    scene: &'a Scene,
    grid: &'a OccupancyGrid,
    cfg: &'a EpisodeConfig,
    target: &'a SceneObject,
    state: RobotState,
    actions: usize,
    path_length: f64,
    trace: Vec<TraceRecord>,
    rng: ChaCha8Rng,
    seen: bool,
    success: bool,
    event: Option<PlannerEvent>,
    observed: Vec<SceneObject>,
}

impl<'a> Runner<'a> {
    fn observe(&mut self, action: Option<Action>) -> Flow {
        let mut seen_now = Vec::new();
        for o in detect(&self.state, self.scene, self.grid, &self.cfg.detector) {
            if self.cfg.detector.dropout > 0.0 && self.rng.gen::<f64>() < self.cfg.detector.dropout {
                continue;
            }
            seen_now.push(o);
        }
        let pos = self.state.position(self.grid);
        let mut newly_seen = false;
        for o in &seen_now {
            if o.id == self.target.id {
                newly_seen = !self.seen;
                self.seen = true;
                let (tx, ty) = o.pose.xy();
                if (pos.0 - tx).hypot(pos.1 - ty) <= self.cfg.detector.success_radius {
                    self.success = true;
                }
            }
        }
        self.trace.push(TraceRecord {
            step: self.actions,
            action,
            pose: TracePose {
                x: pos.0,
                y: pos.1,
                heading: self.state.heading,
            },
            detections: seen_now.iter().map(|o| o.id.clone()).collect(),
            planner_event: self.event.take(),
        });
        self.observed.extend(seen_now.into_iter().cloned());
        if self.success || self.actions >= self.cfg.max_steps {
            Flow::Stop
        } else if newly_seen {
            Flow::Seen
        } else {
            Flow::Continue
        }
    }

    fn act(&mut self, action: Action) -> Flow {
        let out = step(self.state, action, self.grid);
        self.state = out.state;
        self.actions += 1;
        self.path_length += out.moved;
        self.observe(Some(action))
    }

    fn face(&mut self, heading: u16) -> Flow {
        let diff = (heading + 360 - self.state.heading) % 360;
        let (action, turns) = if diff <= 180 {
            (Action::RotateLeft, diff / TURN)
        } else {
            (Action::RotateRight, (360 - diff) / TURN)
        };
        for _ in 0..turns {
            let f = self.act(action);
            if f != Flow::Continue {
                return f;
            }
        }
        Flow::Continue
    }

    /// Follows a cell path (first cell = current cell).
    fn follow(&mut self, path: &[Cell]) -> Flow {
        for pair in path.windows(2) {
            let dc = pair[1].col as isize - pair[0].col as isize;
            let dr = pair[1].row as isize - pair[0].row as isize;
            let f = self.face(heading_of(dc, dr));
            if f != Flow::Continue {
                return f;
            }
            let f = self.act(Action::MoveAhead);
            if f != Flow::Continue {
                return f;
            }
        }
        Flow::Continue
    }

    fn scan(&mut self) -> Flow {
        for _ in 0..(360 / TURN - 1) {
            let f = self.act(Action::RotateLeft);
            if f != Flow::Continue {
                return f;
            }
        }
        Flow::Continue
    }

    /// Drives to the closest success cell and turns towards the target.
    fn approach(&mut self) -> Result<Termination, SimError> {
        let success = success_cells(self.scene, self.grid, self.target, &self.cfg.detector);
        let dist = dijkstra(self.grid, self.state.cell);
        let goal = dist
            .iter()
            .enumerate()
            .filter(|&(i, d)| success[i] && d.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| self.grid.cell_at(i));
        let Some(goal) = goal else {
            return Ok(Termination::PlanningFailed);
        };
        let (_, path) = astar_distance(self.grid, self.state.cell, goal)?;
        self.event = Some(PlannerEvent {
            kind: "approach".into(),
            region: None,
            goal: self.grid.center(goal).into(),
            weight: None,
            cost: None,
            candidates: 0,
        });
        let mut flow = self.follow(&path);
        if flow == Flow::Seen {
            flow = Flow::Continue;
        }
        if flow == Flow::Continue {
            let (x, y) = self.state.position(self.grid);
            let (tx, ty) = self.target.pose.xy();
            let bearing = (ty - y).atan2(tx - x).to_degrees();
            let snapped = ((bearing / TURN as f64).round() as i32 * TURN as i32).rem_euclid(360) as u16;
            flow = self.face(snapped);
        }
        if flow == Flow::Continue {
            flow = self.scan();
        }
        Ok(self.termination(flow))
    }

    fn termination(&self, flow: Flow) -> Termination {
        if self.success {
            Termination::Success
        } else if flow == Flow::Stop {
            Termination::BudgetExhausted
        } else {
            Termination::PlanningFailed
        }
    }
}

struct Search<'a> {
    provider: &'a Provider,
    model: Option<&'a CsgTl>,
    graph: Csg,
    visited: HashSet<usize>,
}

/// Link probabilities of a target-bearing graph turned into a likelihood
/// map and its candidate regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    /// `(position, probability)` of every located node scored by the model.
    pub scored: Vec<((f64, f64), f64)>,
    pub map: LikelihoodMap,
    pub regions: Vec<Region>,
}

pub fn localize(graph: &Csg, model: &CsgTl, grid: &OccupancyGrid, pcfg: &PlannerConfig) -> Result<Localization, SimError> {
    let input = graph_input(graph)?;
    let probs = model.predict(&input)?;
    let scored: Vec<((f64, f64), f64)> = input
        .predict
        .iter()
        .zip(&probs)
        .filter_map(|(&i, &p)| graph.nodes[i].pose.map(|pose| (pose.xy(), p)))
        .collect();
    let correlated = select_correlated(&scored, pcfg);
    let map = project_likelihood(&correlated, grid, pcfg)?;
    let regions = partition_regions(&map, grid, pcfg)?;
    Ok(Localization { scored, map, regions })
}

impl Search<'_> {
    /// Next goal of the likelihood-driven policy, or `None` when every
    /// region has been visited.
    fn next_goal(&mut self, run: &mut Runner) -> Result<Option<Cell>, SimError> {
        let fresh = std::mem::take(&mut run.observed);
        self.graph = update_csg(&self.graph, &fresh, &run.scene.receptacles, self.provider, run.cfg.d_thre)?;
        let model = self.model.expect("likelihood policy has a model");
        let pcfg = &run.cfg.planner;
        let Localization { regions, .. } = localize(&self.graph, model, run.grid, pcfg)?;
        match rank_candidates(&regions, run.state.cell, run.grid, pcfg, &self.visited) {
            Ok(ranked) => {
                let top = &ranked[0];
                self.visited.insert(top.region);
                run.event = Some(PlannerEvent {
                    kind: "rank".into(),
                    region: Some(top.region),
                    goal: top.center_xy.into(),
                    weight: Some(top.weight),
                    cost: Some(top.cost),
                    candidates: ranked.len(),
                });
                Ok(Some(top.center))
            }
            Err(PlannerError::NoCandidates) => {
                // Nothing promising left: sweep the nearest unvisited region.
                let dist = dijkstra(run.grid, run.state.cell);
                let pick = regions
                    .iter()
                    .filter(|r| !self.visited.contains(&r.id))
                    .filter_map(|r| r.center.map(|c| (r.id, c, dist[run.grid.index(c)])))
                    .filter(|t| t.2.is_finite())
                    .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
                Ok(pick.map(|(id, c, _)| {
                    self.visited.insert(id);
                    run.event = Some(PlannerEvent {
                        kind: "explore".into(),
                        region: Some(id),
                        goal: run.grid.center(c).into(),
                        weight: None,
                        cost: None,
                        candidates: 0,
                    });
                    c
                }))
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn random_goal(run: &mut Runner, reachable: &[bool]) -> Option<Cell> {
    let options: Vec<usize> = reachable
        .iter()
        .enumerate()
        .filter(|&(i, &r)| r && i != run.grid.index(run.state.cell))
        .map(|(i, _)| i)
        .collect();
    let &i = options.choose(&mut run.rng)?;
    let c = run.grid.cell_at(i);
    run.event = Some(PlannerEvent {
        kind: "random".into(),
        region: None,
        goal: run.grid.center(c).into(),
        weight: None,
        cost: None,
        candidates: options.len(),
    });
    Some(c)
}

/// Runs one search episode. `model` is required for [`Policy::CsgOs`] and
/// ignored by [`Policy::Random`].
pub fn run_episode(
    scene: &Scene,
    spec: &EpisodeSpec,
    cfg: &EpisodeConfig,
    model: Option<&CsgTl>,
    provider: &Provider,
) -> Result<Episode, SimError> {
    cfg.validate()?;
    let target = scene
        .object(&spec.target_id)
        .ok_or_else(|| SimError::UnknownTarget(spec.target_id.clone()))?;
    let grid = rasterize_occupancy(scene, cfg.resolution)?;
    if !grid.contains(spec.start.cell.col as isize, spec.start.cell.row as isize) || grid.is_blocked(spec.start.cell) {
        let (x, y) = grid.center(spec.start.cell);
        return Err(SimError::BlockedStart { x, y });
    }
    if cfg.policy == Policy::CsgOs && model.is_none() {
        return Err(SimError::Config("the csg-os policy needs a model".into()));
    }
    let success = success_cells(scene, &grid, target, &cfg.detector);
    let shortest = shortest_length(&grid, spec.start.cell, &success);

    let mut run = Runner {
        scene,
        grid: &grid,
        cfg,
        target,
        state: RobotState::new(spec.start.cell, spec.start.heading),
        actions: 0,
        path_length: 0.0,
        trace: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        seen: false,
        success: false,
        event: None,
        observed: Vec::new(),
    };

    let query = spec.query.clone().unwrap_or_else(|| TargetQuery::category(&target.category));
    let mut search = match cfg.policy {
        Policy::CsgOs => {
            let g = build_csg(scene, cfg.d_thre, provider)?;
            Some(Search {
                provider,
                model,
                graph: attach_target(&g, &query, provider)?,
                visited: HashSet::new(),
            })
        }
        Policy::Random => None,
    };
    let reachable = grid.reachable_from(spec.start.cell);

    let mut flow = run.observe(None);
    let termination = loop {
        if flow == Flow::Stop {
            break run.termination(flow);
        }
        if run.seen {
            break run.approach()?;
        }
        let goal = match search.as_mut() {
            Some(s) => s.next_goal(&mut run)?,
            None => random_goal(&mut run, &reachable),
        };
        let Some(goal) = goal else {
            break Termination::PlanningFailed;
        };
        let (_, path) = astar_distance(&grid, run.state.cell, goal)?;
        flow = run.follow(&path);
        if flow == Flow::Continue {
            flow = run.scan();
        }
    };

    Ok(Episode {
        result: EpisodeResult {
            success: termination == Termination::Success,
            actions_taken: run.actions,
            path_length: run.path_length,
            shortest_length: shortest,
            termination,
        },
        trace: run.trace,
    })
}

/// Picks a uniformly random free start cell that can reach a success cell
/// but is at least `min_distance` meters (2-D) from the target.
pub fn sample_start(
    scene: &Scene,
    grid: &OccupancyGrid,
    target: &SceneObject,
    detector: &DetectorConfig,
    min_distance: f64,
    rng: &mut impl Rng,
) -> Option<RobotState> {
    let success = success_cells(scene, grid, target, detector);
    let mut reach_goal = vec![false; grid.len()];
    for (i, _) in success.iter().enumerate().filter(|(_, &s)| s) {
        if !reach_goal[i] {
            for (j, r) in grid.reachable_from(grid.cell_at(i)).into_iter().enumerate() {
                reach_goal[j] |= r;
            }
        }
    }
    let (tx, ty) = target.pose.xy();
    let options: Vec<Cell> = grid
        .cells()
        .filter(|&c| {
            let (x, y) = grid.center(c);
            reach_goal[grid.index(c)] && (x - tx).hypot(y - ty) >= min_distance
        })
        .collect();
    let cell = *options.choose(rng)?;
    let heading = rng.gen_range(0..8u16) * TURN;
    Some(RobotState::new(cell, heading))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
}

pub fn metrics(results: &[EpisodeResult]) -> Result<Metrics, SimError> {
    if results.is_empty() {
        return Err(SimError::EmptyResults);
    }
    let n = results.len() as f64;
    let successes = results.iter().filter(|r| r.success).count() as f64;
    let spl: f64 = results.iter().map(EpisodeResult::spl_term).sum();
    Ok(Metrics {
        episodes: results.len(),
        sr: successes / n,
        spl: spl / n,
    })
}

/// Runs independent episodes, returning them in input order.
pub fn run_episodes(
    jobs: &[(&Scene, EpisodeSpec, EpisodeConfig)],
    model: Option<&CsgTl>,
    provider: &Provider,
    exec: Exec,
) -> Vec<Result<Episode, SimError>> {
    exec.map(jobs, |(scene, spec, cfg)| run_episode(scene, spec, cfg, model, provider))
}

/// Default lower bound on the start-to-target distance of sampled episodes.
pub const MIN_START_DISTANCE: f64 = 2.0;

/// One sampled episode: which scene, the target and start, and the seed for
/// the episode's own random stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedEpisode {
    pub scene: usize,
    pub spec: EpisodeSpec,
    pub seed: u64,
}

/// Samples `n` episodes, cycling through `scenes` in order. Each episode
/// draws a random movable target and a start at least `min_distance` meters
/// away from it; targets that admit no such start are skipped.
pub fn plan_episodes(
    scenes: &[Scene],
    n: usize,
    seed: u64,
    resolution: f64,
    detector: &DetectorConfig,
    min_distance: f64,
) -> Result<Vec<PlannedEpisode>, SimError> {
    if scenes.is_empty() && n > 0 {
        return Err(SimError::Config("no scenes to sample episodes from".into()));
    }
    let grids = scenes
        .iter()
        .map(|s| rasterize_occupancy(s, resolution))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % scenes.len();
        let scene = &scenes[k];
        let episode_seed = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0xe915_0de5);
        let mut targets: Vec<&SceneObject> = scene.movables().collect();
        targets.shuffle(&mut rng);
        let picked = targets
            .into_iter()
            .find_map(|t| sample_start(scene, &grids[k], t, detector, min_distance, &mut rng).map(|s| (t, s)));
        let Some((target, start)) = picked else {
            return Err(SimError::Config(format!(
                "scene #{k} has no movable target with a reachable start {min_distance} m away"
            )));
        };
        out.push(PlannedEpisode {
            scene: k,
            spec: EpisodeSpec {
                target_id: target.id.clone(),
                query: None,
                start,
            },
            seed: episode_seed,
        });
    }
    Ok(out)
}

/// Metrics per scene id, in order of first appearance.
pub fn per_scene_metrics(results: &[(String, EpisodeResult)]) -> Result<Vec<(String, Metrics)>, SimError> {
    let mut groups: Vec<(String, Vec<EpisodeResult>)> = Vec::new();
    for (id, r) in results {
        match groups.iter_mut().find(|g| &g.0 == id) {
            Some(g) => g.1.push(r.clone()),
            None => groups.push((id.clone(), vec![r.clone()])),
        }
    }
    groups.into_iter().map(|(id, rs)| Ok((id, metrics(&rs)?))).collect()
}
