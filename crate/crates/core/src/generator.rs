//! Procedural household scenes with known placement priors.
//!
//! A layout is one room or a row of rooms separated by walls with a door
//! gap. Furniture is placed by rejection sampling; each movable draws an
//! anchor category from its prior (adding an instance of it when the room
//! lacks one) and is put on, inside or near an instance of that category.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csg::ground_truth_links;
use crate::scene::{
    rasterize_occupancy, Extent, Mobility, OccupancyGrid, Pose2H, ReceptacleKind, ReceptacleRelation, Scene,
    SceneError, SceneObject, Wall,
};
use crate::Exec;

pub const GENERATOR_SCHEMA: &str = "csg-gen/1";
pub const MANIFEST_SCHEMA: &str = "csg-manifest/1";

/// Movable categories withheld from training in the transfer experiment.
pub const DEFAULT_HELD_OUT: [&str; 2] = ["mouse", "toothbrush"];

const BUNDLED: &str = include_str!("../data/generator_default.json");

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("could not place {category:?} after {tries} tries")]
    PlacementExhausted { category: String, tries: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryItem {
    pub category: String,
    pub radius: f64,
    /// Height of the top surface in meters; the centroid sits at half of it.
    pub height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorRelation {
    On,
    Inside,
    Near,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub category: String,
    pub prior: f64,
    pub relation: AnchorRelation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovableItem {
    pub category: String,
    pub radius: f64,
    pub anchors: Vec<AnchorPrior>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Anywhere in the room, clear of walls and other groups.
    Free {},
    /// `count` instances around every instance of `anchor`, at a centre
    /// distance in `[min, max]`.
    Near { anchor: String, min: f64, max: f64 },
    /// Sharing the footprint centre of successive `holder` instances.
    Held { holder: String, kind: ReceptacleKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub category: String,
    pub count: [usize; 2],
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomTemplate {
    pub name: String,
    pub width: [f64; 2],
    pub depth: [f64; 2],
    pub furniture: Vec<Slot>,
    pub movables: Vec<String>,
    pub movable_count: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub name: String,
    pub weight: f64,
    /// Room template names, laid out left to right.
    pub rooms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub schema: String,
    pub seed: u64,
    pub resolution: f64,
    pub d_thre: f64,
    pub near_radius: f64,
    /// Minimum gap between footprints of unrelated furniture groups.
    pub clearance: f64,
    pub wall_margin: f64,
    pub door_width: f64,
    pub max_tries: usize,
    pub stationary: Vec<StationaryItem>,
    pub movables: Vec<MovableItem>,
    pub rooms: Vec<RoomTemplate>,
    pub layouts: Vec<Layout>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::bundled()
    }
}

impl GeneratorConfig {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled generator config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, GeneratorError> {
        let cfg: GeneratorConfig = serde_json::from_str(text).map_err(|e| GeneratorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, GeneratorError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeneratorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Copy restricted to layouts made of a single room.
    pub fn single_room_only(&self) -> Self {
        let mut cfg = self.clone();
        cfg.layouts.retain(|l| l.rooms.len() == 1);
        cfg
    }

    pub fn stationary_item(&self, category: &str) -> Option<&StationaryItem> {
        self.stationary.iter().find(|s| s.category == category)
    }

    pub fn movable_item(&self, category: &str) -> Option<&MovableItem> {
        self.movables.iter().find(|m| m.category == category)
    }

    fn room(&self, name: &str) -> Option<&RoomTemplate> {
        self.rooms.iter().find(|r| r.name == name)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::Config(m));
        if self.schema != GENERATOR_SCHEMA {
            return bad(format!("unsupported schema {:?}, expected {GENERATOR_SCHEMA:?}", self.schema));
        }
        if !(self.resolution > 0.0 && self.d_thre > 0.0 && self.near_radius > 0.0) {
            return bad("resolution, d_thre and near_radius must be positive".into());
        }
        if self.clearance < 0.0 || self.wall_margin < 0.0 || self.door_width <= 0.0 || self.max_tries == 0 {
            return bad("clearance and wall_margin must be non-negative, door_width and max_tries positive".into());
        }
        for s in &self.stationary {
            if !(s.radius > 0.0 && s.height > 0.0) {
                return bad(format!("stationary {:?} needs positive radius and height", s.category));
            }
        }
        for m in &self.movables {
            if !(m.radius > 0.0) {
                return bad(format!("movable {:?} needs a positive radius", m.category));
            }
            if !m.anchors.iter().any(|a| a.prior > 0.0) || m.anchors.iter().any(|a| a.prior < 0.0) {
                return bad(format!("movable {:?} needs non-negative priors with one positive", m.category));
            }
            let total: f64 = m.anchors.iter().map(|a| a.prior).sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("priors of {:?} sum to {total}, not 1", m.category));
            }
            for a in &m.anchors {
                if self.stationary_item(&a.category).is_none() {
                    return bad(format!("anchor {:?} of {:?} is not a stationary category", a.category, m.category));
                }
            }
        }
        for r in &self.rooms {
            if !(r.width[0] > 0.0 && r.width[0] <= r.width[1] && r.depth[0] > 0.0 && r.depth[0] <= r.depth[1]) {
                return bad(format!("room {:?} has an invalid size range", r.name));
            }
            if r.movable_count[0] > r.movable_count[1] {
                return bad(format!("room {:?} has an invalid movable_count", r.name));
            }
            for s in &r.furniture {
                if self.stationary_item(&s.category).is_none() {
                    return bad(format!("room {:?} uses unknown stationary {:?}", r.name, s.category));
                }
                if s.count[0] > s.count[1] {
                    return bad(format!("room {:?} slot {:?} has an invalid count", r.name, s.category));
                }
            }
            for m in &r.movables {
                if self.movable_item(m).is_none() {
                    return bad(format!("room {:?} uses unknown movable {m:?}", r.name));
                }
            }
        }
        if !self.layouts.iter().any(|l| l.weight > 0.0) {
            return bad("no layout with positive weight".into());
        }
        for l in &self.layouts {
            if l.rooms.is_empty() || l.weight < 0.0 {
                return bad(format!("layout {:?} needs rooms and a non-negative weight", l.name));
            }
            for r in &l.rooms {
                if self.room(r).is_none() {
                    return bad(format!("layout {:?} uses unknown room {r:?}", l.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementEntry {
    pub movable: String,
    pub anchor: String,
    pub relation: AnchorRelation,
    /// Horizontal offset from the anchor centre.
    pub offset: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub layout: String,
    pub placements: Vec<PlacementEntry>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn count(rng: &mut ChaCha8Rng, range: [usize; 2]) -> usize {
    rng.gen_range(range[0]..=range[1])
}

struct Placed {
    object: SceneObject,
    group: usize,
    room: usize,
}

struct Builder<'a> {
    cfg: &'a GeneratorConfig,
    rng: &'a mut ChaCha8Rng,
    rooms: Vec<Extent>,
    placed: Vec<Placed>,
    receptacles: Vec<ReceptacleRelation>,
    next_group: usize,
    counters: BTreeMap<String, usize>,
}

impl Builder<'_> {
    fn fresh_id(&mut self, category: &str) -> String {
        let n = self.counters.entry(category.to_string()).or_insert(0);
        let id = format!("{}_{}", category.replace(' ', "_"), n);
        *n += 1;
        id
    }

    fn instances(&self, category: &str, room: Option<usize>) -> Vec<usize> {
        self.placed
            .iter()
            .enumerate()
            .filter(|(_, p)| p.object.category == category && p.object.is_stationary())
            .filter(|(_, p)| room.is_none_or(|r| p.room == r))
            .map(|(i, _)| i)
            .collect()
    }

    fn fits(&self, room: usize, x: f64, y: f64, r: f64, group: usize) -> bool {
        let e = &self.rooms[room];
        let m = self.cfg.wall_margin + r;
        if x < e.min_x + m || x > e.max_x - m || y < e.min_y + m || y > e.max_y - m {
            return false;
        }
        self.placed.iter().filter(|p| p.object.is_stationary()).all(|p| {
            let gap = if p.group == group { 0.0 } else { self.cfg.clearance };
            let d = (p.object.pose.x - x).hypot(p.object.pose.y - y);
            d >= p.object.footprint_radius + r + gap
        })
    }

    fn push_stationary(&mut self, item: &StationaryItem, room: usize, x: f64, y: f64, z: f64, group: usize) -> usize {
        let id = self.fresh_id(&item.category);
        self.placed.push(Placed {
            object: SceneObject {
                id,
                category: item.category.clone(),
                mobility: Mobility::Stationary,
                pose: Pose2H::new(x, y, z),
                footprint_radius: item.radius,
            },
            group,
            room,
        });
        self.placed.len() - 1
    }

    fn place_free(&mut self, item: &StationaryItem, room: usize) -> Result<usize, GeneratorError> {
        let e = self.rooms[room];
        let group = self.next_group;
        for _ in 0..self.cfg.max_tries {
            let x = uniform(self.rng, e.min_x, e.max_x);
            let y = uniform(self.rng, e.min_y, e.max_y);
            if self.fits(room, x, y, item.radius, group) {
                self.next_group += 1;
                return Ok(self.push_stationary(item, room, x, y, item.height / 2.0, group));
            }
        }
        Err(GeneratorError::PlacementExhausted {
            category: item.category.clone(),
            tries: self.cfg.max_tries,
        })
    }

    fn place_near(&mut self, item: &StationaryItem, room: usize, anchor: usize, min: f64, max: f64) -> Result<(), GeneratorError> {
        let (ax, ay, group) = {
            let p = &self.placed[anchor];
            (p.object.pose.x, p.object.pose.y, p.group)
        };
        for _ in 0..self.cfg.max_tries {
            let theta = uniform(self.rng, 0.0, std::f64::consts::TAU);
            let d = uniform(self.rng, min, max);
            let (x, y) = (ax + d * theta.cos(), ay + d * theta.sin());
            if self.fits(room, x, y, item.radius, group) {
                self.push_stationary(item, room, x, y, item.height / 2.0, group);
                return Ok(());
            }
        }
        Err(GeneratorError::PlacementExhausted {
            category: item.category.clone(),
            tries: self.cfg.max_tries,
        })
    }

    fn furnish(&mut self, room: usize, template: &RoomTemplate) -> Result<(), GeneratorError> {
        for slot in &template.furniture {
            let item = self.cfg.stationary_item(&slot.category).expect("validated").clone();
            match &slot.placement {
                Placement::Free {} => {
                    for _ in 0..count(self.rng, slot.count) {
                        self.place_free(&item, room)?;
                    }
                }
                Placement::Near { anchor, min, max } => {
                    for a in self.instances(anchor, Some(room)) {
                        for _ in 0..count(self.rng, slot.count) {
                            self.place_near(&item, room, a, *min, *max)?;
                        }
                    }
                }
                Placement::Held { holder, kind } => {
                    let holders = self.instances(holder, Some(room));
                    let n = count(self.rng, slot.count).min(holders.len());
                    for &h in &holders[..n] {
                        let (x, y, z, group, hid) = {
                            let p = &self.placed[h];
                            let top = p.object.pose.z * 2.0;
                            let z = match kind {
                                ReceptacleKind::On => top + item.height / 2.0,
                                ReceptacleKind::Inside => (top - item.height / 2.0).max(0.0),
                            };
                            (p.object.pose.x, p.object.pose.y, z, p.group, p.object.id.clone())
                        };
                        let i = self.push_stationary(&item, room, x, y, z, group);
                        self.receptacles.push(ReceptacleRelation {
                            holder: hid,
                            held: self.placed[i].object.id.clone(),
                            kind: *kind,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn choose_layout<'a>(cfg: &'a GeneratorConfig, rng: &mut ChaCha8Rng) -> &'a Layout {
    let total: f64 = cfg.layouts.iter().map(|l| l.weight).sum();
    let mut u = rng.gen::<f64>() * total;
    for l in &cfg.layouts {
        if u < l.weight {
            return l;
        }
        u -= l.weight;
    }
    cfg.layouts.iter().rev().find(|l| l.weight > 0.0).expect("validated")
}

fn sample_anchor<'a>(m: &'a MovableItem, rng: &mut ChaCha8Rng) -> &'a AnchorPrior {
    let mut u = rng.gen::<f64>();
    for a in &m.anchors {
        if u < a.prior {
            return a;
        }
        u -= a.prior;
    }
    m.anchors.iter().rev().find(|a| a.prior > 0.0).expect("validated")
}

/// Whole-scene restarts before giving up on an overcrowded draw.
const SCENE_ATTEMPTS: usize = 20;

/// Generates one scene. Identical `(cfg, seed)` always give identical output.
/// A draw whose furniture cannot be placed is restarted from the same random
/// stream, up to a fixed number of times.
pub fn generate_scene(cfg: &GeneratorConfig, seed: u64) -> Result<(Scene, PlacementRecord), GeneratorError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..SCENE_ATTEMPTS {
        match attempt_scene(cfg, &mut rng) {
            Err(e @ GeneratorError::PlacementExhausted { .. }) => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

fn attempt_scene(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<(Scene, PlacementRecord), GeneratorError> {
    let layout = choose_layout(cfg, rng).clone();
    let templates: Vec<&RoomTemplate> = layout.rooms.iter().map(|r| cfg.room(r).expect("validated")).collect();

    let depth = templates
        .iter()
        .map(|t| uniform(rng, t.depth[0], t.depth[1]))
        .fold(0.0, f64::max);
    let mut rooms = Vec::new();
    let mut walls = Vec::new();
    let mut x0 = 0.0;
    for (k, t) in templates.iter().enumerate() {
        let w = uniform(rng, t.width[0], t.width[1]);
        rooms.push(Extent::new(x0, 0.0, x0 + w, depth));
        x0 += w;
        if k + 1 < templates.len() {
            let half = cfg.door_width / 2.0;
            let centre = uniform(rng, half + 0.5, depth - half - 0.5);
            walls.push(Wall::new(x0, 0.0, x0, centre - half));
            walls.push(Wall::new(x0, centre + half, x0, depth));
        }
    }
    let extent = Extent::new(0.0, 0.0, x0, depth);

    let mut b = Builder {
        cfg,
        rng,
        rooms,
        placed: Vec::new(),
        receptacles: Vec::new(),
        next_group: 0,
        counters: BTreeMap::new(),
    };
    for (k, t) in templates.iter().enumerate() {
        b.furnish(k, t)?;
    }

    // Movable categories drawn per room without repetition.
    let mut chosen: Vec<(&MovableItem, usize)> = Vec::new();
    for (k, t) in templates.iter().enumerate() {
        let mut pool: Vec<&String> = t
            .movables
            .iter()
            .filter(|m| !chosen.iter().any(|(c, _)| &c.category == *m))
            .collect();
        pool.shuffle(b.rng);
        let n = count(b.rng, t.movable_count).min(pool.len());
        for m in pool.into_iter().take(n) {
            chosen.push((cfg.movable_item(m).expect("validated"), k));
        }
    }
    let mut anchors = Vec::with_capacity(chosen.len());
    for (m, room) in &chosen {
        let a = sample_anchor(m, b.rng);
        if b.instances(&a.category, None).is_empty() {
            let item = cfg.stationary_item(&a.category).expect("validated").clone();
            b.place_free(&item, *room)?;
        }
        anchors.push(a);
    }

    let stationary_scene = Scene {
        objects: b.placed.iter().map(|p| p.object.clone()).collect(),
        receptacles: b.receptacles.clone(),
        extent,
        walls: walls.clone(),
        resolution_hint: cfg.resolution,
    };
    let grid = rasterize_occupancy(&stationary_scene, cfg.resolution)?;

    let mut placements = Vec::new();
    let mut movables = Vec::new();
    for ((m, _), a) in chosen.iter().zip(&anchors) {
        let options = b.instances(&a.category, None);
        let anchor = b.placed[*options.choose(b.rng).expect("anchor exists")].object.clone();
        let (pose, offset) = match a.relation {
            AnchorRelation::On => (Pose2H::new(anchor.pose.x, anchor.pose.y, anchor.pose.z * 2.0), [0.0, 0.0]),
            AnchorRelation::Inside => (anchor.pose, [0.0, 0.0]),
            AnchorRelation::Near => {
                let (dx, dy) = place_near_movable(cfg, b.rng, &grid, &extent, &anchor, m)?;
                (Pose2H::new(anchor.pose.x + dx, anchor.pose.y + dy, anchor.pose.z), [dx, dy])
            }
        };
        let id = b.fresh_id(&m.category);
        if a.relation != AnchorRelation::Near {
            b.receptacles.push(ReceptacleRelation {
                holder: anchor.id.clone(),
                held: id.clone(),
                kind: if a.relation == AnchorRelation::On {
                    ReceptacleKind::On
                } else {
                    ReceptacleKind::Inside
                },
            });
        }
        placements.push(PlacementEntry {
            movable: id.clone(),
            anchor: anchor.id.clone(),
            relation: a.relation,
            offset,
        });
        movables.push(SceneObject {
            id,
            category: m.category.clone(),
            mobility: Mobility::Movable,
            pose,
            footprint_radius: m.radius,
        });
    }

    let mut objects = stationary_scene.objects;
    objects.extend(movables);
    let scene = Scene {
        objects,
        receptacles: b.receptacles,
        extent,
        walls,
        resolution_hint: cfg.resolution,
    };
    scene.validate()?;
    Ok((
        scene,
        PlacementRecord {
            layout: layout.name.clone(),
            placements,
        },
    ))
}

/// Uniform offset in the disc of radius `near_radius`, restricted to free
/// cells inside the extent.
fn place_near_movable(
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    grid: &OccupancyGrid,
    extent: &Extent,
    anchor: &SceneObject,
    m: &MovableItem,
) -> Result<(f64, f64), GeneratorError> {
    for _ in 0..cfg.max_tries {
        let d = cfg.near_radius * rng.gen::<f64>().sqrt();
        let theta = uniform(rng, 0.0, std::f64::consts::TAU);
        let (dx, dy) = (d * theta.cos(), d * theta.sin());
        let (x, y) = (anchor.pose.x + dx, anchor.pose.y + dy);
        if !extent.contains(x, y) {
            continue;
        }
        if grid.cell_of(x, y).is_some_and(|c| grid.is_free(c)) {
            return Ok((dx, dy));
        }
    }
    Err(GeneratorError::PlacementExhausted {
        category: m.category.clone(),
        tries: cfg.max_tries,
    })
}

/// Scenes for indices `0..n` with per-scene seeds `cfg.seed + index`.
pub fn generate_scenes(cfg: &GeneratorConfig, n: usize, exec: Exec) -> Result<Vec<(Scene, PlacementRecord)>, GeneratorError> {
    exec.map_range(n, |i| generate_scene(cfg, cfg.seed.wrapping_add(i as u64)))
        .into_iter()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Seeded shuffle of `0..n`; the first `round(n · train_fraction)` indices
/// (at least one, at most `n − 1`) go to training.
pub fn split_assignment(n: usize, train_fraction: f64, seed: u64) -> Result<Vec<Split>, GeneratorError> {
    if n < 2 {
        return Err(GeneratorError::Config(format!("need at least 2 scenes to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GeneratorError::Config(format!("split {train_fraction} outside (0, 1)")));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17_u64));
    let mut out = vec![Split::Test; n];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub seed: u64,
    pub split: Split,
    pub layout: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, GeneratorError> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| GeneratorError::Config(e.to_string()))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(GeneratorError::Config(format!("unsupported manifest schema {:?}", m.schema)));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, GeneratorError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeneratorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.scenes.iter().filter(move |e| e.split == which)
    }
}

/// Generates `n` scenes and their split in memory.
pub fn generate_split(
    cfg: &GeneratorConfig,
    n: usize,
    train_fraction: f64,
    exec: Exec,
) -> Result<(Vec<(Scene, PlacementRecord)>, Manifest), GeneratorError> {
    let splits = split_assignment(n, train_fraction, cfg.seed)?;
    let scenes = generate_scenes(cfg, n, exec)?;
    let entries = scenes
        .iter()
        .zip(splits)
        .enumerate()
        .map(|(i, ((_, rec), split))| ManifestEntry {
            path: format!("scenes/scene_{i:05}.json"),
            seed: cfg.seed.wrapping_add(i as u64),
            split,
            layout: rec.layout.clone(),
        })
        .collect();
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed: cfg.seed,
        train_fraction,
        scenes: entries,
    };
    Ok((scenes, manifest))
}

/// Writes `n` scene files, their placement records, the config used and
/// `manifest.json` under `out`.
pub fn generate_corpus(
    cfg: &GeneratorConfig,
    n: usize,
    train_fraction: f64,
    out: &Path,
    exec: Exec,
) -> Result<Manifest, GeneratorError> {
    let (scenes, manifest) = generate_split(cfg, n, train_fraction, exec)?;
    let write = |rel: &str, text: &str| {
        let path = out.join(rel);
        crate::io::write_atomic(&path, text.as_bytes()).map_err(|source| GeneratorError::Io { path, source })
    };
    for ((scene, rec), entry) in scenes.iter().zip(&manifest.scenes) {
        write(&entry.path, &scene.to_json())?;
        let rec_path = entry.path.replace(".json", ".placements.json");
        write(&rec_path, &(serde_json::to_string_pretty(rec).expect("record serializes") + "\n"))?;
    }
    write("generator.json", &cfg.to_json())?;
    write("manifest.json", &manifest.to_json())?;
    Ok(manifest)
}

/// Loads every scene listed in a manifest, relative to `root`.
pub fn load_corpus(root: &Path, manifest: &Manifest) -> Result<Vec<(ManifestEntry, Scene)>, GeneratorError> {
    manifest
        .scenes
        .iter()
        .map(|e| Ok((e.clone(), crate::scene::load_scene(root.join(&e.path))?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub movable: String,
    pub stationary: String,
    /// Linked occurrences over occurrences of the stationary category in
    /// scenes containing the movable.
    pub probability: f64,
    pub occurrences: u64,
}

/// Link probability between each movable category and each stationary
/// category under the edge rule, estimated by running the generator on
/// `samples` scenes drawn from a seed stream disjoint from corpus seeds.
/// The estimate is a ratio of totals, the same statistic the statistical
/// baseline computes from a corpus.
pub fn oracle_cooccurrence(cfg: &GeneratorConfig, samples: usize, exec: Exec) -> Result<Vec<Cooccurrence>, GeneratorError> {
    let base = cfg.seed ^ 0x0ac1_e5ee_u64;
    let chunk = 1000;
    let chunks = samples.div_ceil(chunk);
    let partial = exec.map_range(chunks, |c| -> Result<BTreeMap<(String, String), (u64, u64)>, GeneratorError> {
        let mut table = BTreeMap::new();
        for i in c * chunk..((c + 1) * chunk).min(samples) {
            let (scene, _) = generate_scene(cfg, base.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9)))?;
            for m in scene.movables() {
                let labels = ground_truth_links(&scene, &m.id, cfg.d_thre).expect("generated target is movable");
                for ((id, l), s) in labels.pairs.iter().zip(scene.stationary()) {
                    debug_assert_eq!(id, &s.id);
                    let e = table.entry((m.category.clone(), s.category.clone())).or_insert((0, 0));
                    e.0 += *l as u64;
                    e.1 += 1;
                }
            }
        }
        Ok(table)
    });
    let mut total: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    for p in partial {
        for (k, (l, o)) in p? {
            let e = total.entry(k).or_insert((0, 0));
            e.0 += l;
            e.1 += o;
        }
    }
    Ok(total
        .into_iter()
        .map(|((movable, stationary), (l, o))| Cooccurrence {
            movable,
            stationary,
            probability: l as f64 / o as f64,
            occurrences: o,
        })
        .collect())
}
