//! Declarative indoor scenes and their JSON file format.

mod grid;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{pgm, rasterize_occupancy, rasterize_where, Cell, OccupancyGrid};

pub const SCENE_SCHEMA: &str = "csg-scene/1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("resolution {resolution} m/cell outside (0, {max}]")]
    Resolution { resolution: f64, max: f64 },
}

/// Planar position plus the height of the object's centroid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2H {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Pose2H {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance_3d(&self, other: &Pose2H) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }

    pub fn distance_2d(&self, other: &Pose2H) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mobility {
    Stationary,
    Movable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub category: String,
    pub mobility: Mobility,
    pub pose: Pose2H,
    pub footprint_radius: f64,
}

impl SceneObject {
    pub fn is_stationary(&self) -> bool {
        self.mobility == Mobility::Stationary
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceptacleKind {
    On,
    Inside,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptacleRelation {
    pub holder: String,
    pub held: String,
    pub kind: ReceptacleKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// The four boundary segments.
    pub fn boundary_walls(&self) -> Vec<Wall> {
        let (a, b, c, d) = (self.min_x, self.min_y, self.max_x, self.max_y);
        vec![
            Wall::new(a, b, c, b),
            Wall::new(c, b, c, d),
            Wall::new(a, d, c, d),
            Wall::new(a, b, a, d),
        ]
    }
}

/// Axis-aligned wall segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Wall {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.x0 == self.x1 || self.y0 == self.y1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub receptacles: Vec<ReceptacleRelation>,
    pub extent: Extent,
    pub walls: Vec<Wall>,
    pub resolution_hint: f64,
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    schema: String,
    extent: Extent,
    #[serde(default)]
    walls: Vec<Wall>,
    objects: Vec<SceneObject>,
    #[serde(default)]
    receptacles: Vec<ReceptacleRelation>,
    #[serde(default = "default_resolution")]
    resolution_hint: f64,
}

fn default_resolution() -> f64 {
    crate::defaults::GRID_RESOLUTION
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn stationary(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| o.is_stationary())
    }

    pub fn movables(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| !o.is_stationary())
    }

    /// True when `a` and `b` share a receptacle relation in either direction.
    pub fn has_receptacle(&self, a: &str, b: &str) -> bool {
        self.receptacles
            .iter()
            .any(|r| (r.holder == a && r.held == b) || (r.holder == b && r.held == a))
    }

    /// Ids of the objects holding `id`.
    pub fn holders_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.receptacles.iter().filter(move |r| r.held == id).map(|r| r.holder.as_str())
    }

    /// Copy with movable objects (and relations touching them) removed.
    pub fn stationary_only(&self) -> Scene {
        let keep: HashSet<&str> = self.stationary().map(|o| o.id.as_str()).collect();
        Scene {
            objects: self.stationary().cloned().collect(),
            receptacles: self
                .receptacles
                .iter()
                .filter(|r| keep.contains(r.holder.as_str()) && keep.contains(r.held.as_str()))
                .cloned()
                .collect(),
            extent: self.extent,
            walls: self.walls.clone(),
            resolution_hint: self.resolution_hint,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Validation(m));
        let e = &self.extent;
        if ![e.min_x, e.min_y, e.max_x, e.max_y].iter().all(|v| v.is_finite()) || e.width() <= 0.0 || e.height() <= 0.0
        {
            return bad(format!("degenerate extent {e:?}"));
        }
        if !(self.resolution_hint.is_finite() && self.resolution_hint > 0.0) {
            return bad(format!("resolution_hint {} must be positive", self.resolution_hint));
        }
        if self.objects.is_empty() {
            return bad("scene has no objects".into());
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if o.id.is_empty() {
                return bad("object with empty id".into());
            }
            if !ids.insert(o.id.as_str()) {
                return bad(format!("duplicate object id {:?}", o.id));
            }
            if o.category.trim().is_empty() {
                return bad(format!("object {:?} has an empty category", o.id));
            }
            let p = o.pose;
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) || p.z < 0.0 {
                return bad(format!("object {:?} has an invalid pose {p:?}", o.id));
            }
            if !e.contains(p.x, p.y) {
                return bad(format!("object {:?} at ({}, {}) lies outside the extent", o.id, p.x, p.y));
            }
            if !(o.footprint_radius.is_finite() && o.footprint_radius > 0.0) {
                return bad(format!("object {:?} footprint_radius must be positive", o.id));
            }
        }
        if !self.objects.iter().any(SceneObject::is_stationary) {
            return bad("scene needs at least one stationary object".into());
        }
        for r in &self.receptacles {
            for id in [&r.holder, &r.held] {
                if !ids.contains(id.as_str()) {
                    return bad(format!("receptacle references unknown object {id:?}"));
                }
            }
            if r.holder == r.held {
                return bad(format!("object {:?} cannot hold itself", r.holder));
            }
        }
        for w in &self.walls {
            if ![w.x0, w.y0, w.x1, w.y1].iter().all(|v| v.is_finite()) || !w.is_axis_aligned() {
                return bad(format!("wall {w:?} is not a finite axis-aligned segment"));
            }
            if !e.contains(w.x0, w.y0) || !e.contains(w.x1, w.y1) {
                return bad(format!("wall {w:?} leaves the extent"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let doc: SceneDoc = serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        if doc.schema != SCENE_SCHEMA {
            return Err(SceneError::Parse(format!(
                "unsupported schema {:?}, expected {SCENE_SCHEMA:?}",
                doc.schema
            )));
        }
        let scene = Scene {
            objects: doc.objects,
            receptacles: doc.receptacles,
            extent: doc.extent,
            walls: doc.walls,
            resolution_hint: doc.resolution_hint,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        let doc = SceneDoc {
            schema: SCENE_SCHEMA.to_string(),
            extent: self.extent,
            walls: self.walls.clone(),
            objects: self.objects.clone(),
            receptacles: self.receptacles.clone(),
            resolution_hint: self.resolution_hint,
        };
        serde_json::to_string_pretty(&doc).expect("scene serialization cannot fail") + "\n"
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scene::from_json(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> std::io::Result<()> {
    crate::io::write_atomic(path.as_ref(), scene.to_json().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_json(extra: &str) -> String {
        format!(
            r#"{{"schema":"csg-scene/1","extent":{{"min_x":0,"min_y":0,"max_x":4,"max_y":4}},
            "objects":[{{"id":"table_1","category":"table","mobility":"stationary",
            "pose":{{"x":1,"y":1,"z":0.7}},"footprint_radius":0.4}}]{extra}}}"#
        )
    }

    #[test]
    fn minimal_scene_loads() {
        let s = Scene::from_json(&table_json("")).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].pose, Pose2H::new(1.0, 1.0, 0.7));
        assert_eq!(s.resolution_hint, 0.25);
    }

    #[test]
    fn dangling_receptacle_is_rejected() {
        let text = table_json(r#","receptacles":[{"holder":"table_1","held":"cup9","kind":"on"}]"#);
        let err = Scene::from_json(&text).unwrap_err();
        assert!(matches!(err, SceneError::Validation(ref m) if m.contains("cup9")), "{err}");
    }

    #[test]
    fn malformed_and_wrong_schema_are_parse_errors() {
        assert!(matches!(Scene::from_json("{ not json"), Err(SceneError::Parse(_))));
        let text = table_json("").replace("csg-scene/1", "csg-scene/9");
        assert!(matches!(Scene::from_json(&text), Err(SceneError::Parse(_))));
    }

    #[test]
    fn validation_failures() {
        let base = Scene::from_json(&table_json("")).unwrap();

        let mut dup = base.clone();
        dup.objects.push(dup.objects[0].clone());
        assert!(dup.validate().is_err());

        let mut outside = base.clone();
        outside.objects[0].pose.x = 9.0;
        assert!(outside.validate().is_err());

        let mut movable_only = base.clone();
        movable_only.objects[0].mobility = Mobility::Movable;
        assert!(movable_only.validate().is_err());

        let mut self_hold = base.clone();
        self_hold.receptacles.push(ReceptacleRelation {
            holder: "table_1".into(),
            held: "table_1".into(),
            kind: ReceptacleKind::On,
        });
        assert!(self_hold.validate().is_err());

        let mut diagonal = base;
        diagonal.walls.push(Wall::new(0.0, 0.0, 1.0, 1.0));
        assert!(diagonal.validate().is_err());
    }

    #[test]
    fn stationary_only_drops_movables_and_their_relations() {
        let mut s = Scene::from_json(&table_json("")).unwrap();
        s.objects.push(SceneObject {
            id: "cup_1".into(),
            category: "cup".into(),
            mobility: Mobility::Movable,
            pose: Pose2H::new(1.0, 1.0, 0.7),
            footprint_radius: 0.05,
        });
        s.receptacles.push(ReceptacleRelation {
            holder: "table_1".into(),
            held: "cup_1".into(),
            kind: ReceptacleKind::On,
        });
        let st = s.stationary_only();
        assert_eq!(st.objects.len(), 1);
        assert!(st.receptacles.is_empty());
        assert!(s.has_receptacle("cup_1", "table_1"));
    }
}
