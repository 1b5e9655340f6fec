//! Commonsense scene graph construction.
//!
//! Two objects are joined when their 3-D distance is below `d_thre`, when
//! they share a receptacle relation, or, for an object with neither, when the
//! other is its nearest neighbour (ties to the lowest index). Query targets
//! are attached with "candidate" edges to every node; those edges never take
//! part in message passing.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{encode_edge, encode_node, EdgeKnowledge, KnowledgeError, Provider, TargetQuery};
use crate::scene::{Mobility, Pose2H, ReceptacleKind, ReceptacleRelation, Scene, SceneObject};

#[derive(Debug, Error)]
pub enum CsgError {
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("unknown target object {0:?}")]
    UnknownTarget(String),
    #[error("target {0:?} is not a movable object")]
    NotMovable(String),
    #[error("distance threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("graph has no nodes")]
    Empty,
}

/// Which clause produced an edge. Receptacle kinds win over distance, which
/// wins over the nearest-neighbour fallback.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    On,
    Inside,
    Near,
    Nearest,
    Candidate,
}

impl Relation {
    pub fn word(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::Inside => "inside",
            Relation::Near => "near",
            Relation::Nearest => "nearest",
            Relation::Candidate => "candidate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Structural,
    Candidate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsgNode {
    pub id: String,
    pub category: String,
    pub mobility: Mobility,
    /// `None` for query targets, whose position is unknown.
    pub pose: Option<Pose2H>,
    pub is_target: bool,
    pub feature: Vec<f64>,
}

/// Undirected edge stored once with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsgEdge {
    pub i: usize,
    pub j: usize,
    pub kind: EdgeKind,
    pub relation: Relation,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Csg {
    pub nodes: Vec<CsgNode>,
    pub edges: Vec<CsgEdge>,
    pub d_feat: usize,
    /// Structural neighbours per node, ascending.
    adjacency: Vec<Vec<usize>>,
}

impl Csg {
    fn from_parts(nodes: Vec<CsgNode>, mut edges: Vec<CsgEdge>, d_feat: usize) -> Self {
        edges.sort_by_key(|e| (e.i, e.j));
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for e in edges.iter().filter(|e| e.kind == EdgeKind::Structural) {
            adjacency[e.i].push(e.j);
            adjacency[e.j].push(e.i);
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        Self {
            nodes,
            edges,
            d_feat,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Structural neighbours of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&CsgEdge> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.edges
            .binary_search_by_key(&(i, j), |e| (e.i, e.j))
            .ok()
            .map(|k| &self.edges[k])
    }

    pub fn structural_edges(&self) -> impl Iterator<Item = &CsgEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Structural)
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].is_target).collect()
    }

    pub fn non_target_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.nodes[i].is_target).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Sorted structural edge list as index pairs.
    pub fn structural_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.structural_edges().map(|e| (e.i, e.j)).collect()
    }

    /// Graphviz rendering; candidate edges are dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph csg {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = if n.is_target { "doublecircle" } else if n.mobility == Mobility::Movable { "ellipse" } else { "box" };
            let _ = writeln!(out, "  n{i} [label=\"{}\\n{}\", shape={shape}];", n.category, n.id);
        }
        for e in &self.edges {
            let style = if e.kind == EdgeKind::Candidate { ", style=dashed" } else { "" };
            let _ = writeln!(out, "  n{} -- n{} [label=\"{}\"{style}];", e.i, e.j, e.relation.word());
        }
        out.push_str("}\n");
        out
    }
}

/// Link between two objects under the edge rule, ignoring the fallback.
fn direct_relation(
    a: &SceneObject,
    b: &SceneObject,
    receptacles: &[ReceptacleRelation],
    d_thre: f64,
) -> Option<Relation> {
    let rec = receptacles
        .iter()
        .find(|r| (r.holder == a.id && r.held == b.id) || (r.holder == b.id && r.held == a.id));
    if let Some(r) = rec {
        return Some(match r.kind {
            ReceptacleKind::On => Relation::On,
            ReceptacleKind::Inside => Relation::Inside,
        });
    }
    (a.pose.distance_3d(&b.pose) < d_thre).then_some(Relation::Near)
}

/// Index of the object nearest to `obj` among `others` (3-D distance, ties
/// to the lowest index), skipping `skip`.
fn nearest(obj: &SceneObject, others: &[&SceneObject], skip: Option<usize>) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (k, o) in others.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        let d = obj.pose.distance_3d(&o.pose);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, k));
        }
    }
    best.map(|(_, k)| k)
}

/// Edge set among `objects` under the full rule, as `(i, j, relation)` with
/// `i < j`, sorted.
pub fn edge_rule(objects: &[&SceneObject], receptacles: &[ReceptacleRelation], d_thre: f64) -> Vec<(usize, usize, Relation)> {
    let n = objects.len();
    let mut rel: HashMap<(usize, usize), Relation> = HashMap::new();
    let mut has_direct = vec![false; n];
    for i in 0..n {
        for j in i + 1..n {
            if let Some(r) = direct_relation(objects[i], objects[j], receptacles, d_thre) {
                rel.insert((i, j), r);
                has_direct[i] = true;
                has_direct[j] = true;
            }
        }
    }
    for i in 0..n {
        if has_direct[i] {
            continue;
        }
        if let Some(j) = nearest(objects[i], objects, Some(i)) {
            rel.entry((i.min(j), i.max(j))).or_insert(Relation::Nearest);
        }
    }
    let mut out: Vec<(usize, usize, Relation)> = rel.into_iter().map(|((i, j), r)| (i, j, r)).collect();
    out.sort_by_key(|&(i, j, _)| (i, j));
    out
}

struct FeatureCache<'a> {
    provider: &'a Provider,
    objects: HashMap<String, Vec<f64>>,
    edges: HashMap<(String, String), EdgeKnowledge>,
}

impl<'a> FeatureCache<'a> {
    fn new(provider: &'a Provider) -> Self {
        Self {
            provider,
            objects: HashMap::new(),
            edges: HashMap::new(),
        }
    }

    fn node(&mut self, category: &str) -> Result<Vec<f64>, KnowledgeError> {
        if let Some(f) = self.objects.get(category) {
            return Ok(f.clone());
        }
        let k = self.provider.describe_object(category, None)?;
        let f = encode_node(category, &k, self.provider.d_feat());
        self.objects.insert(category.to_string(), f.clone());
        Ok(f)
    }

    /// Edge feature whose geometric text is prefixed with the relation word.
    fn edge(&mut self, a: &str, b: &str, relation: Relation) -> Result<Vec<f64>, KnowledgeError> {
        let key = if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        let k = match self.edges.get(&key) {
            Some(k) => k.clone(),
            None => {
                let k = self.provider.describe_edge(a, b)?;
                self.edges.insert(key, k.clone());
                k
            }
        };
        let tagged = EdgeKnowledge {
            geometric_text: format!("{}: {}", relation.word(), k.geometric_text),
            functional_text: k.functional_text,
        };
        Ok(encode_edge(&tagged, self.provider.d_feat()))
    }
}

fn object_node(o: &SceneObject, feature: Vec<f64>) -> CsgNode {
    CsgNode {
        id: o.id.clone(),
        category: o.category.clone(),
        mobility: o.mobility,
        pose: Some(o.pose),
        is_target: false,
        feature,
    }
}

/// Graph over the scene's stationary objects, in scene order.
pub fn build_csg(scene: &Scene, d_thre: f64, provider: &Provider) -> Result<Csg, CsgError> {
    if !(d_thre > 0.0 && d_thre.is_finite()) {
        return Err(CsgError::InvalidThreshold(d_thre));
    }
    let objects: Vec<&SceneObject> = scene.stationary().collect();
    if objects.is_empty() {
        return Err(CsgError::Empty);
    }
    let mut cache = FeatureCache::new(provider);
    let mut nodes = Vec::with_capacity(objects.len());
    for o in &objects {
        nodes.push(object_node(o, cache.node(&o.category)?));
    }
    let mut edges = Vec::new();
    for (i, j, relation) in edge_rule(&objects, &scene.receptacles, d_thre) {
        edges.push(CsgEdge {
            i,
            j,
            kind: EdgeKind::Structural,
            relation,
            feature: cache.edge(&objects[i].category, &objects[j].category, relation)?,
        });
    }
    Ok(Csg::from_parts(nodes, edges, provider.d_feat()))
}

/// Adds a target node linked by candidate edges to every non-target node.
pub fn attach_target(g: &Csg, q: &TargetQuery, provider: &Provider) -> Result<Csg, CsgError> {
    if g.is_empty() {
        return Err(CsgError::Empty);
    }
    let k = provider.describe_object(&q.category, q.hint.as_deref())?;
    let feature = encode_node(&q.category, &k, provider.d_feat());
    let t = g.len();
    let mut nodes = g.nodes.clone();
    nodes.push(CsgNode {
        id: format!("target:{}", g.target_indices().len()),
        category: q.category.clone(),
        mobility: Mobility::Movable,
        pose: None,
        is_target: true,
        feature,
    });
    let mut cache = FeatureCache::new(provider);
    let mut edges = g.edges.clone();
    for i in g.non_target_indices() {
        edges.push(CsgEdge {
            i,
            j: t,
            kind: EdgeKind::Candidate,
            relation: Relation::Candidate,
            feature: cache.edge(&q.category, &g.nodes[i].category, Relation::Candidate)?,
        });
    }
    Ok(Csg::from_parts(nodes, edges, g.d_feat))
}

/// Adds newly observed objects. Each new object is wired to the existing
/// non-target nodes by the edge rule; targets get candidate edges to it.
/// Objects whose id is already present are ignored.
pub fn update_csg(
    g: &Csg,
    detections: &[SceneObject],
    receptacles: &[ReceptacleRelation],
    provider: &Provider,
    d_thre: f64,
) -> Result<Csg, CsgError> {
    let mut present: HashSet<String> = g.nodes.iter().map(|n| n.id.clone()).collect();
    let fresh: Vec<&SceneObject> = detections.iter().filter(|o| present.insert(o.id.clone())).collect();
    if fresh.is_empty() {
        return Ok(g.clone());
    }
    let mut cache = FeatureCache::new(provider);
    let mut nodes = g.nodes.clone();
    let mut edges = g.edges.clone();
    let targets = g.target_indices();

    // Poses of existing objects as scene objects for the shared rule.
    let mut known: Vec<(usize, SceneObject)> = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.is_target)
        .filter_map(|(i, n)| {
            n.pose.map(|pose| {
                (
                    i,
                    SceneObject {
                        id: n.id.clone(),
                        category: n.category.clone(),
                        mobility: n.mobility,
                        pose,
                        footprint_radius: 0.0,
                    },
                )
            })
        })
        .collect();

    for o in fresh {
        let idx = nodes.len();
        nodes.push(object_node(o, cache.node(&o.category)?));
        let mut linked = false;
        for (k, other) in &known {
            if let Some(relation) = direct_relation(o, other, receptacles, d_thre) {
                edges.push(CsgEdge {
                    i: *k,
                    j: idx,
                    kind: EdgeKind::Structural,
                    relation,
                    feature: cache.edge(&other.category, &o.category, relation)?,
                });
                linked = true;
            }
        }
        if !linked {
            let refs: Vec<&SceneObject> = known.iter().map(|(_, s)| s).collect();
            if let Some(n) = nearest(o, &refs, None) {
                let k = known[n].0;
                edges.push(CsgEdge {
                    i: k,
                    j: idx,
                    kind: EdgeKind::Structural,
                    relation: Relation::Nearest,
                    feature: cache.edge(&known[n].1.category, &o.category, Relation::Nearest)?,
                });
            }
        }
        for &t in &targets {
            edges.push(CsgEdge {
                i: t,
                j: idx,
                kind: EdgeKind::Candidate,
                relation: Relation::Candidate,
                feature: cache.edge(&nodes[t].category, &o.category, Relation::Candidate)?,
            });
        }
        known.push((idx, o.clone()));
    }
    Ok(Csg::from_parts(nodes, edges, g.d_feat))
}

/// Ground-truth link labels of a movable target against every stationary
/// object, in scene order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkLabels {
    pub target_id: String,
    pub pairs: Vec<(String, u8)>,
}

impl LinkLabels {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|&(_, l)| l as f64).collect()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.1 == 1).count()
    }
}

/// Applies the edge rule between the target's true pose and each stationary
/// object, including the nearest-neighbour fallback when no other clause
/// fires.
pub fn ground_truth_links(scene: &Scene, target_id: &str, d_thre: f64) -> Result<LinkLabels, CsgError> {
    let target = scene
        .object(target_id)
        .ok_or_else(|| CsgError::UnknownTarget(target_id.to_string()))?;
    if target.is_stationary() {
        return Err(CsgError::NotMovable(target_id.to_string()));
    }
    let stationary: Vec<&SceneObject> = scene.stationary().collect();
    let mut labels: Vec<u8> = stationary
        .iter()
        .map(|s| direct_relation(target, s, &scene.receptacles, d_thre).is_some() as u8)
        .collect();
    if labels.iter().all(|&l| l == 0) {
        if let Some(k) = nearest(target, &stationary, None) {
            labels[k] = 1;
        }
    }
    Ok(LinkLabels {
        target_id: target_id.to_string(),
        pairs: stationary.iter().zip(labels).map(|(s, l)| (s.id.clone(), l)).collect(),
    })
}
