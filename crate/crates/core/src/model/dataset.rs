use std::rc::Rc;

use csg_tensor::Tensor;

use super::ModelError;
use crate::csg::{attach_target, build_csg, ground_truth_links, Csg};
use crate::knowledge::{Provider, TargetQuery};
use crate::scene::Scene;
use crate::Exec;

/// Dense model input extracted from a graph with exactly one target.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    pub n: usize,
    /// `n × 3·d_feat` node features.
    pub features: Tensor,
    /// Structural edges in both directions, sorted.
    pub directed: Vec<(usize, usize)>,
    /// One row per entry of `directed`; `None` when the graph has no edges.
    pub edge_features: Option<Tensor>,
    pub target: usize,
    /// Nodes scored against the target, ascending.
    pub predict: Vec<usize>,
}

impl GraphInput {
    /// Neighbourhoods for graph attention: structural edges plus self loops.
    pub fn gat_mask(&self) -> Rc<[bool]> {
        let mut m = vec![false; self.n * self.n];
        for i in 0..self.n {
            m[i * self.n + i] = true;
        }
        for &(i, j) in &self.directed {
            m[i * self.n + j] = true;
        }
        m.into()
    }

    /// Neighbourhoods for edge attention: structural edges only.
    pub fn edge_mask(&self) -> Rc<[bool]> {
        let mut m = vec![false; self.n * self.n];
        for &(i, j) in &self.directed {
            m[i * self.n + j] = true;
        }
        m.into()
    }
}

pub fn graph_input(g: &Csg) -> Result<GraphInput, ModelError> {
    let targets = g.target_indices();
    let target = match targets.as_slice() {
        [] => return Err(ModelError::MissingTarget),
        [t] => *t,
        many => return Err(ModelError::MultipleTargets(many.len())),
    };
    let n = g.len();
    let width = g.nodes[0].feature.len();
    let mut data = Vec::with_capacity(n * width);
    for node in &g.nodes {
        data.extend_from_slice(&node.feature);
    }
    let features = Tensor::matrix(n, width, data)?;

    let mut directed: Vec<(usize, usize, &[f64])> = Vec::new();
    for e in g.structural_edges() {
        directed.push((e.i, e.j, &e.feature));
        directed.push((e.j, e.i, &e.feature));
    }
    directed.sort_by_key(|&(i, j, _)| (i, j));
    let edge_features = match directed.first() {
        None => None,
        Some(first) => {
            let w = first.2.len();
            let rows: Vec<f64> = directed.iter().flat_map(|d| d.2.iter().copied()).collect();
            Some(Tensor::matrix(directed.len(), w, rows)?)
        }
    };
    Ok(GraphInput {
        n,
        features,
        directed: directed.iter().map(|&(i, j, _)| (i, j)).collect(),
        edge_features,
        target,
        predict: g.non_target_indices(),
    })
}

/// One labelled (scene, target) graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub scene_id: String,
    pub target_id: String,
    pub target_category: String,
    /// Category of each predicted node, aligned with `labels`.
    pub node_categories: Vec<String>,
    pub input: GraphInput,
    pub labels: Vec<f64>,
}

impl GraphSample {
    pub fn pairs(&self) -> usize {
        self.labels.len()
    }
}

fn sample_from(scene: &Scene, g: &Csg, scene_id: &str, target_id: &str, provider: &Provider, d_thre: f64) -> Result<GraphSample, ModelError> {
    let target = scene
        .object(target_id)
        .ok_or_else(|| crate::csg::CsgError::UnknownTarget(target_id.to_string()))?;
    let labels = ground_truth_links(scene, target_id, d_thre)?;
    let with_target = attach_target(g, &TargetQuery::category(&target.category), provider)?;
    let input = graph_input(&with_target)?;
    if input.predict.len() != labels.pairs.len() {
        return Err(ModelError::LabelMismatch {
            expected: input.predict.len(),
            got: labels.pairs.len(),
        });
    }
    Ok(GraphSample {
        scene_id: scene_id.to_string(),
        target_id: target_id.to_string(),
        target_category: target.category.clone(),
        node_categories: input.predict.iter().map(|&i| with_target.nodes[i].category.clone()).collect(),
        labels: labels.values(),
        input,
    })
}

/// Graph for one movable target of a scene, over its stationary objects.
pub fn build_sample(scene: &Scene, scene_id: &str, target_id: &str, provider: &Provider, d_thre: f64) -> Result<GraphSample, ModelError> {
    let g = build_csg(scene, d_thre, provider)?;
    sample_from(scene, &g, scene_id, target_id, provider, d_thre)
}

/// One sample per movable object whose category passes `keep`.
pub fn build_scene_samples(
    scene: &Scene,
    scene_id: &str,
    provider: &Provider,
    d_thre: f64,
    keep: &(dyn Fn(&str) -> bool + Sync),
) -> Result<Vec<GraphSample>, ModelError> {
    let g = build_csg(scene, d_thre, provider)?;
    scene
        .movables()
        .filter(|m| keep(&m.category))
        .map(|m| sample_from(scene, &g, scene_id, &m.id, provider, d_thre))
        .collect()
}

/// Samples for a list of `(scene id, scene)` pairs, in input order.
pub fn build_samples(
    scenes: &[(String, Scene)],
    provider: &Provider,
    d_thre: f64,
    keep: &(dyn Fn(&str) -> bool + Sync),
    exec: Exec,
) -> Result<Vec<GraphSample>, ModelError> {
    let per_scene = exec.map(scenes, |(id, s)| build_scene_samples(s, id, provider, d_thre, keep));
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}
