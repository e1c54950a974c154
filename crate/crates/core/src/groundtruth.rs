//! Ground-truth graph hierarchies for supervised training.
//!
//! The decode loop runs with label-derived densities, and adjacency scores
//! serve as both the candidate threshold and the selection criterion. Every
//! level's affinity graph is kept, with each edge labeled 1 when its
//! endpoints share an identity.

use std::collections::BTreeMap;

use crate::affinity::AffinityGraph;
use crate::dataio::{IdentityId, Scene};
use crate::decode::{run_hierarchy, DecodeConfig, LevelScores};
use crate::{Error, Execution, Result};

#[derive(Clone, Debug)]
pub struct LabeledGraph {
    pub graph: AffinityGraph,
    /// Identity of every node (majority identity of its members).
    pub identities: Vec<IdentityId>,
    /// 1 if the edge's endpoints share an identity, else 0. Aligned with `graph.edges`.
    pub edge_labels: Vec<u8>,
    pub level: usize,
}

impl LabeledGraph {
    pub fn new(graph: AffinityGraph, identities: Vec<IdentityId>) -> Result<Self> {
        if identities.len() != graph.node_count() {
            return Err(Error::LengthMismatch(format!(
                "{} identities for {} nodes",
                identities.len(),
                graph.node_count()
            )));
        }
        let edge_labels = graph
            .edges
            .iter()
            .map(|e| u8::from(identities[e.src] == identities[e.dst]))
            .collect();
        let level = graph.level;
        Ok(Self {
            graph,
            identities,
            edge_labels,
            level,
        })
    }
}

/// Majority identity of each node's member detections, ties to the lowest id.
pub fn node_identities(g: &AffinityGraph, scene: &Scene) -> Result<Vec<IdentityId>> {
    g.nodes
        .iter()
        .map(|node| {
            let mut counts: BTreeMap<IdentityId, usize> = BTreeMap::new();
            for &m in &node.members {
                let id = scene
                    .detections
                    .get(m)
                    .and_then(|d| d.identity)
                    .ok_or(Error::MissingLabel(m))?;
                *counts.entry(id).or_default() += 1;
            }
            // max_by_key returns the last maximum; iterate in reverse to favor low ids.
            counts
                .iter()
                .rev()
                .max_by_key(|(_, &c)| c)
                .map(|(&id, _)| id)
                .ok_or(Error::MissingLabel(usize::MAX))
        })
        .collect()
}

/// `d_i = (1/k) sum_j (+1 if same identity else -1) * a_ij` over out-edges.
pub fn gt_density(g: &AffinityGraph, identities: &[IdentityId]) -> Result<Vec<f64>> {
    if identities.len() != g.node_count() {
        return Err(Error::MissingLabel(identities.len().min(g.node_count())));
    }
    Ok((0..g.node_count())
        .map(|i| {
            let out = g.out_edges(i);
            if out.is_empty() {
                return 0.0;
            }
            out.iter()
                .map(|e| {
                    let sign = if identities[i] == identities[e.dst] { 1.0 } else { -1.0 };
                    sign * e.score
                })
                .sum::<f64>()
                / out.len() as f64
        })
        .collect())
}

fn gt_scores(g: &AffinityGraph, scene: &Scene) -> Result<LevelScores> {
    let ids = node_identities(g, scene)?;
    let scores: Vec<f64> = g.edges.iter().map(|e| e.score).collect();
    Ok(LevelScores {
        density: gt_density(g, &ids)?,
        candidate: scores.clone(),
        select: scores,
    })
}

pub fn build_gt_hierarchy(scene: &Scene, cfg: &DecodeConfig) -> Result<Vec<LabeledGraph>> {
    scene.identities()?;
    let outcomes = run_hierarchy(scene, cfg, |g| gt_scores(g, scene))?;
    outcomes
        .into_iter()
        .map(|o| {
            let ids = node_identities(&o.graph, scene)?;
            LabeledGraph::new(o.graph, ids)
        })
        .collect()
}

/// Labels from the last level of a ground-truth hierarchy.
pub fn gt_cluster_labels(scene: &Scene, cfg: &DecodeConfig) -> Result<(Vec<usize>, usize)> {
    scene.identities()?;
    let outcomes = run_hierarchy(scene, cfg, |g| gt_scores(g, scene))?;
    let last = outcomes.last().expect("at least one level");
    Ok((crate::decode::final_labels(last, scene.len()), outcomes.len()))
}

/// Every level of every scene, in scene order.
pub fn build_gt_pool(scenes: &[Scene], cfg: &DecodeConfig, exec: Execution) -> Result<Vec<LabeledGraph>> {
    let per_scene = exec.map(scenes, |s| build_gt_hierarchy(s, cfg));
    let mut pool = Vec::new();
    for graphs in per_scene {
        pool.extend(graphs?);
    }
    Ok(pool)
}
