//! Turning edge scores and densities into clusters.
//!
//! Each node keeps at most one outgoing edge: among neighbors that are
//! strictly denser (equal densities are ordered by node index) and whose
//! candidate score clears `p_tau`, the one with the highest selection score.
//! Every kept edge points strictly upward in the `(density, index)` order,
//! so the result is a forest and every tree has exactly one node without an
//! outgoing edge, its peak. Trees become supernodes for the next level.

mod union_find;

use serde::{Deserialize, Serialize};

use crate::affinity::{build_level1_graph, build_upper_graph, AffinityGraph, GraphNode};
use crate::dataio::{normalize_embedding, Scene};
use crate::geometry::GroundPoint;
use crate::model::{edge_coefficient, gcn_forward, node_density, predict_edges, GraphInputs, ModelParams};
use crate::{rng, Error, Execution, Result};
use union_find::DisjointSet;

/// A subgraph with at most one outgoing edge per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinedGraph {
    targets: Vec<Option<usize>>,
}

impl RefinedGraph {
    pub fn from_targets(targets: Vec<Option<usize>>) -> Self {
        Self { targets }
    }

    pub fn node_count(&self) -> usize {
        self.targets.len()
    }

    pub fn target(&self, i: usize) -> Option<usize> {
        self.targets[i]
    }

    pub fn targets(&self) -> &[Option<usize>] {
        &self.targets
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.targets.iter().enumerate().filter_map(|(i, t)| t.map(|j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// `(d_j, j)` ranks strictly above `(d_i, i)`.
pub fn denser(d: &[f64], i: usize, j: usize) -> bool {
    d[i] < d[j] || (d[i] == d[j] && i < j)
}

/// Keeps, for each node, the best-scoring edge towards a denser neighbor.
///
/// Inference passes linkage probabilities as `candidate` and edge
/// coefficients as `select`; ground-truth construction passes adjacency
/// scores for both.
pub fn filter_edges(g: &AffinityGraph, density: &[f64], candidate: &[f64], select: &[f64], p_tau: f64) -> RefinedGraph {
    debug_assert_eq!(density.len(), g.node_count());
    debug_assert_eq!(candidate.len(), g.edge_count());
    debug_assert_eq!(select.len(), g.edge_count());
    let targets = (0..g.node_count())
        .map(|i| {
            let mut best: Option<(f64, usize)> = None;
            for e in g.out_range(i) {
                let j = g.edges[e].dst;
                if !(candidate[e] >= p_tau && denser(density, i, j)) {
                    continue;
                }
                let score = select[e];
                best = match best {
                    Some((s, k)) if s > score || (s == score && k < j) => Some((s, k)),
                    _ => Some((score, j)),
                };
            }
            best.map(|(_, j)| j)
        })
        .collect();
    RefinedGraph { targets }
}

/// Connected components of a refined graph and their peaks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentSet {
    /// Sorted member lists, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    pub peaks: Vec<usize>,
    /// Component index of every node.
    pub assignment: Vec<usize>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn find_peaks_components(rg: &RefinedGraph) -> Result<ComponentSet> {
    let n = rg.node_count();
    let mut sets = DisjointSet::new(n);
    for (i, j) in rg.edges() {
        sets.union(i, j);
    }
    let mut root_index = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut assignment = vec![0; n];
    for (i, slot) in assignment.iter_mut().enumerate() {
        let root = sets.find(i);
        if root_index[root] == usize::MAX {
            root_index[root] = components.len();
            components.push(Vec::new());
        }
        *slot = root_index[root];
        components[root_index[root]].push(i);
    }
    let peaks = components
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let mut roots = members.iter().filter(|&&i| rg.target(i).is_none());
            match (roots.next(), roots.count()) {
                (Some(&p), 0) => Ok(p),
                (Some(_), extra) => Err(Error::MultiplePeaks {
                    component: c,
                    peaks: extra + 1,
                }),
                (None, _) => Err(Error::NoPeak { component: c }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComponentSet {
        components,
        peaks,
        assignment,
    })
}

/// One supernode per component: `[peak half ; mean half]` (each half
/// re-normalized), mean ground position, and the union of member detections.
pub fn aggregate_components(cs: &ComponentSet, g: &AffinityGraph) -> Vec<GraphNode> {
    cs.components
        .iter()
        .zip(&cs.peaks)
        .map(|(members, &peak)| {
            let peak_half = g.nodes[peak].first_half();
            let width = peak_half.len();
            let mut mean = vec![0.0; width];
            let (mut gx, mut gy) = (0.0, 0.0);
            let mut covered = Vec::new();
            for &m in members {
                let node = &g.nodes[m];
                for (acc, v) in mean.iter_mut().zip(node.first_half()) {
                    *acc += v;
                }
                gx += node.ground.gx;
                gy += node.ground.gy;
                covered.extend_from_slice(&node.members);
            }
            let size = members.len() as f64;
            mean.iter_mut().for_each(|v| *v /= size);
            let peak_half = normalize_embedding(&peak_half).unwrap_or(peak_half);
            // Opposing members can cancel out; the peak then stands in for the mean.
            let mean_half = normalize_embedding(&mean).unwrap_or_else(|_| peak_half.clone());
            covered.sort_unstable();
            GraphNode::from_halves(
                &peak_half,
                &mean_half,
                GroundPoint::new(gx / size, gy / size),
                None,
                covered,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Edge connection threshold.
    pub p_tau: f64,
    /// Maximum number of levels.
    pub levels: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { p_tau: 0.2, levels: 3 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if !self.p_tau.is_finite() {
            return Err(Error::InvalidConfig("p_tau must be finite".into()));
        }
        Ok(())
    }
}

/// Scores the decoder needs for one graph.
pub struct LevelScores {
    pub density: Vec<f64>,
    pub candidate: Vec<f64>,
    pub select: Vec<f64>,
}

/// Everything computed at one level of the hierarchy.
#[derive(Clone, Debug)]
pub struct LevelOutcome {
    pub graph: AffinityGraph,
    pub refined: RefinedGraph,
    pub components: ComponentSet,
}

/// Runs the level loop: build graph, score, filter, find components; stop
/// when no edge survives filtering or `levels` is reached, otherwise
/// aggregate and continue.
pub fn run_hierarchy<F>(scene: &Scene, cfg: &DecodeConfig, mut score: F) -> Result<Vec<LevelOutcome>>
where
    F: FnMut(&AffinityGraph) -> Result<LevelScores>,
{
    cfg.validate()?;
    let mut graph = build_level1_graph(scene)?;
    let mut outcomes = Vec::new();
    loop {
        let scores = score(&graph)?;
        let refined = filter_edges(&graph, &scores.density, &scores.candidate, &scores.select, cfg.p_tau);
        let components = find_peaks_components(&refined)?;
        let level = graph.level;
        let done = refined.edge_count() == 0 || level >= cfg.levels;
        let next = (!done).then(|| aggregate_components(&components, &graph));
        outcomes.push(LevelOutcome {
            graph,
            refined,
            components,
        });
        match next {
            Some(nodes) => graph = build_upper_graph(nodes, scene.num_cameras, level + 1),
            None => return Ok(outcomes),
        }
    }
}

/// Cluster id per original detection, from the last level's components.
pub fn final_labels(outcome: &LevelOutcome, detections: usize) -> Vec<usize> {
    let mut labels = vec![usize::MAX; detections];
    for (c, members) in outcome.components.components.iter().enumerate() {
        for &m in members {
            for &d in &outcome.graph.nodes[m].members {
                labels[d] = c;
            }
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub nodes: usize,
    pub edges: usize,
    pub kept_edges: usize,
    pub components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub scene_id: String,
    pub labels: Vec<usize>,
    pub levels_run: usize,
    #[serde(skip)]
    pub trace: Vec<LevelTrace>,
}

/// Model-driven scores for one graph, without dropout.
pub fn predict_scores(g: &AffinityGraph, params: &ModelParams) -> Result<LevelScores> {
    let mut unused = rng::stream(0, rng::STREAM_DROPOUT, &[]);
    let encoded = gcn_forward(g, params, 0.0, false, &mut unused)?;
    let probs = predict_edges(&GraphInputs::from_graph(g), &encoded, params);
    let density = node_density(g, &probs);
    let select = probs.iter().map(|&r| edge_coefficient(r)).collect();
    Ok(LevelScores {
        density,
        candidate: probs,
        select,
    })
}

pub fn cluster(scene: &Scene, params: &ModelParams, cfg: &DecodeConfig) -> Result<ClusterResult> {
    let outcomes = run_hierarchy(scene, cfg, |g| predict_scores(g, params))?;
    let last = outcomes.last().expect("at least one level");
    Ok(ClusterResult {
        scene_id: scene.scene_id.clone(),
        labels: final_labels(last, scene.len()),
        levels_run: outcomes.len(),
        trace: outcomes
            .iter()
            .map(|o| LevelTrace {
                nodes: o.graph.node_count(),
                edges: o.graph.edge_count(),
                kept_edges: o.refined.edge_count(),
                components: o.components.len(),
            })
            .collect(),
    })
}

pub fn cluster_all(
    scenes: &[Scene],
    params: &ModelParams,
    cfg: &DecodeConfig,
    exec: Execution,
) -> Result<Vec<ClusterResult>> {
    exec.map(scenes, |s| cluster(s, params, cfg)).into_iter().collect()
}
