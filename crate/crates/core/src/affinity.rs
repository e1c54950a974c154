//! Directed affinity graphs over detections or merged supernodes.
//!
//! Level 1 links every detection to its nearest node in each other camera.
//! Higher levels have no camera partition and use plain kNN with
//! `k = min(M - 1, Z - 1)`. Distances combine cosine distance of embeddings
//! with ground distance normalized by the largest pairwise ground distance
//! in the graph. Ties always go to the lowest node index.

use std::fmt::Write as _;

use crate::dataio::Scene;
use crate::geometry::GroundPoint;
use crate::{Error, Result};

/// A node's embedding is the concatenation of two halves of equal width,
/// each scaled to norm `1/sqrt(2)`, so the whole vector has unit norm and
/// the inner product of two embeddings is their cosine similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub embedding: Vec<f64>,
    pub ground: GroundPoint,
    /// Present only at level 1.
    pub camera: Option<usize>,
    /// Indices of the original detections this node covers.
    pub members: Vec<usize>,
}

pub(crate) const HALF_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl GraphNode {
    /// Builds a node from a unit feature duplicated into both halves.
    pub fn from_feature(feature: &[f64], ground: GroundPoint, camera: Option<usize>, members: Vec<usize>) -> Self {
        Self::from_halves(feature, feature, ground, camera, members)
    }

    /// Builds a node from two unit halves.
    pub fn from_halves(
        first: &[f64],
        second: &[f64],
        ground: GroundPoint,
        camera: Option<usize>,
        members: Vec<usize>,
    ) -> Self {
        let embedding = first.iter().chain(second).map(|v| v * HALF_SCALE).collect();
        Self {
            embedding,
            ground,
            camera,
            members,
        }
    }

    pub fn half_width(&self) -> usize {
        self.embedding.len() / 2
    }

    /// The first half rescaled to unit norm.
    pub fn first_half(&self) -> Vec<f64> {
        self.embedding[..self.half_width()]
            .iter()
            .map(|v| v / HALF_SCALE)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Adjacency score `<h_src, h_dst>`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffinityGraph {
    pub nodes: Vec<GraphNode>,
    /// Sorted by `src`; the order of a node's out-edges is construction order.
    pub edges: Vec<Edge>,
    pub max_pair_dist: f64,
    pub level: usize,
    pub num_cameras: usize,
    offsets: Vec<usize>,
}

pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adjacency score of two unit embeddings: their inner product, clamped to
/// `[-1, 1]` against rounding.
pub fn affinity_score(a: &[f64], b: &[f64]) -> f64 {
    inner(a, b).clamp(-1.0, 1.0)
}

pub fn max_pair_distance(nodes: &[GraphNode]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            best = best.max(a.ground.distance(&b.ground));
        }
    }
    best
}

/// `m_ij = (1 - <h_i, h_j>) * |g_i - g_j| / max_pair_dist`, with the spatial
/// factor taken as 1 when every node shares one position.
pub fn node_distance(ni: &GraphNode, nj: &GraphNode, max_pair_dist: f64) -> f64 {
    let appearance = (1.0 - inner(&ni.embedding, &nj.embedding)).max(0.0);
    let spatial = if max_pair_dist < 1e-12 {
        1.0
    } else {
        ni.ground.distance(&nj.ground) / max_pair_dist
    };
    appearance * spatial
}

impl AffinityGraph {
    /// Assembles a graph from explicit `(src, dst)` pairs, computing scores
    /// and the pairwise-distance normalizer. Rejects self-loops and
    /// out-of-range endpoints.
    pub fn from_pairs(
        nodes: Vec<GraphNode>,
        pairs: &[(usize, usize)],
        level: usize,
        num_cameras: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut edges = Vec::with_capacity(pairs.len());
        for &(src, dst) in pairs {
            if src >= n || dst >= n || src == dst {
                return Err(Error::Schema(format!(
                    "invalid edge ({src}, {dst}) in graph of {n} nodes"
                )));
            }
            edges.push(Edge {
                src,
                dst,
                score: affinity_score(&nodes[src].embedding, &nodes[dst].embedding),
            });
        }
        edges.sort_by_key(|e| e.src);
        let max_pair_dist = max_pair_distance(&nodes);
        Ok(Self::assemble(nodes, edges, max_pair_dist, level, num_cameras))
    }

    fn assemble(nodes: Vec<GraphNode>, edges: Vec<Edge>, max_pair_dist: f64, level: usize, num_cameras: usize) -> Self {
        let mut offsets = vec![0; nodes.len() + 1];
        for e in &edges {
            offsets[e.src + 1] += 1;
        }
        for i in 0..nodes.len() {
            offsets[i + 1] += offsets[i];
        }
        Self {
            nodes,
            edges,
            max_pair_dist,
            level,
            num_cameras,
            offsets,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Range into `edges` holding node `i`'s outgoing edges.
    pub fn out_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn out_edges(&self, i: usize) -> &[Edge] {
        &self.edges[self.out_range(i)]
    }

    pub fn embed_width(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.embedding.len())
    }

    /// Edge list as text, one `src dst a_ij` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.src, e.dst, e.score);
        }
        out
    }
}

pub fn build_level1_graph(scene: &Scene) -> Result<AffinityGraph> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let nodes: Vec<GraphNode> = scene
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| GraphNode::from_feature(&d.embedding, d.ground, Some(d.camera), vec![i]))
        .collect();
    let max_pair_dist = max_pair_distance(&nodes);
    let mut by_camera: Vec<Vec<usize>> = vec![Vec::new(); scene.num_cameras];
    for (i, d) in scene.detections.iter().enumerate() {
        by_camera[d.camera].push(i);
    }

    let mut edges = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        let own = scene.detections[i].camera;
        for (camera, members) in by_camera.iter().enumerate() {
            if camera == own {
                continue;
            }
            let nearest = members
                .iter()
                .map(|&j| (node_distance(node, &nodes[j], max_pair_dist), j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, j)) = nearest {
                edges.push(Edge {
                    src: i,
                    dst: j,
                    score: affinity_score(&node.embedding, &nodes[j].embedding),
                });
            }
        }
    }
    Ok(AffinityGraph::assemble(
        nodes,
        edges,
        max_pair_dist,
        1,
        scene.num_cameras,
    ))
}

pub fn build_upper_graph(nodes: Vec<GraphNode>, num_cameras: usize, level: usize) -> AffinityGraph {
    let z = nodes.len();
    let k = num_cameras.saturating_sub(1).min(z.saturating_sub(1));
    let max_pair_dist = max_pair_distance(&nodes);
    let mut edges = Vec::with_capacity(z * k);
    for (i, node) in nodes.iter().enumerate() {
        let mut ranked: Vec<(f64, usize)> = (0..z)
            .filter(|&j| j != i)
            .map(|j| (node_distance(node, &nodes[j], max_pair_dist), j))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(ranked.into_iter().take(k).map(|(_, j)| Edge {
            src: i,
            dst: j,
            score: affinity_score(&node.embedding, &nodes[j].embedding),
        }));
    }
    AffinityGraph::assemble(nodes, edges, max_pair_dist, level, num_cameras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Detection;

    fn det(camera: usize, e: &[f64], g: (f64, f64)) -> Detection {
        Detection {
            camera,
            bbox: None,
            embedding: crate::dataio::normalize_embedding(e).unwrap(),
            ground: GroundPoint::new(g.0, g.1),
            identity: None,
        }
    }

    fn scene(m: usize, dets: Vec<Detection>) -> Scene {
        Scene {
            scene_id: "t".into(),
            num_cameras: m,
            detections: dets,
        }
    }

    fn node(e: &[f64], g: (f64, f64)) -> GraphNode {
        let e = crate::dataio::normalize_embedding(e).unwrap();
        GraphNode::from_feature(&e, GroundPoint::new(g.0, g.1), None, vec![0])
    }

    #[test]
    fn node_distance_examples() {
        let a = node(&[1.0, 0.0], (0.0, 0.0));
        let b = node(&[1.0, 0.0], (5.0, 5.0));
        assert_eq!(node_distance(&a, &b, 10.0), 0.0);
        let c = node(&[0.0, 1.0], (3.0, 4.0));
        assert!((node_distance(&a, &c, 5.0) - 1.0).abs() < 1e-15);
        let d = node(&[0.5, 0.75f64.sqrt()], (3.0, 4.0));
        assert!((node_distance(&a, &d, 10.0) - 0.25).abs() < 1e-12);
        // Co-located nodes fall back to pure appearance distance.
        let e = node(&[0.0, 1.0], (0.0, 0.0));
        assert!((node_distance(&a, &e, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedding_is_unit_with_scaled_halves() {
        let n = node(&[3.0, 4.0], (0.0, 0.0));
        assert!((inner(&n.embedding, &n.embedding) - 1.0).abs() < 1e-15);
        let h = n.first_half();
        assert!((h[0] - 0.6).abs() < 1e-15 && (h[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn level1_two_cameras() {
        let s = scene(
            2,
            vec![det(0, &[1.0, 0.0], (0.0, 0.0)), det(1, &[1.0, 0.1], (1.0, 0.0))],
        );
        let g = build_level1_graph(&s).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!((g.edges[0].src, g.edges[0].dst), (0, 1));
        assert_eq!((g.edges[1].src, g.edges[1].dst), (1, 0));
    }

    #[test]
    fn level1_edge_counts() {
        let s = scene(
            3,
            vec![
                det(0, &[1.0, 0.0], (0.0, 0.0)),
                det(0, &[0.0, 1.0], (4.0, 0.0)),
                det(1, &[1.0, 0.2], (0.5, 0.0)),
                det(2, &[0.1, 1.0], (3.0, 1.0)),
            ],
        );
        let g = build_level1_graph(&s).unwrap();
        assert_eq!(g.edge_count(), 8);
        for i in 0..4 {
            assert_eq!(g.out_edges(i).len(), 2);
        }
        let s = scene(
            4,
            vec![
                det(0, &[1.0, 0.0], (0.0, 0.0)),
                det(1, &[1.0, 0.2], (0.5, 0.0)),
                det(3, &[0.1, 1.0], (3.0, 1.0)),
            ],
        );
        let g = build_level1_graph(&s).unwrap();
        assert!((0..3).all(|i| g.out_edges(i).len() == 2));
        for e in &g.edges {
            assert_ne!(g.nodes[e.src].camera, g.nodes[e.dst].camera);
        }
    }

    #[test]
    fn level1_empty_scene() {
        assert!(matches!(build_level1_graph(&scene(2, vec![])), Err(Error::EmptyScene)));
    }

    #[test]
    fn level1_single_detection_has_no_edges() {
        let g = build_level1_graph(&scene(4, vec![det(2, &[1.0, 0.0], (1.0, 1.0))])).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.max_pair_dist, 0.0);
    }

    #[test]
    fn upper_graph_degrees() {
        let make = |z: usize| -> Vec<GraphNode> {
            (0..z)
                .map(|i| node(&[1.0, i as f64 * 0.3], (i as f64, (i * i) as f64)))
                .collect()
        };
        assert_eq!(build_upper_graph(make(1), 4, 2).edge_count(), 0);
        let g = build_upper_graph(make(3), 4, 2);
        assert_eq!(g.edge_count(), 6);
        let g = build_upper_graph(make(10), 4, 2);
        assert!((0..10).all(|i| g.out_edges(i).len() == 3));
        assert_eq!(g.level, 2);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // Nodes 1 and 2 are identical, so both are at the same distance from 0.
        let s = scene(
            3,
            vec![
                det(0, &[1.0, 0.0], (0.0, 0.0)),
                det(1, &[0.0, 1.0], (1.0, 0.0)),
                det(1, &[0.0, 1.0], (1.0, 0.0)),
            ],
        );
        let g = build_level1_graph(&s).unwrap();
        assert_eq!(g.out_edges(0)[0].dst, 1);
    }

    #[test]
    fn edge_list_dump() {
        let s = scene(
            2,
            vec![det(0, &[1.0, 0.0], (0.0, 0.0)), det(1, &[1.0, 0.0], (1.0, 0.0))],
        );
        let g = build_level1_graph(&s).unwrap();
        let dump = g.to_edge_list();
        let rows: Vec<(usize, usize, f64)> = dump
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(' ').collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].0, rows[0].1), (0, 1));
        assert_eq!((rows[1].0, rows[1].1), (1, 0));
        assert!(rows.iter().all(|r| (r.2 - 1.0).abs() < 1e-12));
    }
}
