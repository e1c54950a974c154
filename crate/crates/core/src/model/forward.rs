//! Forward computation over one affinity graph.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng as _;

use super::layers::MlpCache;
use super::ModelParams;
use crate::affinity::AffinityGraph;
use crate::geometry::GroundPoint;
use crate::rng::Rng;
use crate::{Error, Result};

/// Dense, model-ready view of an [`AffinityGraph`].
#[derive(Clone, Debug)]
pub struct GraphInputs {
    /// `n x 2D` node embeddings.
    pub features: Array2<f64>,
    /// `n x 2` ground positions min-max scaled to `[0, 1]` per axis.
    pub positions: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    /// For each node `i`, its in-neighbors `j` with weight
    /// `w_ji = a_ji / sum_k |a_ki|`, sorted by weight.
    pub in_neighbors: Vec<Vec<(usize, f64)>>,
}

/// Per-axis min-max scaling of ground positions to `[0, 1]`. An axis with no
/// spread maps to 0.5.
pub fn normalized_positions(g: &AffinityGraph) -> Array2<f64> {
    let n = g.node_count();
    let mut out = Array2::zeros((n, 2));
    let axes: [fn(&GroundPoint) -> f64; 2] = [|p| p.gx, |p| p.gy];
    for (axis, get) in axes.iter().enumerate() {
        let values: Vec<f64> = g.nodes.iter().map(|node| get(&node.ground)).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (i, v) in values.iter().enumerate() {
            out[[i, axis]] = if span < 1e-12 { 0.5 } else { (v - lo) / span };
        }
    }
    out
}

impl GraphInputs {
    pub fn from_graph(g: &AffinityGraph) -> Self {
        let n = g.node_count();
        let width = g.embed_width();
        let mut features = Array2::zeros((n, width));
        for (i, node) in g.nodes.iter().enumerate() {
            features
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&node.embedding[..]));
        }
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for e in &g.edges {
            incoming[e.dst].push((e.src, e.score));
        }
        let in_neighbors = incoming
            .into_iter()
            .map(|mut list| {
                list.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
                let total: f64 = list.iter().map(|(_, a)| a.abs()).sum();
                if total < 1e-12 {
                    Vec::new()
                } else {
                    list.into_iter().map(|(j, a)| (j, a / total)).collect()
                }
            })
            .collect();
        Self {
            features,
            positions: normalized_positions(g),
            edges: g.edges.iter().map(|e| (e.src, e.dst)).collect(),
            scores: g.edges.iter().map(|e| e.score).collect(),
            in_neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Weighted sum of in-neighbor messages. Terms are added in an order
    /// fixed by their values (weight, then message), not by node index, so
    /// relabeling the nodes permutes the result bit for bit.
    pub(crate) fn aggregate(&self, messages: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(messages.raw_dim());
        let mut order = Vec::new();
        for (i, list) in self.in_neighbors.iter().enumerate() {
            order.clear();
            order.extend_from_slice(list);
            order.sort_by(|x, y| {
                x.1.total_cmp(&y.1).then_with(|| {
                    let (a, b) = (messages.row(x.0), messages.row(y.0));
                    a.iter()
                        .zip(b.iter())
                        .map(|(p, q)| p.total_cmp(q))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
            });
            let mut row = out.row_mut(i);
            for &(j, w) in &order {
                row.scaled_add(w, &messages.row(j));
            }
        }
        out
    }

    /// Transpose of [`GraphInputs::aggregate`].
    pub(crate) fn aggregate_backward(&self, dagg: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(dagg.raw_dim());
        for (i, list) in self.in_neighbors.iter().enumerate() {
            for &(j, w) in list {
                out.row_mut(j).scaled_add(w, &dagg.row(i));
            }
        }
        out
    }

    /// Rows `[h_i, p_i, h_j, p_j]` for every edge `(i, j)`.
    pub(crate) fn edge_rows(&self, encoded: &Array2<f64>) -> Array2<f64> {
        let d = encoded.ncols();
        let mut out = Array2::zeros((self.edges.len(), 2 * (d + 2)));
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let mut row = out.row_mut(e);
            row.slice_mut(s![0..d]).assign(&encoded.row(i));
            row.slice_mut(s![d..d + 2]).assign(&self.positions.row(i));
            row.slice_mut(s![d + 2..2 * d + 2]).assign(&encoded.row(j));
            row.slice_mut(s![2 * d + 2..]).assign(&self.positions.row(j));
        }
        out
    }
}

/// Node encodings after the last message-passing step.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGraph {
    pub h_prime: Array2<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    pub psi: MlpCache,
    pub phi: MlpCache,
    /// Inverted-dropout multipliers, present only in training mode.
    pub mask: Option<Array2<f64>>,
}

#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    pub steps: Vec<StepCache>,
    pub encoded: Array2<f64>,
    pub theta: MlpCache,
    pub probs: Vec<f64>,
}

impl ForwardCache {
    /// Sign of every PReLU pre-activation, in a fixed order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.steps
            .iter()
            .flat_map(|s| [&s.psi.pre, &s.phi.pre])
            .chain(std::iter::once(&self.theta.pre))
            .flat_map(|m| m.iter().map(|v| *v > 0.0))
            .collect()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep the probability strictly inside (0, 1) even where f64 saturates.
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn check_input(inputs: &GraphInputs, params: &ModelParams) -> Result<()> {
    let want = params.arch.input_dim();
    if inputs.features.ncols() != want {
        return Err(Error::dim(want, inputs.features.ncols(), "node embedding width"));
    }
    Ok(())
}

fn dropout_mask(shape: (usize, usize), prob: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - prob);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < prob { 0.0 } else { keep })
}

fn encode(
    inputs: &GraphInputs,
    params: &ModelParams,
    mut dropout: Option<(f64, &mut Rng)>,
) -> (Array2<f64>, Vec<StepCache>) {
    let mut h = inputs.features.clone();
    let mut caches = Vec::with_capacity(params.steps.len());
    for step in &params.steps {
        let (messages, psi) = step.psi.forward_cached(h.clone());
        let agg = inputs.aggregate(&messages);
        let z = concatenate![Axis(1), h, agg];
        let (mut out, phi) = step.phi.forward_cached(z);
        let mask = match dropout.as_mut() {
            Some((p, rng)) if *p > 0.0 => {
                let m = dropout_mask(out.dim(), *p, rng);
                out *= &m;
                Some(m)
            }
            _ => None,
        };
        caches.push(StepCache { psi, phi, mask });
        h = out;
    }
    (h, caches)
}

/// Full forward pass keeping every intermediate needed for backprop.
pub(crate) fn forward_cached(
    inputs: &GraphInputs,
    params: &ModelParams,
    dropout: Option<(f64, &mut Rng)>,
) -> Result<ForwardCache> {
    check_input(inputs, params)?;
    let (encoded, steps) = encode(inputs, params, dropout);
    let rows = inputs.edge_rows(&encoded);
    let (logits, theta) = params.theta.forward_cached(rows);
    let probs = logits.column(0).iter().map(|&x| sigmoid(x)).collect();
    Ok(ForwardCache {
        steps,
        encoded,
        theta,
        probs,
    })
}

/// Encodes every node of `g`. Dropout is applied after each step only when
/// `training` is set and `dropout_prob > 0`; `rng` is untouched otherwise.
pub fn gcn_forward(
    g: &AffinityGraph,
    params: &ModelParams,
    dropout_prob: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<EncodedGraph> {
    if !(0.0..1.0).contains(&dropout_prob) {
        return Err(Error::InvalidConfig(format!(
            "dropout must be in [0, 1), got {dropout_prob}"
        )));
    }
    let inputs = GraphInputs::from_graph(g);
    check_input(&inputs, params)?;
    let dropout = training.then_some((dropout_prob, rng));
    let (h_prime, _) = encode(&inputs, params, dropout);
    Ok(EncodedGraph { h_prime })
}

/// Linkage probability for every edge of `inputs`, in edge order.
pub fn predict_edges(inputs: &GraphInputs, encoded: &EncodedGraph, params: &ModelParams) -> Vec<f64> {
    let rows = inputs.edge_rows(&encoded.h_prime);
    params
        .theta
        .forward(&rows)
        .column(0)
        .iter()
        .map(|&x| sigmoid(x))
        .collect()
}

/// Linkage probability of the directed pair `(i, j)` from encodings and
/// normalized positions.
pub fn predict_edge(hi: &[f64], gi: [f64; 2], hj: &[f64], gj: [f64; 2], params: &ModelParams) -> Result<f64> {
    let d = params.arch.output_dim();
    for h in [hi, hj] {
        if h.len() != d {
            return Err(Error::dim(d, h.len(), "node encoding"));
        }
    }
    let row: Vec<f64> = hi.iter().chain(&gi).chain(hj).chain(&gj).copied().collect();
    let x = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
    Ok(sigmoid(params.theta.forward(&x)[[0, 0]]))
}

/// `P(same) - P(different) = 2 r - 1`.
pub fn edge_coefficient(prob: f64) -> f64 {
    2.0 * prob - 1.0
}

/// Mean of `edge_coefficient(r_ij) * a_ij` over each node's out-edges; 0 for
/// nodes without out-edges.
pub fn node_density(g: &AffinityGraph, probs: &[f64]) -> Vec<f64> {
    debug_assert_eq!(probs.len(), g.edge_count());
    (0..g.node_count())
        .map(|i| {
            let range = g.out_range(i);
            if range.is_empty() {
                return 0.0;
            }
            let k = range.len() as f64;
            range
                .map(|e| edge_coefficient(probs[e]) * g.edges[e].score)
                .sum::<f64>()
                / k
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::GraphNode;
    use crate::model::{ModelConfig, ModelParams};
    use crate::rng;

    fn tiny_graph(pairs: &[(usize, usize)]) -> AffinityGraph {
        let nodes = vec![
            GraphNode::from_feature(&[1.0, 0.0], GroundPoint::new(0.0, 0.0), None, vec![0]),
            GraphNode::from_feature(&[0.6, 0.8], GroundPoint::new(4.0, 2.0), None, vec![1]),
            GraphNode::from_feature(&[0.0, 1.0], GroundPoint::new(2.0, 2.0), None, vec![2]),
        ];
        AffinityGraph::from_pairs(nodes, pairs, 1, 3).unwrap()
    }

    fn params(seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            mp_steps: 2,
            out_dim: 3,
            theta_hidden: 5,
            ..Default::default()
        };
        ModelParams::init_random(&cfg.resolve(2).unwrap(), seed)
    }

    #[test]
    fn edgeless_graph_uses_zero_aggregate() {
        let g = tiny_graph(&[]);
        let p = params(1);
        let mut r = rng::stream(0, "t", &[]);
        let enc = gcn_forward(&g, &p, 0.0, false, &mut r).unwrap();
        let x = GraphInputs::from_graph(&g).features;
        let zero = Array2::zeros(x.raw_dim());
        let first = p.steps[0].phi.forward(&concatenate![Axis(1), x, zero]);
        let zero = Array2::zeros(first.raw_dim());
        let second = p.steps[1].phi.forward(&concatenate![Axis(1), first, zero]);
        assert_eq!(enc.h_prime, second);
    }

    #[test]
    fn output_width_matches_last_step() {
        let cfg = ModelConfig::default();
        let arch = cfg.resolve(256).unwrap();
        let p = ModelParams::init(&arch, 0);
        let feature: Vec<f64> = (0..256).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let nodes = vec![
            GraphNode::from_feature(&feature, GroundPoint::new(0.0, 0.0), None, vec![0]),
            GraphNode::from_feature(&feature, GroundPoint::new(1.0, 0.0), None, vec![1]),
        ];
        let g = AffinityGraph::from_pairs(nodes, &[(0, 1)], 1, 2).unwrap();
        let mut r = rng::stream(0, "t", &[]);
        let enc = gcn_forward(&g, &p, 0.0, false, &mut r).unwrap();
        assert_eq!(enc.h_prime.dim(), (2, 48));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = tiny_graph(&[(0, 1)]);
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg.resolve(3).unwrap(), 0);
        let mut r = rng::stream(0, "t", &[]);
        assert!(matches!(
            gcn_forward(&g, &p, 0.0, false, &mut r),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn zero_classifier_gives_one_half() {
        let mut p = params(2);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let r = predict_edge(&[0.3, -1.0, 2.0], [0.0, 1.0], &[1.0, 1.0, 1.0], [0.5, 0.5], &p).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn direction_matters() {
        let p = params(3);
        let a = [0.3, -1.0, 2.0];
        let b = [1.0, 0.2, -0.4];
        let ij = predict_edge(&a, [0.0, 1.0], &b, [0.5, 0.5], &p).unwrap();
        let ji = predict_edge(&b, [0.5, 0.5], &a, [0.0, 1.0], &p).unwrap();
        assert_ne!(ij, ji);
        assert!(ij > 0.0 && ij < 1.0);
    }

    #[test]
    fn sigmoid_stays_open() {
        for x in [-1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4] {
            let p = sigmoid(x);
            assert!(p > 0.0 && p < 1.0, "{x} -> {p}");
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn edge_coefficient_examples() {
        assert_eq!(edge_coefficient(0.5), 0.0);
        assert!((edge_coefficient(0.7) - 0.4).abs() < 1e-15);
        assert!(edge_coefficient(1.0 - f64::EPSILON / 2.0) < 1.0);
    }

    #[test]
    fn density_examples() {
        // Node 0 with three out-edges to nodes whose scores we override.
        let nodes: Vec<GraphNode> = (0..4)
            .map(|i| GraphNode::from_feature(&[1.0, 0.0], GroundPoint::new(i as f64, 0.0), None, vec![i]))
            .collect();
        let mut g = AffinityGraph::from_pairs(nodes, &[(0, 1), (0, 2), (0, 3)], 1, 4).unwrap();
        for (e, a) in g.edges.iter_mut().zip([0.9, 0.8, 0.7]) {
            e.score = a;
        }
        let probs: Vec<f64> = [0.8, 0.6, -0.4].iter().map(|e| (e + 1.0) / 2.0).collect();
        let d = node_density(&g, &probs);
        assert!((d[0] - 0.92 / 3.0).abs() < 1e-12, "{}", d[0]);
        assert_eq!(&d[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn inference_and_training_agree_without_dropout() {
        let g = tiny_graph(&[(0, 1), (1, 2), (2, 0), (0, 2)]);
        let p = params(4);
        let mut r1 = rng::stream(1, "t", &[]);
        let mut r2 = rng::stream(2, "t", &[]);
        let a = gcn_forward(&g, &p, 0.0, false, &mut r1).unwrap();
        let b = gcn_forward(&g, &p, 0.0, true, &mut r2).unwrap();
        assert_eq!(a, b);
        let c = gcn_forward(&g, &p, 0.5, true, &mut r2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn aggregation_weights_are_row_normalized() {
        let g = tiny_graph(&[(0, 2), (1, 2)]);
        let inputs = GraphInputs::from_graph(&g);
        let w: f64 = inputs.in_neighbors[2].iter().map(|(_, w)| w.abs()).sum();
        assert!((w - 1.0).abs() < 1e-15);
        assert!(inputs.in_neighbors[0].is_empty());
    }

    #[test]
    fn positions_are_min_max_scaled() {
        let g = tiny_graph(&[]);
        let p = normalized_positions(&g);
        assert_eq!(p.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(p.row(1).to_vec(), vec![1.0, 1.0]);
        assert_eq!(p.row(2).to_vec(), vec![0.5, 1.0]);
    }
}
