//! Reverse-mode gradients of the mean edge loss.
//!
//! Graphs in a batch are independent (a disjoint union), so each graph runs
//! its own forward and backward pass. Per-graph gradient sums are added in
//! batch order and divided by the batch's total edge count.

use ndarray::{s, Array2};

use super::loss::{edge_term, edge_term_grad, is_clamped};
use crate::groundtruth::LabeledGraph;
use crate::model::{forward_cached, ForwardCache, GraphInputs, ModelParams};
use crate::rng::{self, STREAM_DROPOUT};
use crate::{Error, Execution, Result};

/// A graph ready for training: model inputs plus per-edge labels.
#[derive(Clone, Debug)]
pub struct TrainGraph {
    pub inputs: GraphInputs,
    pub labels: Vec<u8>,
}

impl TrainGraph {
    pub fn new(inputs: GraphInputs, labels: Vec<u8>) -> Result<Self> {
        if inputs.edge_count() != labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} edges vs {} labels",
                inputs.edge_count(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn from_labeled(g: &LabeledGraph) -> Self {
        Self {
            inputs: GraphInputs::from_graph(&g.graph),
            labels: g.edge_labels.clone(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.labels.len()
    }
}

/// Dropout for one optimizer step. Graph `k` of the batch draws its masks
/// from the `(seed, step, k)` dropout stream.
#[derive(Clone, Copy, Debug)]
pub struct DropoutSpec {
    pub prob: f64,
    pub seed: u64,
    pub step: u64,
}

fn forward_one(
    graph: &TrainGraph,
    index: usize,
    params: &ModelParams,
    dropout: Option<DropoutSpec>,
) -> Result<ForwardCache> {
    match dropout {
        Some(d) if d.prob > 0.0 => {
            let mut rng = rng::stream(d.seed, STREAM_DROPOUT, &[d.step, index as u64]);
            forward_cached(&graph.inputs, params, Some((d.prob, &mut rng)))
        }
        _ => forward_cached(&graph.inputs, params, None),
    }
}

/// Summed loss and summed gradients of one graph.
fn graph_backward(
    graph: &TrainGraph,
    index: usize,
    params: &ModelParams,
    dropout: Option<DropoutSpec>,
) -> Result<(f64, ModelParams)> {
    let cache = forward_one(graph, index, params, dropout)?;
    let mut grad = params.zeros_like();
    let loss: f64 = cache
        .probs
        .iter()
        .zip(&graph.labels)
        .map(|(&r, &y)| edge_term(r, y))
        .sum();

    let dlogits = Array2::from_shape_fn((graph.edge_count(), 1), |(e, _)| {
        edge_term_grad(cache.probs[e], graph.labels[e])
    });
    let drows = params.theta.backward(&cache.theta, &dlogits, &mut grad.theta);

    let d = cache.encoded.ncols();
    let mut dh = Array2::zeros(cache.encoded.raw_dim());
    for (e, &(i, j)) in graph.inputs.edges.iter().enumerate() {
        let row = drows.row(e);
        let mut hi = dh.row_mut(i);
        hi += &row.slice(s![0..d]);
        let mut hj = dh.row_mut(j);
        hj += &row.slice(s![d + 2..2 * d + 2]);
    }

    for ((step, cache), g) in params.steps.iter().zip(&cache.steps).zip(grad.steps.iter_mut()).rev() {
        if let Some(mask) = &cache.mask {
            dh *= mask;
        }
        let dz = step.phi.backward(&cache.phi, &dh, &mut g.phi);
        let width = dz.ncols() / 2;
        let mut dx = dz.slice(s![.., ..width]).to_owned();
        let dagg = dz.slice(s![.., width..]).to_owned();
        let dmessages = graph.inputs.aggregate_backward(&dagg);
        dx += &step.psi.backward(&cache.psi, &dmessages, &mut g.psi);
        dh = dx;
    }
    Ok((loss, grad))
}

fn add_into(acc: &mut ModelParams, other: &ModelParams) {
    let src = other.tensors();
    for (dst, src) in acc.tensors_mut().into_iter().zip(src) {
        for (a, b) in dst.iter_mut().zip(src.data) {
            *a += b;
        }
    }
}

fn total_edges(graphs: &[TrainGraph]) -> Result<usize> {
    if graphs.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    match graphs.iter().map(TrainGraph::edge_count).sum() {
        0 => Err(Error::EmptyEdgeSet),
        n => Ok(n),
    }
}

/// Mean edge loss over the batch and its gradient with respect to every
/// parameter (same layout as `params`).
pub fn backward(
    graphs: &[TrainGraph],
    params: &ModelParams,
    dropout: Option<DropoutSpec>,
    exec: Execution,
) -> Result<(f64, ModelParams)> {
    let edges = total_edges(graphs)?;
    let per_graph = exec.map_indexed(graphs, |k, g| graph_backward(g, k, params, dropout));
    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    for result in per_graph {
        let (l, g) = result?;
        loss += l;
        add_into(&mut grad, &g);
    }
    let scale = 1.0 / edges as f64;
    for t in grad.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    for t in grad.tensors() {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(t.name));
        }
    }
    Ok((loss * scale, grad))
}

/// Mean edge loss over the batch without dropout.
pub fn batch_loss(graphs: &[TrainGraph], params: &ModelParams) -> Result<f64> {
    let edges = total_edges(graphs)?;
    let mut total = 0.0;
    for g in graphs {
        let cache = forward_cached(&g.inputs, params, None)?;
        total += cache
            .probs
            .iter()
            .zip(&g.labels)
            .map(|(&r, &y)| edge_term(r, y))
            .sum::<f64>();
    }
    Ok(total / edges as f64)
}

/// Which branch every piecewise-linear unit takes without dropout: the sign
/// of each PReLU pre-activation and whether each edge probability is
/// clamped in the loss. The loss is smooth in the parameters wherever this
/// stays constant.
pub fn forward_signature(graphs: &[TrainGraph], params: &ModelParams) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for g in graphs {
        let cache = forward_cached(&g.inputs, params, None)?;
        out.extend(cache.activation_pattern());
        out.extend(cache.probs.iter().zip(&g.labels).map(|(&r, &y)| is_clamped(r, y)));
    }
    Ok(out)
}
