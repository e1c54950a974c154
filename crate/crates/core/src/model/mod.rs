//! The learnable components: a message-passing node encoder and an edge
//! linkage classifier, plus the density and edge-coefficient read-outs.

mod checkpoint;
mod forward;
pub mod layers;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    edge_coefficient, gcn_forward, node_density, normalized_positions, predict_edge, predict_edges, EncodedGraph,
    GraphInputs,
};
pub(crate) use forward::{forward_cached, ForwardCache};
pub use layers::{Linear, Mlp, Prelu};

use crate::rng::{self, STREAM_INIT};
use crate::{Error, Result};

/// User-facing model settings. The input width comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of message-passing steps.
    pub mp_steps: usize,
    /// Width of the final node encoding.
    pub out_dim: usize,
    /// Explicit per-step output widths; overrides the halving rule.
    pub step_dims: Option<Vec<usize>>,
    /// Hidden width of each step's message network (default: step input width).
    pub psi_hidden: Option<usize>,
    /// Hidden width of each step's update network (default: step input width).
    pub phi_hidden: Option<usize>,
    pub theta_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mp_steps: 2,
            out_dim: 48,
            step_dims: None,
            psi_hidden: None,
            phi_hidden: None,
            theta_hidden: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDims {
    pub input: usize,
    pub psi_hidden: usize,
    pub phi_hidden: usize,
    pub output: usize,
}

/// Fully resolved layer widths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Half-width `D`: the appearance embedding dimension. Node inputs are `2 D` wide.
    pub embed_dim: usize,
    pub steps: Vec<StepDims>,
    pub theta_hidden: usize,
}

impl ModelConfig {
    /// Resolves layer widths for embeddings of dimension `embed_dim`.
    ///
    /// Without explicit `step_dims`, step `s` of `S` outputs
    /// `max(out_dim, 2D / 2^s)` and the last step outputs `out_dim`; for
    /// `D = 256, S = 2` this gives `512 -> 256 -> 48`.
    pub fn resolve(&self, embed_dim: usize) -> Result<Architecture> {
        if self.mp_steps == 0 {
            return Err(Error::InvalidConfig("mp_steps must be >= 1".into()));
        }
        if embed_dim == 0 || self.out_dim == 0 || self.theta_hidden == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let input = 2 * embed_dim;
        let outputs: Vec<usize> = match &self.step_dims {
            Some(dims) => {
                if dims.len() != self.mp_steps {
                    return Err(Error::InvalidConfig(format!(
                        "step_dims has {} entries but mp_steps = {}",
                        dims.len(),
                        self.mp_steps
                    )));
                }
                if dims.contains(&0) {
                    return Err(Error::InvalidConfig("step_dims entries must be positive".into()));
                }
                dims.clone()
            }
            None => (1..=self.mp_steps)
                .map(|s| {
                    if s == self.mp_steps {
                        self.out_dim
                    } else {
                        (input >> s.min(63)).max(self.out_dim)
                    }
                })
                .collect(),
        };
        let mut steps = Vec::with_capacity(outputs.len());
        let mut width = input;
        for output in outputs {
            steps.push(StepDims {
                input: width,
                psi_hidden: self.psi_hidden.unwrap_or(width),
                phi_hidden: self.phi_hidden.unwrap_or(width),
                output,
            });
            width = output;
        }
        if steps.iter().any(|s| s.psi_hidden == 0 || s.phi_hidden == 0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(Architecture {
            embed_dim,
            steps,
            theta_hidden: self.theta_hidden,
        })
    }
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn output_dim(&self) -> usize {
        self.steps.last().map_or(self.input_dim(), |s| s.output)
    }

    /// Classifier input: two node encodings plus two normalized positions.
    pub fn theta_input(&self) -> usize {
        2 * (self.output_dim() + 2)
    }
}

/// One message-passing step: `h' = phi([h, sum_j w_ji psi(h_j)])`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnStep {
    pub psi: Mlp,
    pub phi: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub steps: Vec<GcnStep>,
    pub theta: Mlp,
}

/// Name, shape and values of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl ModelParams {
    /// Fan-in uniform initialization from the seed's `init` stream. The
    /// classifier's output layer starts at zero, so every edge initially
    /// scores exactly 0.5.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut params = Self::init_random(arch, seed);
        params.theta.second = Linear::zeros(arch.theta_hidden, 1);
        params
    }

    /// Like [`ModelParams::init`] but with a random classifier output layer.
    pub fn init_random(arch: &Architecture, seed: u64) -> Self {
        let mut rng = rng::stream(seed, STREAM_INIT, &[]);
        let steps = arch
            .steps
            .iter()
            .map(|d| GcnStep {
                psi: Mlp::init(d.input, d.psi_hidden, d.input, &mut rng),
                phi: Mlp::init(2 * d.input, d.phi_hidden, d.output, &mut rng),
            })
            .collect();
        let theta = Mlp::init(arch.theta_input(), arch.theta_hidden, 1, &mut rng);
        Self {
            arch: arch.clone(),
            steps,
            theta,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| GcnStep {
                    psi: s.psi.zeros_like(),
                    phi: s.phi.zeros_like(),
                })
                .collect(),
            theta: self.theta.zeros_like(),
        }
    }

    fn mlps(&self) -> Vec<(String, &Mlp)> {
        let mut out = Vec::new();
        for (s, step) in self.steps.iter().enumerate() {
            out.push((format!("gcn.{s}.psi"), &step.psi));
            out.push((format!("gcn.{s}.phi"), &step.phi));
        }
        out.push(("theta".to_string(), &self.theta));
        out
    }

    fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        let mut out = Vec::new();
        for step in &mut self.steps {
            out.push(&mut step.psi);
            out.push(&mut step.phi);
        }
        out.push(&mut self.theta);
        out
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (prefix, mlp) in self.mlps() {
            for (tag, layer) in [("0", &mlp.first), ("1", &mlp.second)] {
                out.push(TensorView {
                    name: format!("{prefix}.{tag}.weight"),
                    shape: layer.weight.shape().to_vec(),
                    data: layer.weight.as_slice().expect("standard layout"),
                });
                out.push(TensorView {
                    name: format!("{prefix}.{tag}.bias"),
                    shape: layer.bias.shape().to_vec(),
                    data: layer.bias.as_slice().expect("standard layout"),
                });
                if tag == "0" {
                    out.push(TensorView {
                        name: format!("{prefix}.act.slope"),
                        shape: vec![1],
                        data: std::slice::from_ref(&mlp.act.slope),
                    });
                }
            }
        }
        out
    }

    /// Mutable slices in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for mlp in self.mlps_mut() {
            let Mlp { first, act, second } = mlp;
            out.push(first.weight.as_slice_mut().expect("standard layout"));
            out.push(first.bias.as_slice_mut().expect("standard layout"));
            out.push(std::slice::from_mut(&mut act.slope));
            out.push(second.weight.as_slice_mut().expect("standard layout"));
            out.push(second.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
