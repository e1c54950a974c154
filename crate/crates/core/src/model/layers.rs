//! Dense layers with hand-written reverse-mode rules.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// He-uniform weights, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, and zero bias.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / input.max(1) as f64).sqrt();
        let mut draw = || (rng.random::<f64>() * 2.0 - 1.0) * bound;
        let weight = Array2::from_shape_simple_fn((output, input), &mut draw);
        let bias = Array1::zeros(output);
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

/// Parametric ReLU with a single trainable slope.
#[derive(Clone, Debug, PartialEq)]
pub struct Prelu {
    pub slope: f64,
}

pub const PRELU_INIT: f64 = 0.25;

impl Prelu {
    pub fn forward(&self, u: &Array2<f64>) -> Array2<f64> {
        let a = self.slope;
        u.mapv(|v| if v > 0.0 { v } else { a * v })
    }

    pub fn backward(&self, u: &Array2<f64>, da: &Array2<f64>, grad: &mut Prelu) -> Array2<f64> {
        let a = self.slope;
        let mut slope_grad = 0.0;
        let mut du = da.clone();
        ndarray::Zip::from(&mut du).and(u).for_each(|d, &v| {
            if v <= 0.0 {
                slope_grad += *d * v;
                *d *= a;
            }
        });
        grad.slope += slope_grad;
        du
    }
}

/// `second(prelu(first(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub first: Linear,
    pub act: Prelu,
    pub second: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct MlpCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            first: Linear::init(input, hidden, rng),
            act: Prelu { slope: PRELU_INIT },
            second: Linear::init(hidden, output, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            first: Linear::zeros(self.first.input_dim(), self.first.output_dim()),
            act: Prelu { slope: 0.0 },
            second: Linear::zeros(self.second.input_dim(), self.second.output_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.second.forward(&self.act.forward(&self.first.forward(x)))
    }

    pub(crate) fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.first.forward(&x);
        let hidden = self.act.forward(&pre);
        let out = self.second.forward(&hidden);
        (out, MlpCache { input: x, pre, hidden })
    }

    pub(crate) fn backward(&self, cache: &MlpCache, dout: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let dhidden = self.second.backward(&cache.hidden, dout, &mut grad.second);
        let dpre = self.act.backward(&cache.pre, &dhidden, &mut grad.act);
        self.first.backward(&cache.input, &dpre, &mut grad.first)
    }
}
