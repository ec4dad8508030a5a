//! Parameter tensors and the small layers built from them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};

/// A named, row-major parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Affine map `W x + b` referencing tensors by index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Linear {
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Var {
        let y = tape.matvec(params[self.weight], x, self.out_dim, self.in_dim);
        match self.bias {
            Some(b) => tape.add(y, params[b]),
            None => y,
        }
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

/// Fully connected stack with an activation between layers and a linear
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h);
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Softplus => tape.softplus(h),
                };
            }
        }
        h
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim
    }
}

/// Allocates tensors in a fixed order with Glorot-uniform weights and zero
/// biases.
pub struct ParamBuilder<'a> {
    pub tensors: Vec<Tensor>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { tensors: Vec::new(), rng }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> usize {
        self.tensors.push(Tensor { name, shape, data });
        self.tensors.len() - 1
    }

    /// `gain` scales the Glorot bound.
    pub fn linear(&mut self, name: &str, out_dim: usize, in_dim: usize, bias: bool, gain: f64) -> Linear {
        let bound = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| if bound > 0.0 { self.rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        let weight = self.push(format!("{name}.weight"), vec![out_dim, in_dim], w);
        let bias = bias.then(|| self.push(format!("{name}.bias"), vec![out_dim], vec![0.0; out_dim]));
        Linear { weight, bias, out_dim, in_dim }
    }

    /// `widths = [in, hidden..., out]`; the last layer uses `out_gain`.
    pub fn mlp(&mut self, name: &str, widths: &[usize], out_gain: f64, activation: Activation) -> Mlp {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { 1.0 };
                self.linear(&format!("{name}.{i}"), widths[i + 1], widths[i], true, gain)
            })
            .collect();
        Mlp { layers, activation }
    }
}

/// Places every tensor on the tape as a leaf, in tensor order.
pub fn bind(tape: &mut Tape, tensors: &[Tensor]) -> Vec<Var> {
    tensors.iter().map(|t| tape.leaf(t.data.clone())).collect()
}
