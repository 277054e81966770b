use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stable::logistic;
use super::tape::{Grads, Tape, Var};
use super::tensor::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => logistic(v),
            Activation::Identity => v,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer: `act(x W + b)` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("mlp layers"));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Dimension {
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                    context: "mlp layer chaining",
                });
            }
        }
        for l in &layers {
            if l.bias.shape() != (1, l.output_dim()) {
                return Err(Error::Dimension {
                    expected: l.output_dim(),
                    got: l.bias.len(),
                    context: "mlp bias",
                });
            }
        }
        Ok(MlpParams { layers })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| {
                let limit = (6.0 / (d[0] + d[1]) as f64).sqrt();
                let data = (0..d[0] * d[1]).map(|_| rng.random_range(-limit..=limit)).collect();
                Layer {
                    weight: Matrix::from_vec(d[0], d[1], data).expect("shape"),
                    bias: Matrix::zeros(1, d[1]),
                    activation,
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| Layer {
                weight: Matrix::zeros(d[0], d[1]),
                bias: Matrix::zeros(1, d[1]),
                activation,
            })
            .collect();
        MlpParams { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights and biases in layer order, for optimizers.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    /// Forward pass on a batch: rows of `x` are samples.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.cols(),
                context: "mlp input",
            });
        }
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = h.matmul(&l.weight);
            let b = l.bias.as_slice();
            let n = z.cols();
            for (i, v) in z.as_mut_slice().iter_mut().enumerate() {
                *v = l.activation.apply(*v + b[i % n]);
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row(x))?.into_vec())
    }

    /// Push every parameter onto `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
                activation: l.activation,
            })
            .collect();
        BoundMlp { layers }
    }
}

/// Convenience wrapper matching the single-sample signature.
pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    p.forward(x)
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

/// An [`MlpParams`] whose tensors live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<BoundLayer>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            let z = tape.matmul(h, l.weight)?;
            let z = tape.add_row(z, l.bias)?;
            h = match l.activation {
                Activation::Relu => tape.relu(z),
                Activation::Sigmoid => tape.sigmoid(z),
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Gradient tensors in the order of [`MlpParams::tensors_mut`].
    pub fn grads(&self, grads: &Grads) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [grads.wrt(l.weight), grads.wrt(l.bias)])
            .collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}
