//! Multilayer perceptrons built from dense layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{matmul_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine map `x·W + b` followed by an activation. `W` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (_, out) = weight.dims2("dense")?;
        if bias.shape() != [1, out] {
            return Err(DiffError::ShapeMismatch {
                op: "dense",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(vec![input, output]),
            bias: Tensor::zeros(vec![1, output]),
            activation,
        }
    }

    /// Glorot-uniform weights (He-uniform for ReLU), zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / input as f64).sqrt(),
            _ => (6.0 / (input + output) as f64).sqrt(),
        };
        let values = (0..input * output).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            weight: Tensor::matrix(input, output, values).expect("dense shape"),
            bias: Tensor::zeros(vec![1, output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Tape handles for an [`Mlp`]'s parameters, in [`Mlp::parameters`] order.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub params: Vec<Var>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DiffError::Checkpoint("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(DiffError::ShapeMismatch {
                    op: "mlp",
                    left: pair[0].weight.shape().to_vec(),
                    right: pair[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised network with widths `sizes[0] → … → sizes[n]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output widths");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::init(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.is_finite())
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let (rows, cols) = input.dims2("forward_mlp")?;
        if cols != self.input_dim() {
            return Err(DiffError::ShapeMismatch {
                op: "forward_mlp",
                left: input.shape().to_vec(),
                right: self.layers[0].weight.shape().to_vec(),
            });
        }
        Ok(rows)
    }

    /// Evaluates the network without recording anything.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let rows = self.check_input(input)?;
        let mut current = input.values().to_vec();
        for layer in &self.layers {
            let (k, n) = (layer.input_dim(), layer.output_dim());
            let mut out = Vec::with_capacity(rows * n);
            for _ in 0..rows {
                out.extend_from_slice(layer.bias.values());
            }
            matmul_acc(&current, layer.weight.values(), &mut out, rows, k, n);
            if layer.activation != Activation::Identity {
                out.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            current = out;
        }
        Tensor::matrix(rows, self.output_dim(), current)
    }

    /// Records the forward pass on `tape` and returns the output together with
    /// the parameter handles needed to read gradients back.
    pub fn record(&self, tape: &mut Tape, input: Var) -> Result<(Var, MlpVars)> {
        self.check_input(tape.value(input))?;
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        let mut x = input;
        for layer in &self.layers {
            let w = tape.param(&layer.weight);
            let b = tape.param(&layer.bias);
            params.push(w);
            params.push(b);
            let affine = tape.matmul(x, w)?;
            let pre = tape.add(affine, b)?;
            x = match layer.activation {
                Activation::Tanh => tape.tanh(pre),
                Activation::Relu => tape.relu(pre),
                Activation::Identity => pre,
            };
        }
        Ok((x, MlpVars { params }))
    }
}

/// Gradient accumulator matching a parameter list.
///
/// Gradients add up across backward passes until [`ParamGrads::zero`] is
/// called.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub tensors: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Self {
            tensors: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.tensors.len() {
            return Err(DiffError::GradientCount {
                expected: self.tensors.len(),
                actual: grads.len(),
            });
        }
        for (acc, g) in self.tensors.iter_mut().zip(grads) {
            acc.add_scaled(g, 1.0)?;
        }
        Ok(())
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
