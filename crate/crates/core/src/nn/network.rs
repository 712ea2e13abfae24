use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Dense layer computing `act(x W + b)` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::dims(weights.cols(), bias.len()));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dims(pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        Ok(Network { layers })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases. Weights are drawn layer by layer in row-major order.
    pub fn init(rng: &mut Rng, input_dim: usize, spec: &[(usize, Activation)]) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for &(fan_out, activation) in spec {
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::invalid("layer widths must be positive"));
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                Matrix::from_fn(fan_in, fan_out, |_, _| limit * (2.0 * rng.uniform() - 1.0));
            layers.push(Layer::new(weights, vec![0.0; fan_out], activation)?);
            fan_in = fan_out;
        }
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Parameter `i` in the flat order: layer by layer, weights row-major,
    /// then bias.
    pub fn param(&self, i: usize) -> f64 {
        let (l, j) = self.locate(i);
        let layer = &self.layers[l];
        let nw = layer.weights.data().len();
        if j < nw {
            layer.weights.data()[j]
        } else {
            layer.bias[j - nw]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let (l, j) = self.locate(i);
        let layer = &mut self.layers[l];
        let nw = layer.weights.data().len();
        if j < nw {
            layer.weights.data_mut()[j] = v;
        } else {
            layer.bias[j - nw] = v;
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.num_params();
            if i < n {
                return (l, i);
            }
            i -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Output only.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        let mut acts = forward(self, batch)?;
        Ok(acts.post.pop().expect("network has layers"))
    }
}

/// Every intermediate of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub input: Matrix,
    /// `x W + b` per layer.
    pub pre: Vec<Matrix>,
    /// Activation outputs per layer.
    pub post: Vec<Matrix>,
}

impl Activations {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("network has layers")
    }

    /// Input to layer `l` (the batch for `l = 0`).
    fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

pub fn forward(net: &Network, batch: &Matrix) -> Result<Activations> {
    if batch.cols() != net.input_dim() {
        return Err(Error::dims(net.input_dim(), batch.cols()));
    }
    let mut pre = Vec::with_capacity(net.depth());
    let mut post: Vec<Matrix> = Vec::with_capacity(net.depth());
    for layer in &net.layers {
        let input = post.last().unwrap_or(batch);
        let mut z = input.matmul(&layer.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let act = layer.activation;
        post.push(z.map(|v| act.apply(v)));
        pre.push(z);
    }
    Ok(Activations {
        input: batch.clone(),
        pre,
        post,
    })
}

/// Gradients shaped like a [`Network`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(net: &Network) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len()
            })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Grads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::dims(self.layers.len(), other.layers.len()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            if a.bias.len() != b.bias.len() {
                return Err(Error::dims(a.bias.len(), b.bias.len()));
            }
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.weights.scale(s);
            g.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.is_finite() && g.bias.iter().all(|b| b.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub grads: Grads,
    /// Gradient with respect to the input batch.
    pub input_grad: Matrix,
}

/// Reverse-mode gradients given `upstream = ∂loss/∂output`.
pub fn backward(net: &Network, acts: &Activations, upstream: &Matrix) -> Result<Backward> {
    backward_from(net, acts, net.depth(), upstream)
}

/// Backpropagates a gradient taken with respect to the output of layer
/// `depth - 1` through layers `depth - 1, …, 0`. Layers at or beyond `depth`
/// receive zero gradient.
pub fn backward_from(
    net: &Network,
    acts: &Activations,
    depth: usize,
    upstream: &Matrix,
) -> Result<Backward> {
    if depth == 0 || depth > net.depth() {
        return Err(Error::invalid(format!(
            "depth {depth} outside 1..={}",
            net.depth()
        )));
    }
    if acts.post.len() != net.depth() {
        return Err(Error::dims(net.depth(), acts.post.len()));
    }
    let target = &acts.post[depth - 1];
    if upstream.shape() != target.shape() {
        return Err(Error::dims(target.data().len(), upstream.data().len()));
    }
    let mut grads = Grads::zeros_like(net);
    let mut delta_out = upstream.clone();
    for l in (0..depth).rev() {
        let layer = &net.layers[l];
        let act = layer.activation;
        let delta = acts.pre[l].zip_map(&acts.post[l], |x, y| act.derivative(x, y))?;
        let delta = delta.zip_map(&delta_out, |d, g| d * g)?;
        grads.layers[l].weights = acts.layer_input(l).t_matmul(&delta)?;
        grads.layers[l].bias = delta.column_sums();
        delta_out = delta.matmul_t(&layer.weights)?;
    }
    Ok(Backward {
        grads,
        input_grad: delta_out,
    })
}
