//! Small feed-forward networks used as certificate and controller templates.
//!
//! Besides the usual forward/backward passes, every pass carries a tangent
//! vector: feeding `(x, ẋ)` yields `(N(x), ∇N(x)·ẋ)`. With `ẋ = f(x)` this is
//! the Lie derivative of the network along the vector field, and the backward
//! pass differentiates through it, giving parameter gradients of `V̇` and the
//! sensitivity of `V̇` to `f` (which is how controllers receive gradients).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{sigmoid, softplus, Expr, Function};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
    #[error("{0} activations cannot be translated into a verifiable expression")]
    NotVerifiable(Activation),
    #[error("malformed weight dump: {0}")]
    Dump(String),
}

/// Hidden-layer activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    /// `z^k`; `Poly(2)` is the square activation.
    Poly(u32),
    Sigmoid,
    Tanh,
    Softplus,
    /// Training-only: it has no single-formula SMT encoding.
    Relu,
}

impl Activation {
    pub const SQUARE: Activation = Activation::Poly(2);

    /// Value, first and second derivative at `z`.
    #[inline]
    pub fn eval3(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Linear => (z, 1.0, 0.0),
            Activation::Poly(k) => {
                let k = k as i32;
                let kf = k as f64;
                match k {
                    0 => (1.0, 0.0, 0.0),
                    1 => (z, 1.0, 0.0),
                    2 => (z * z, 2.0 * z, 2.0),
                    _ => (
                        z.powi(k),
                        kf * z.powi(k - 1),
                        kf * (kf - 1.0) * z.powi(k - 2),
                    ),
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                (softplus(z), s, s * (1.0 - s))
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }

    /// Maps 0 to 0, so a bias-free network vanishes at the origin.
    pub fn fixes_zero(self) -> bool {
        matches!(self, Activation::Linear | Activation::Tanh | Activation::Relu)
            || matches!(self, Activation::Poly(k) if k >= 1)
    }

    pub fn is_verifiable(self) -> bool {
        self != Activation::Relu
    }

    pub fn to_expr(self, z: Expr) -> Result<Expr, NetError> {
        Ok(match self {
            Activation::Linear => z,
            Activation::Poly(k) => Expr::pow(z, k),
            Activation::Sigmoid => Expr::call(Function::Sigmoid, z),
            Activation::Tanh => Expr::call(Function::Tanh, z),
            Activation::Softplus => Expr::call(Function::Softplus, z),
            Activation::Relu => return Err(NetError::NotVerifiable(self)),
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Linear => f.write_str("LINEAR"),
            Activation::Poly(2) => f.write_str("SQUARE"),
            Activation::Poly(k) => write!(f, "POLY_{k}"),
            Activation::Sigmoid => f.write_str("SIGMOID"),
            Activation::Tanh => f.write_str("TANH"),
            Activation::Softplus => f.write_str("SOFTPLUS"),
            Activation::Relu => f.write_str("RELU"),
        }
    }
}

impl FromStr for Activation {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, NetError> {
        Ok(match s.trim() {
            "LINEAR" => Activation::Linear,
            "SQUARE" => Activation::SQUARE,
            "SIGMOID" => Activation::Sigmoid,
            "TANH" => Activation::Tanh,
            "SOFTPLUS" => Activation::Softplus,
            "RELU" => Activation::Relu,
            other => match other.strip_prefix("POLY_").and_then(|k| k.parse::<u32>().ok()) {
                Some(k) if k >= 1 => Activation::Poly(k),
                _ => return Err(NetError::UnknownActivation(other.to_string())),
            },
        })
    }
}

impl Serialize for Activation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Layer widths and activations of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_dim: usize,
    pub bias: bool,
}

impl NetworkShape {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        activations: Vec<Activation>,
        output_dim: usize,
        bias: bool,
    ) -> Result<Self, NetError> {
        let shape = NetworkShape {
            input_dim,
            hidden,
            activations,
            output_dim,
            bias,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.hidden.len() != self.activations.len() {
            return Err(NetError::Shape(format!(
                "{} hidden layers but {} activations",
                self.hidden.len(),
                self.activations.len()
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NetError::Shape("input and output widths must be positive".into()));
        }
        if let Some(i) = self.hidden.iter().position(|w| *w == 0) {
            return Err(NetError::Shape(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }

    /// Input 0 maps to output 0 for every parameter setting.
    pub fn vanishes_at_origin(&self) -> bool {
        !self.bias && self.activations.iter().all(|a| a.fixes_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: Option<usize>,
    activation: Activation,
}

/// A feed-forward network with all trainable parameters, including named
/// scalar level values, in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    shape: NetworkShape,
    layers: Vec<Layer>,
    params: Vec<f64>,
    level_names: Vec<String>,
    levels_at: usize,
}

/// Per-sample intermediate values kept for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    a: Vec<Vec<f64>>,
    adot: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    zdot: Vec<Vec<f64>>,
}

impl Network {
    /// Builds a network with weights drawn from `U(-1/√fan_in, 1/√fan_in)`;
    /// level values start at zero.
    pub fn init(shape: NetworkShape, levels: &[&str], seed: u64) -> Result<Network, NetError> {
        shape.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut fan_in = shape.input_dim;
        let widths = shape.hidden.iter().copied().chain(std::iter::once(shape.output_dim));
        let acts = shape.activations.iter().copied().chain(std::iter::once(Activation::Linear));
        for (width, activation) in widths.zip(acts) {
            let weights = offset;
            offset += width * fan_in;
            let bias = shape.bias.then(|| {
                let b = offset;
                offset += width;
                b
            });
            layers.push(Layer {
                inputs: fan_in,
                outputs: width,
                weights,
                bias,
                activation,
            });
            fan_in = width;
        }
        let levels_at = offset;
        let mut params = vec![0.0; offset + levels.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let end = layer.bias.map(|b| b + layer.outputs).unwrap_or(layer.weights + layer.outputs * layer.inputs);
            for p in &mut params[layer.weights..end] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Network {
            shape,
            layers,
            params,
            level_names: levels.iter().map(|s| s.to_string()).collect(),
            levels_at,
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.shape.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn level_names(&self) -> &[String] {
        &self.level_names
    }

    /// Index of a level value inside [`Network::params`].
    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.level_names.iter().position(|n| n == name).map(|i| self.levels_at + i)
    }

    pub fn level(&self, name: &str) -> Option<f64> {
        self.level_index(name).map(|i| self.params[i])
    }

    pub fn set_level(&mut self, name: &str, value: f64) -> bool {
        match self.level_index(name) {
            Some(i) => {
                self.params[i] = value;
                true
            }
            None => false,
        }
    }

    pub fn levels(&self) -> Vec<(String, f64)> {
        self.level_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), self.params[self.levels_at + i]))
            .collect()
    }

    /// Weights of layer `l` (hidden layers first, output last), row-major
    /// `outputs x inputs`.
    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let layer = &self.layers[l];
        &self.params[layer.weights..layer.weights + layer.outputs * layer.inputs]
    }

    pub fn layer_bias(&self, l: usize) -> Option<&[f64]> {
        let layer = &self.layers[l];
        layer.bias.map(|b| &self.params[b..b + layer.outputs])
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Overwrites layer `l`; used by tests and by weight-dump loading.
    pub fn set_layer(&mut self, l: usize, weights: &[f64], bias: Option<&[f64]>) -> Result<(), NetError> {
        let layer = self.layers[l].clone();
        if weights.len() != layer.outputs * layer.inputs {
            return Err(NetError::Shape(format!(
                "layer {l} expects {} weights, got {}",
                layer.outputs * layer.inputs,
                weights.len()
            )));
        }
        self.params[layer.weights..layer.weights + weights.len()].copy_from_slice(weights);
        match (layer.bias, bias) {
            (Some(b), Some(values)) if values.len() == layer.outputs => {
                self.params[b..b + layer.outputs].copy_from_slice(values);
            }
            (None, None) => {}
            (Some(_), None) => {}
            _ => return Err(NetError::Shape(format!("bias mismatch in layer {l}"))),
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        let zero = vec![0.0; x.len()];
        self.forward_tangent(x, &zero, &mut tape).0
    }

    /// Forward pass carrying the tangent `xdot`: returns the outputs and
    /// their directional derivatives `J(x)·xdot`.
    pub fn forward_tangent(&self, x: &[f64], xdot: &[f64], tape: &mut Tape) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.shape.input_dim);
        let depth = self.layers.len();
        tape.a.resize(depth + 1, Vec::new());
        tape.adot.resize(depth + 1, Vec::new());
        tape.z.resize(depth, Vec::new());
        tape.zdot.resize(depth, Vec::new());
        tape.a[0].clear();
        tape.a[0].extend_from_slice(x);
        tape.adot[0].clear();
        tape.adot[0].extend_from_slice(xdot);
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &self.params[layer.weights..layer.weights + layer.outputs * layer.inputs];
            let (head, tail) = tape.a.split_at_mut(l + 1);
            let (dhead, dtail) = tape.adot.split_at_mut(l + 1);
            let (a_in, adot_in) = (&head[l], &dhead[l]);
            let z = &mut tape.z[l];
            let zdot = &mut tape.zdot[l];
            z.clear();
            zdot.clear();
            for j in 0..layer.outputs {
                let row = &w[j * layer.inputs..(j + 1) * layer.inputs];
                let mut s = layer.bias.map(|b| self.params[b + j]).unwrap_or(0.0);
                let mut sd = 0.0;
                for k in 0..layer.inputs {
                    s += row[k] * a_in[k];
                    sd += row[k] * adot_in[k];
                }
                z.push(s);
                zdot.push(sd);
            }
            let a_out = &mut tail[0];
            let adot_out = &mut dtail[0];
            a_out.clear();
            adot_out.clear();
            for j in 0..layer.outputs {
                let (v, d1, _) = layer.activation.eval3(z[j]);
                a_out.push(v);
                adot_out.push(d1 * zdot[j]);
            }
        }
        (tape.a[depth].clone(), tape.adot[depth].clone())
    }

    /// Reverse pass through [`Network::forward_tangent`].
    ///
    /// `g_out` and `g_out_dot` are the loss gradients with respect to the
    /// outputs and their tangents. Parameter gradients are accumulated into
    /// `grads`; the returned pair holds the gradients with respect to `x`
    /// and to the input tangent.
    pub fn backward_tangent(
        &self,
        tape: &Tape,
        g_out: &[f64],
        g_out_dot: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut ga = g_out.to_vec();
        let mut gadot = g_out_dot.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.z[l];
            let zdot = &tape.zdot[l];
            let mut gz = vec![0.0; layer.outputs];
            let mut gzdot = vec![0.0; layer.outputs];
            for j in 0..layer.outputs {
                let (_, d1, d2) = layer.activation.eval3(z[j]);
                gz[j] = ga[j] * d1 + gadot[j] * d2 * zdot[j];
                gzdot[j] = gadot[j] * d1;
            }
            let a_in = &tape.a[l];
            let adot_in = &tape.adot[l];
            let w = &self.params[layer.weights..layer.weights + layer.outputs * layer.inputs];
            let mut ga_prev = vec![0.0; layer.inputs];
            let mut gadot_prev = vec![0.0; layer.inputs];
            for j in 0..layer.outputs {
                let row = layer.weights + j * layer.inputs;
                for k in 0..layer.inputs {
                    grads[row + k] += gz[j] * a_in[k] + gzdot[j] * adot_in[k];
                    let wjk = w[j * layer.inputs + k];
                    ga_prev[k] += wjk * gz[j];
                    gadot_prev[k] += wjk * gzdot[j];
                }
                if let Some(b) = layer.bias {
                    grads[b + j] += gz[j];
                }
            }
            ga = ga_prev;
            gadot = gadot_prev;
        }
        (ga, gadot)
    }

    /// Outputs and exact input gradients for a batch.
    ///
    /// `values[s][k]` is output `k` at sample `s`; `gradients[s][k]` is
    /// `∂out_k/∂x` at that sample.
    pub fn forward_with_gradient(&self, states: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let n = self.shape.input_dim;
        let m = self.shape.output_dim;
        let zero = vec![0.0; n];
        let zero_out = vec![0.0; m];
        let mut scratch = vec![0.0; self.params.len()];
        let mut tape = Tape::default();
        let mut values = Vec::with_capacity(states.len());
        let mut gradients = Vec::with_capacity(states.len());
        for x in states {
            let (out, _) = self.forward_tangent(x, &zero, &mut tape);
            let mut per_output = Vec::with_capacity(m);
            for k in 0..m {
                let mut seed = vec![0.0; m];
                seed[k] = 1.0;
                per_output.push(self.backward_tangent(&tape, &seed, &zero_out, &mut scratch).0);
            }
            values.push(out);
            gradients.push(per_output);
        }
        (values, gradients)
    }

    /// Exact symbolic unrolling over the given input expressions.
    pub fn to_expression(&self, inputs: &[Expr]) -> Result<Vec<Expr>, NetError> {
        if inputs.len() != self.shape.input_dim {
            return Err(NetError::Shape(format!(
                "network takes {} inputs, got {} expressions",
                self.shape.input_dim,
                inputs.len()
            )));
        }
        let mut current: Vec<Expr> = inputs.to_vec();
        for layer in &self.layers {
            let w = &self.params[layer.weights..layer.weights + layer.outputs * layer.inputs];
            let mut next = Vec::with_capacity(layer.outputs);
            for j in 0..layer.outputs {
                let row = &w[j * layer.inputs..(j + 1) * layer.inputs];
                let terms = row
                    .iter()
                    .zip(&current)
                    .map(|(wk, a)| Expr::mul(Expr::Const(*wk), a.clone()));
                let bias = layer.bias.map(|b| self.params[b + j]).unwrap_or(0.0);
                let pre = Expr::add(Expr::sum(terms), Expr::Const(bias));
                next.push(layer.activation.to_expr(pre)?);
            }
            current = next;
        }
        Ok(current)
    }

    /// Unrolling over the state variables `x0..x{n-1}`.
    pub fn to_state_expression(&self) -> Result<Vec<Expr>, NetError> {
        let inputs: Vec<Expr> = (0..self.shape.input_dim).map(Expr::state).collect();
        self.to_expression(&inputs)
    }

    pub fn dump(&self) -> NetworkDump {
        NetworkDump {
            input_dim: self.shape.input_dim,
            hidden: self.shape.hidden.clone(),
            activations: self.shape.activations.clone(),
            output_dim: self.shape.output_dim,
            bias: self.shape.bias,
            layers: (0..self.layers.len())
                .map(|l| LayerDump {
                    weights: self.layer_weights(l).to_vec(),
                    bias: self.layer_bias(l).map(<[f64]>::to_vec),
                })
                .collect(),
            levels: self.levels(),
        }
    }

    pub fn from_dump(dump: &NetworkDump) -> Result<Network, NetError> {
        let shape = NetworkShape::new(
            dump.input_dim,
            dump.hidden.clone(),
            dump.activations.clone(),
            dump.output_dim,
            dump.bias,
        )?;
        let names: Vec<&str> = dump.levels.iter().map(|(n, _)| n.as_str()).collect();
        let mut net = Network::init(shape, &names, 0)?;
        if dump.layers.len() != net.layers.len() {
            return Err(NetError::Dump(format!(
                "{} layers listed, shape implies {}",
                dump.layers.len(),
                net.layers.len()
            )));
        }
        for (l, layer) in dump.layers.iter().enumerate() {
            net.set_layer(l, &layer.weights, layer.bias.as_deref())?;
        }
        for (name, value) in &dump.levels {
            net.set_level(name, *value);
        }
        Ok(net)
    }
}

/// Machine-readable weight dump: widths, activations and row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDump {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_dim: usize,
    pub bias: bool,
    pub layers: Vec<LayerDump>,
    #[serde(default)]
    pub levels: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDump {
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_net() -> Network {
        // V = (x0)^2 + (x1)^2 via identity hidden weights and unit output weights
        let shape = NetworkShape::new(2, vec![2], vec![Activation::SQUARE], 1, false).unwrap();
        let mut net = Network::init(shape, &[], 0).unwrap();
        net.set_layer(0, &[1.0, 0.0, 0.0, 1.0], None).unwrap();
        net.set_layer(1, &[1.0, 1.0], None).unwrap();
        net
    }

    pub(crate) fn random_net(acts: Vec<Activation>, bias: bool, seed: u64) -> Network {
        let hidden = vec![4; acts.len()];
        let shape = NetworkShape::new(3, hidden, acts, 2, bias).unwrap();
        Network::init(shape, &["beta"], seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let shape = NetworkShape::new(2, vec![5], vec![Activation::SQUARE], 1, false).unwrap();
        let a = Network::init(shape.clone(), &[], 42).unwrap();
        let b = Network::init(shape, &[], 42).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.forward(&[0.0, 0.0]), vec![0.0]);

        let shape = NetworkShape::new(
            2,
            vec![4, 5],
            vec![Activation::Sigmoid, Activation::SQUARE],
            1,
            true,
        )
        .unwrap();
        let net = Network::init(shape, &[], 1).unwrap();
        assert_eq!(net.num_layers(), 3);
        assert_eq!(net.layer_weights(0).len(), 4 * 2);
        assert_eq!(net.layer_weights(1).len(), 5 * 4);
        assert_eq!(net.layer_weights(2).len(), 5);
        for l in 0..3 {
            let bound = 1.0 / ([2.0f64, 4.0, 5.0][l]).sqrt();
            assert!(net.layer_weights(l).iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn zero_width_rejected() {
        assert!(NetworkShape::new(2, vec![0], vec![Activation::SQUARE], 1, false).is_err());
        assert!(NetworkShape::new(2, vec![3], vec![], 1, false).is_err());
    }

    #[test]
    fn square_toy_value_and_gradient() {
        let net = square_net();
        let (v, g) = net.forward_with_gradient(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(v, vec![vec![5.0], vec![5.0]]);
        assert_eq!(g[0][0], vec![2.0, 4.0]);
        assert_eq!(g[0], g[1]);
        let e = net.to_state_expression().unwrap();
        assert_eq!(e[0].eval(&[1.0, 2.0], &[]).unwrap(), 5.0);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for (seed, acts) in [
            (1, vec![Activation::SQUARE]),
            (2, vec![Activation::Sigmoid, Activation::SQUARE]),
            (3, vec![Activation::Tanh, Activation::Softplus]),
            (4, vec![Activation::Poly(3), Activation::Linear]),
        ] {
            let net = random_net(acts, true, seed);
            let x = vec![0.3, -0.4, 0.7];
            let (_, g) = net.forward_with_gradient(&[x.clone()]);
            for k in 0..2 {
                for i in 0..3 {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (net.forward(&xp)[k] - net.forward(&xm)[k]) / (2.0 * h);
                    let err = (fd - g[0][k][i]).abs() / fd.abs().max(1e-3);
                    assert!(err < 1e-4, "seed {seed} out {k} x{i}: {fd} vs {}", g[0][k][i]);
                }
            }
        }
    }

    /// Loss L = Σ_k (c_k·out_k + d_k·outdot_k); checks every parameter
    /// gradient against central differences.
    #[test]
    fn tangent_backward_matches_finite_differences() {
        for (seed, acts) in [
            (5, vec![Activation::SQUARE]),
            (6, vec![Activation::Sigmoid, Activation::SQUARE]),
            (7, vec![Activation::Tanh, Activation::Softplus]),
        ] {
            let mut net = random_net(acts, true, seed);
            let x = [0.5, -0.2, 0.9];
            let xdot = [-0.3, 0.8, 0.1];
            let c = [0.7, -1.1];
            let d = [1.3, 0.4];
            let loss = |net: &Network| {
                let mut tape = Tape::default();
                let (o, od) = net.forward_tangent(&x, &xdot, &mut tape);
                (0..2).map(|k| c[k] * o[k] + d[k] * od[k]).sum::<f64>()
            };
            let mut tape = Tape::default();
            net.forward_tangent(&x, &xdot, &mut tape);
            let mut grads = vec![0.0; net.num_params()];
            let (gx, gxdot) = net.backward_tangent(&tape, &c, &d, &mut grads);
            for p in 0..net.num_params() {
                let orig = net.params()[p];
                let h = 1e-6;
                net.params_mut()[p] = orig + h;
                let up = loss(&net);
                net.params_mut()[p] = orig - h;
                let down = loss(&net);
                net.params_mut()[p] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - grads[p]).abs() / fd.abs().max(1e-3);
                assert!(err < 1e-4, "param {p}: fd {fd} vs {}", grads[p]);
            }
            // d loss / d xdot = Σ_k d_k ∇out_k
            let (_, g) = net.forward_with_gradient(&[x.to_vec()]);
            for i in 0..3 {
                let expect: f64 = (0..2).map(|k| d[k] * g[0][k][i]).sum();
                assert!((gxdot[i] - expect).abs() < 1e-12);
            }
            assert_eq!(gx.len(), 3);
        }
    }

    #[test]
    fn linear_neuron_squared_error() {
        // y_hat = w x, loss (w x - y)^2, dL/dw = 2 (w x - y) x
        let shape = NetworkShape::new(1, vec![], vec![], 1, false).unwrap();
        let mut net = Network::init(shape, &[], 0).unwrap();
        net.set_layer(0, &[0.5], None).unwrap();
        let (x, y) = (3.0, 2.0);
        let mut tape = Tape::default();
        let (out, _) = net.forward_tangent(&[x], &[0.0], &mut tape);
        let mut grads = vec![0.0; 1];
        net.backward_tangent(&tape, &[2.0 * (out[0] - y)], &[0.0], &mut grads);
        assert_eq!(grads[0], 2.0 * (0.5 * x - y) * x);

        let mut zero = vec![0.0; 1];
        net.backward_tangent(&tape, &[0.0], &[0.0], &mut zero);
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn symbolic_unrolling_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (seed, acts) in [
            (1, vec![Activation::SQUARE]),
            (2, vec![Activation::Sigmoid, Activation::SQUARE]),
            (3, vec![Activation::Tanh, Activation::Softplus]),
        ] {
            let net = random_net(acts, true, seed);
            let exprs = net.to_state_expression().unwrap();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let numeric = net.forward(&x);
                for k in 0..2 {
                    let symbolic = exprs[k].eval(&x, &[]).unwrap();
                    assert!((symbolic - numeric[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn relu_is_not_verifiable() {
        let net = random_net(vec![Activation::Relu], false, 0);
        assert!(matches!(
            net.to_state_expression(),
            Err(NetError::NotVerifiable(Activation::Relu))
        ));
    }

    #[test]
    fn zero_at_origin_without_bias() {
        for acts in [
            vec![Activation::SQUARE],
            vec![Activation::Tanh, Activation::SQUARE],
            vec![Activation::Linear, Activation::Poly(3)],
        ] {
            let net = random_net(acts, false, 17);
            assert!(net.shape().vanishes_at_origin());
            assert_eq!(net.forward(&[0.0, 0.0, 0.0]), vec![0.0, 0.0]);
        }
        assert!(!random_net(vec![Activation::Sigmoid], false, 0).shape().vanishes_at_origin());
    }

    #[test]
    fn levels_and_dump_round_trip() {
        let mut net = random_net(vec![Activation::Sigmoid, Activation::SQUARE], true, 3);
        assert_eq!(net.level("beta"), Some(0.0));
        assert!(net.set_level("beta", 0.25));
        let json = serde_json::to_string(&net.dump()).unwrap();
        let back: NetworkDump = serde_json::from_str(&json).unwrap();
        assert_eq!(Network::from_dump(&back).unwrap(), net);
    }

    #[test]
    fn activation_names() {
        for a in [
            Activation::Linear,
            Activation::SQUARE,
            Activation::Poly(4),
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Softplus,
            Activation::Relu,
        ] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("CUBE".parse::<Activation>().is_err());
    }
}
