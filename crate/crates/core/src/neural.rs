//! Dense multilayer perceptrons with exact reverse-mode gradients.
//!
//! A layer computes `act(x·W + b)` with `W` stored fan_in × fan_out, then
//! applies inverted dropout in train mode (kept units are scaled by
//! `1/(1 - rate)`). Sigmoid outputs are clamped to `[eps, 1 - eps]`; the
//! derivative is zero where the clamp is active. Subgradients at 0 are 0 for
//! ReLU and the negative slope for leaky ReLU.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::scalar::Scalar;

/// Default clamp for sigmoid outputs; keeps every downstream log finite.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub(crate) fn code(self) -> (u8, f64) {
        match self {
            Activation::Relu => (0, 0.0),
            Activation::LeakyRelu(s) => (1, s),
            Activation::Tanh => (2, 0.0),
            Activation::Sigmoid => (3, 0.0),
            Activation::Linear => (4, 0.0),
        }
    }

    pub(crate) fn from_code(code: u8, param: f64) -> Result<Self> {
        Ok(match code {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu(param),
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            4 => Activation::Linear,
            other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Linear => f.write_str("linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "relu" => return Ok(Activation::Relu),
            "tanh" => return Ok(Activation::Tanh),
            "sigmoid" => return Ok(Activation::Sigmoid),
            "linear" => return Ok(Activation::Linear),
            "leaky_relu" => return Ok(Activation::LeakyRelu(0.2)),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("leaky_relu(").and_then(|r| r.strip_suffix(')')) {
            let slope: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad leaky_relu slope in `{s}`")))?;
            if !slope.is_finite() {
                return Err(Error::invalid(format!("bad leaky_relu slope in `{s}`")));
            }
            return Ok(Activation::LeakyRelu(slope));
        }
        Err(Error::invalid(format!("unknown activation `{s}`")))
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
    pub dropout: f64,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn activate(&self, pre: &Matrix<T>, eps: T) -> Matrix<T> {
        match self.activation {
            Activation::Relu => pre.map(|z| z.max(T::zero())),
            Activation::LeakyRelu(s) => {
                let s = T::of(s);
                pre.map(|z| if z > T::zero() { z } else { s * z })
            }
            Activation::Tanh => pre.map(|z| z.tanh()),
            Activation::Sigmoid => {
                let hi = T::one() - eps;
                pre.map(|z| sigmoid(z).max(eps).min(hi))
            }
            Activation::Linear => pre.clone(),
        }
    }

    /// `grad ⊙ act'(pre)`, in place.
    fn chain_activation(&self, grad: &mut Matrix<T>, pre: &Matrix<T>, post: &Matrix<T>, eps: T) {
        let g = grad.as_mut_slice();
        let z = pre.as_slice();
        let y = post.as_slice();
        match self.activation {
            Activation::Relu => {
                for (g, &z) in g.iter_mut().zip(z) {
                    if z <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::LeakyRelu(s) => {
                let s = T::of(s);
                for (g, &z) in g.iter_mut().zip(z) {
                    if z <= T::zero() {
                        *g = *g * s;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &y) in g.iter_mut().zip(y) {
                    *g = *g * (T::one() - y * y);
                }
            }
            Activation::Sigmoid => {
                let hi = T::one() - eps;
                for (g, &z) in g.iter_mut().zip(z) {
                    let s = sigmoid(z);
                    if s < eps || s > hi {
                        *g = T::zero();
                    } else {
                        *g = *g * s * (T::one() - s);
                    }
                }
            }
            Activation::Linear => {}
        }
    }
}

/// Cached intermediates of one layer's forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<T> {
    pub input: Matrix<T>,
    pub pre_activation: Matrix<T>,
    /// Activation output before dropout.
    pub activation: Matrix<T>,
    /// Inverted-dropout multipliers (0 or `1/(1-rate)`), present only in
    /// train mode with a positive rate.
    pub mask: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub layers: Vec<LayerTrace<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn input(&self) -> &Matrix<T> {
        &self.layers[0].input
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients, shape-congruent with the owning [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![T::zero(); l.fan_out()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads<T>) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("ParamGrads::accumulate", "layer count differs"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            if a.bias.len() != b.bias.len() {
                return Err(Error::shape("ParamGrads::accumulate", "bias length differs"));
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + y;
            }
        }
        Ok(())
    }

    /// Same parameter order as [`Mlp::params_to_vec`].
    pub fn to_vec(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_congruent(&self, net: &Mlp<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len()
            })
    }
}

/// Stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
    clamp_eps: f64,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>, clamp_eps: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::invalid(format!("clamp eps {clamp_eps} outside (0, 0.5)")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::shape(
                    "Mlp::new",
                    format!("layer {i}: bias {} for fan_out {}", l.bias.len(), l.fan_out()),
                ));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::invalid(format!("layer {i}: dropout {} not in [0,1)", l.dropout)));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::shape(
                    "Mlp::new",
                    format!(
                        "layer {i} fan_out {} does not chain into fan_in {}",
                        w[0].fan_out(),
                        w[1].fan_in()
                    ),
                ));
            }
        }
        Ok(Mlp { layers, clamp_eps })
    }

    /// Glorot-uniform weights on `±sqrt(6/(fan_in+fan_out))`, zero biases.
    ///
    /// `dims` lists every width including input and output, so there are
    /// `dims.len() - 1` layers.
    pub fn init_glorot(
        rng: &mut RngState,
        dims: &[usize],
        activations: &[Activation],
        dropouts: &[f64],
        clamp_eps: f64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        let n_layers = dims.len() - 1;
        if activations.len() != n_layers || dropouts.len() != n_layers {
            return Err(Error::invalid(format!(
                "{n_layers} layers but {} activations and {} dropout rates",
                activations.len(),
                dropouts.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Matrix::sample_uniform(rng, fan_in, fan_out, -limit, limit)?;
            layers.push(DenseLayer {
                weights,
                bias: vec![T::zero(); fan_out],
                activation: activations[i],
                dropout: dropouts[i],
            });
        }
        Self::new(layers, clamp_eps)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.fan_out()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.fan_in() * l.fan_out() + l.fan_out()).sum()
    }

    pub fn params_to_vec(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_from_vec(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "set_params_from_vec",
                format!("{} values for {} parameters", params.len(), self.param_count()),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, op: &'static str, batch: &Matrix<T>) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                op,
                format!("batch has {} columns, network expects {}", batch.cols(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Forward pass recording everything [`Mlp::backward`] needs.
    ///
    /// `rng` is consumed only in train mode, one uniform per unit of every
    /// layer with a positive dropout rate, row-major, layer by layer.
    pub fn forward(
        &self,
        batch: &Matrix<T>,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Matrix<T>, ForwardTrace<T>)> {
        self.check_input("Mlp::forward", batch)?;
        let eps = T::of(self.clamp_eps);
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut pre = x.matmul(&layer.weights)?;
            pre.add_row_vector(&layer.bias)?;
            let act = layer.activate(&pre, eps);
            let (out, mask) = if mode == Mode::Train && layer.dropout > 0.0 {
                let keep = 1.0 - layer.dropout;
                let scale = T::of(1.0 / keep);
                let mask: Vec<T> = (0..act.as_slice().len())
                    .map(|_| if rng.bernoulli(keep) { scale } else { T::zero() })
                    .collect();
                let mut out = act.clone();
                for (o, &m) in out.as_mut_slice().iter_mut().zip(&mask) {
                    *o = *o * m;
                }
                (out, Some(mask))
            } else {
                (act.clone(), None)
            };
            traces.push(LayerTrace {
                input: x,
                pre_activation: pre,
                activation: act,
                mask,
            });
            x = out;
        }
        Ok((x, ForwardTrace { layers: traces }))
    }

    /// Eval-mode forward without a trace. Pure in parameters and input.
    pub fn predict(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input("Mlp::predict", batch)?;
        let eps = T::of(self.clamp_eps);
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut pre = x.matmul(&layer.weights)?;
            pre.add_row_vector(&layer.bias)?;
            x = layer.activate(&pre, eps);
        }
        Ok(x)
    }

    fn check_trace(&self, trace: &ForwardTrace<T>, output_grad: &Matrix<T>) -> Result<()> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("trace has {} layers, network {}", trace.layers.len(), self.layers.len()),
            ));
        }
        for (i, (t, l)) in trace.layers.iter().zip(&self.layers).enumerate() {
            if t.input.cols() != l.fan_in() || t.pre_activation.cols() != l.fan_out() {
                return Err(Error::shape("Mlp::backward", format!("trace layer {i} does not match")));
            }
        }
        let last = &trace.layers[trace.layers.len() - 1].pre_activation;
        if last.shape() != output_grad.shape() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("output grad {:?} vs output {:?}", output_grad.shape(), last.shape()),
            ));
        }
        Ok(())
    }

    /// Gradients of `sum(output ⊙ output_grad)` with respect to every
    /// parameter and to the input batch.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        output_grad: &Matrix<T>,
    ) -> Result<(ParamGrads<T>, Matrix<T>)> {
        self.backward_impl(trace, output_grad, true)
            .map(|(g, x)| (g.expect("param grads requested"), x))
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn backward_input(&self, trace: &ForwardTrace<T>, output_grad: &Matrix<T>) -> Result<Matrix<T>> {
        self.backward_impl(trace, output_grad, false).map(|(_, x)| x)
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace<T>,
        output_grad: &Matrix<T>,
        want_params: bool,
    ) -> Result<(Option<ParamGrads<T>>, Matrix<T>)> {
        self.check_trace(trace, output_grad)?;
        let eps = T::of(self.clamp_eps);
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.clone();
        for (layer, t) in self.layers.iter().zip(&trace.layers).rev() {
            if let Some(mask) = &t.mask {
                for (x, &m) in g.as_mut_slice().iter_mut().zip(mask) {
                    *x = *x * m;
                }
            }
            layer.chain_activation(&mut g, &t.pre_activation, &t.activation, eps);
            if want_params {
                grads.push(LayerGrads {
                    weights: t.input.matmul_tn(&g)?,
                    bias: g.column_sums(),
                });
            }
            g = g.matmul_nt(&layer.weights)?;
        }
        grads.reverse();
        let params = want_params.then_some(ParamGrads { layers: grads });
        Ok((params, g))
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares `analytic` against central differences of `f` around `at`.
///
/// Per coordinate the error is
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)`.
pub fn grad_check(f: impl FnMut(&[f64]) -> f64, at: &[f64], analytic: &[f64], h: f64) -> GradCheck {
    grad_check_floored(f, at, analytic, h, 1e-8)
}

/// [`grad_check`] with the denominator floored at `floor` instead of 1e-8,
/// so rounding noise on near-zero gradients is not reported as a large
/// relative error.
pub fn grad_check_floored(
    mut f: impl FnMut(&[f64]) -> f64,
    at: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
) -> GradCheck {
    assert_eq!(at.len(), analytic.len(), "gradient length must match point");
    let mut x = at.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        let err = (a - numeric).abs() / denom;
        if i == 0 || err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    worst
}
