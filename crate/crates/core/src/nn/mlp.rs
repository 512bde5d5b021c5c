//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! A network maps a batch of states (one row per sample) to a batch of outputs.
//! Critic-style networks take a second input, the action, which is concatenated
//! to the activations of the first hidden layer before the next affine map.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{gemm, Matrix};
use crate::{Error, Result};

/// Bound of the uniform init used for the last layer.
pub const FINAL_LAYER_INIT: f64 = 3e-3;

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

fn next_instance() -> u64 {
    NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Second network input concatenated to the output of hidden layer `layer_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionInject {
    pub action_dim: usize,
    pub layer_index: usize,
}

/// Architecture of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub action_inject: Option<ActionInject>,
}

impl MlpSpec {
    /// Deterministic policy: states in, tanh-bounded actions out.
    pub fn policy(state_dim: usize, hidden_dims: &[usize], action_dim: usize) -> Self {
        Self {
            input_dim: state_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim: action_dim,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
            action_inject: None,
        }
    }

    /// Scalar state-action network (critic or classifier logit). The action
    /// enters after the first hidden layer.
    pub fn state_action(state_dim: usize, action_dim: usize, hidden_dims: &[usize]) -> Self {
        Self {
            input_dim: state_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim: 1,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Linear,
            action_inject: Some(ActionInject {
                action_dim,
                layer_index: 1,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dims must be >= 1");
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return bad("hidden dims must be >= 1");
        }
        if self.hidden_activation != Activation::Relu {
            return bad("hidden activation must be relu");
        }
        if self.output_activation == Activation::Relu {
            return bad("output activation must be tanh or linear");
        }
        if let Some(inj) = self.action_inject {
            if inj.action_dim == 0 {
                return bad("action_dim must be >= 1");
            }
            if inj.layer_index != 1 {
                return bad("action can only be injected at layer_index 1");
            }
            if self.hidden_dims.is_empty() {
                return bad("action injection needs at least one hidden layer");
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let inject = self.action_inject.map_or(0, |i| i.action_dim);
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for (idx, &h) in self.hidden_dims.iter().chain(&[self.output_dim]).enumerate() {
            let fan_in = if idx == 1 { prev + inject } else { prev };
            dims.push((fan_in, h));
            prev = h;
        }
        dims
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.action_inject.map(|i| i.action_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// One-line textual description, used by checkpoint manifests.
    pub fn describe(&self) -> String {
        let hidden: Vec<String> = self.hidden_dims.iter().map(|h| h.to_string()).collect();
        let inject = match self.action_inject {
            Some(i) => format!("{}@{}", i.action_dim, i.layer_index),
            None => "none".to_string(),
        };
        format!(
            "input={} hidden={} output={} hidden_act={} output_act={} inject={}",
            self.input_dim,
            if hidden.is_empty() { "-".to_string() } else { hidden.join(",") },
            self.output_dim,
            self.hidden_activation.name(),
            self.output_activation.name(),
            inject
        )
    }

    /// Inverse of [`MlpSpec::describe`].
    pub fn parse(text: &str) -> Result<Self> {
        let err = || Error::InvalidSpec(format!("cannot parse spec '{text}'"));
        let mut input = None;
        let mut hidden = None;
        let mut output = None;
        let mut hact = None;
        let mut oact = None;
        let mut inject = None;
        for field in text.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(err)?;
            match k {
                "input" => input = Some(v.parse::<usize>().map_err(|_| err())?),
                "hidden" => {
                    hidden = Some(if v == "-" {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|h| h.parse::<usize>().map_err(|_| err()))
                            .collect::<Result<Vec<_>>>()?
                    })
                }
                "output" => output = Some(v.parse::<usize>().map_err(|_| err())?),
                "hidden_act" => hact = Some(Activation::from_name(v).ok_or_else(err)?),
                "output_act" => oact = Some(Activation::from_name(v).ok_or_else(err)?),
                "inject" => {
                    inject = Some(if v == "none" {
                        None
                    } else {
                        let (a, l) = v.split_once('@').ok_or_else(err)?;
                        Some(ActionInject {
                            action_dim: a.parse().map_err(|_| err())?,
                            layer_index: l.parse().map_err(|_| err())?,
                        })
                    })
                }
                _ => return Err(err()),
            }
        }
        let spec = MlpSpec {
            input_dim: input.ok_or_else(err)?,
            hidden_dims: hidden.ok_or_else(err)?,
            output_dim: output.ok_or_else(err)?,
            hidden_activation: hact.ok_or_else(err)?,
            output_activation: oact.ok_or_else(err)?,
            action_inject: inject.ok_or_else(err)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Weights (`fan_in x fan_out`, row-major) and bias of one affine layer.
/// Also used as the gradient record for that layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= factor);
        }
    }
}

/// Gradients with respect to the network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradients {
    pub state: Matrix,
    pub action: Option<Matrix>,
}

/// Activations recorded by a forward pass; consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    instance: u64,
    generation: u64,
    rows: usize,
    /// Input matrix of every layer (after action concatenation).
    inputs: Vec<Matrix>,
    /// Post-activation output of every layer.
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("network has at least one layer")
    }
}

/// Network parameters plus their architecture.
#[derive(Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
    instance: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            instance: next_instance(),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

impl Mlp {
    /// Fan-in uniform init: layer weights in `±1/sqrt(fan_in)`, last layer in
    /// `±FINAL_LAYER_INIT`, zero biases. Deterministic in `(spec, seed)`.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(idx, &(fan_in, fan_out))| {
                let bound = if idx == last {
                    FINAL_LAYER_INIT
                } else {
                    1.0 / (fan_in as f64).sqrt()
                };
                let mut layer = Dense::zeros(fan_in, fan_out);
                for w in &mut layer.weights {
                    *w = rng.random_range(-bound..=bound);
                }
                layer
            })
            .collect();
        Ok(Self::from_layers_unchecked(spec.clone(), layers))
    }

    /// All-zero parameters.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .iter()
            .map(|&(i, o)| Dense::zeros(i, o))
            .collect();
        Ok(Self::from_layers_unchecked(spec.clone(), layers))
    }

    /// Builds a network from explicit layers, checking shapes and finiteness.
    pub fn from_layers(spec: &MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::SpecMismatch(format!(
                "spec has {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (&(i, o), l) in dims.iter().zip(&layers) {
            if l.fan_in != i || l.fan_out != o || l.weights.len() != i * o || l.bias.len() != o {
                return Err(Error::SpecMismatch(format!(
                    "layer shape {}x{} does not match spec {}x{}",
                    l.fan_in, l.fan_out, i, o
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|x| x.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self::from_layers_unchecked(spec.clone(), layers))
    }

    fn from_layers_unchecked(spec: MlpSpec, layers: Vec<Dense>) -> Self {
        Self {
            spec,
            layers,
            instance: next_instance(),
            generation: 0,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the parameters. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Parameters in layer order: weights then bias of each layer.
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension {
                what: "flat parameters",
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_inputs(&self, states: &Matrix, actions: Option<&Matrix>) -> Result<()> {
        if states.cols() != self.spec.input_dim {
            return Err(Error::Dimension {
                what: "state input",
                expected: self.spec.input_dim,
                got: states.cols(),
            });
        }
        match (self.spec.action_inject, actions) {
            (Some(inj), Some(a)) => {
                if a.cols() != inj.action_dim {
                    return Err(Error::Dimension {
                        what: "action input",
                        expected: inj.action_dim,
                        got: a.cols(),
                    });
                }
                if a.rows() != states.rows() {
                    return Err(Error::Dimension {
                        what: "action rows",
                        expected: states.rows(),
                        got: a.rows(),
                    });
                }
            }
            (None, None) => {}
            (Some(inj), None) => {
                return Err(Error::Dimension {
                    what: "action input",
                    expected: inj.action_dim,
                    got: 0,
                })
            }
            (None, Some(a)) => {
                return Err(Error::Dimension {
                    what: "action input",
                    expected: 0,
                    got: a.cols(),
                })
            }
        }
        Ok(())
    }

    /// Batched forward pass; returns the outputs and the activation record.
    pub fn forward(&self, states: &Matrix, actions: Option<&Matrix>) -> Result<(Matrix, ForwardCache)> {
        self.check_inputs(states, actions)?;
        let rows = states.rows();
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let input = match idx {
                0 => states.clone(),
                1 if self.spec.action_inject.is_some() => {
                    outputs[0].hcat(actions.expect("checked above"))?
                }
                _ => outputs[idx - 1].clone(),
            };
            let mut out = Matrix::zeros(rows, layer.fan_out);
            for r in 0..rows {
                out.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(
                rows,
                layer.fan_in,
                layer.fan_out,
                input.as_slice(),
                false,
                &layer.weights,
                false,
                1.0,
                out.as_mut_slice(),
            );
            let act = if idx == last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            if act != Activation::Linear {
                out.as_mut_slice().iter_mut().for_each(|x| *x = act.apply(*x));
            }
            inputs.push(input);
            outputs.push(out);
        }
        let output = outputs[last].clone();
        Ok((
            output,
            ForwardCache {
                instance: self.instance,
                generation: self.generation,
                rows,
                inputs,
                outputs,
            },
        ))
    }

    /// Forward pass without keeping the activation record.
    pub fn predict(&self, states: &Matrix, actions: Option<&Matrix>) -> Result<Matrix> {
        self.forward(states, actions).map(|(out, _)| out)
    }

    /// Single-sample convenience wrapper around [`Mlp::predict`].
    pub fn predict_one(&self, state: &[f64], action: Option<&[f64]>) -> Result<Vec<f64>> {
        let s = Matrix::row_vector(state);
        let a = action.map(Matrix::row_vector);
        self.predict(&s, a.as_ref()).map(Matrix::into_vec)
    }

    fn check_cache(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<()> {
        if cache.instance != self.instance || cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        if output_grad.rows() != cache.rows || output_grad.cols() != self.spec.output_dim {
            return Err(Error::Dimension {
                what: "output gradient",
                expected: cache.rows * self.spec.output_dim,
                got: output_grad.rows() * output_grad.cols(),
            });
        }
        Ok(())
    }

    /// Reverse-mode gradients of `sum(output ⊙ output_grad)` with respect to
    /// parameters and inputs.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<(Gradients, InputGradients)> {
        self.check_cache(cache, output_grad)?;
        let (grads, inputs) = self.backprop(cache, output_grad, true);
        Ok((grads.expect("param grads requested"), inputs))
    }

    /// Like [`Mlp::backward`] but only computes input gradients.
    pub fn input_gradients(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<InputGradients> {
        self.check_cache(cache, output_grad)?;
        Ok(self.backprop(cache, output_grad, false).1)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
        want_params: bool,
    ) -> (Option<Gradients>, InputGradients) {
        let rows = cache.rows;
        let last = self.layers.len() - 1;
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = output_grad.clone();
        let mut action_grad = None;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let act = if idx == last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            if act != Activation::Linear {
                let out = cache.outputs[idx].as_slice();
                for (d, &y) in delta.as_mut_slice().iter_mut().zip(out) {
                    *d *= act.derivative_at_output(y);
                }
            }
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[idx];
                gemm(
                    layer.fan_in,
                    rows,
                    layer.fan_out,
                    cache.inputs[idx].as_slice(),
                    true,
                    delta.as_slice(),
                    false,
                    0.0,
                    &mut gl.weights,
                );
                for r in 0..rows {
                    for (b, d) in gl.bias.iter_mut().zip(delta.row(r)) {
                        *b += d;
                    }
                }
            }
            let mut d_input = Matrix::zeros(rows, layer.fan_in);
            gemm(
                rows,
                layer.fan_out,
                layer.fan_in,
                delta.as_slice(),
                false,
                &layer.weights,
                true,
                0.0,
                d_input.as_mut_slice(),
            );
            if idx == 1 && self.spec.action_inject.is_some() {
                let (h, a) = d_input.hsplit(self.spec.hidden_dims[0]);
                action_grad = Some(a);
                delta = h;
            } else {
                delta = d_input;
            }
        }
        (
            grads,
            InputGradients {
                state: delta,
                action: action_grad,
            },
        )
    }
}

/// Polyak update `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.spec != online.spec {
        return Err(Error::SpecMismatch("soft update between different specs".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Precondition(format!("tau {tau} outside [0, 1]")));
    }
    let keep = 1.0 - tau;
    for (t, o) in target.layers_mut().iter_mut().zip(&online.layers) {
        for (tw, ow) in t.weights.iter_mut().zip(&o.weights) {
            *tw = tau * ow + keep * *tw;
        }
        for (tb, ob) in t.bias.iter_mut().zip(&o.bias) {
            *tb = tau * ob + keep * *tb;
        }
    }
    Ok(())
}
