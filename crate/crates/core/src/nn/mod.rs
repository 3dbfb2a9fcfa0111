//! Fully-connected networks in double precision: batched forward pass with a
//! cache, exact reverse-mode gradients, and a bias-corrected Adam optimizer.
//!
//! Weights are stored `out x in`; a batch is `batch x features`, one sample per row.

mod checkpoint;

pub use checkpoint::Checkpoint;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidParams(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }
    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Network::forward`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Per-layer values before the activation.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the network input, `batch x fan_in`.
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|x| x.is_finite()))
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases, final layer shrunk by 0.01.
    /// Hidden layers use `activation`; the output layer is linear.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 layer sizes, got {}", sizes.len())));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidParams("layer sizes must be positive".into()));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let scale = if i + 1 == n { 0.01 } else { 1.0 };
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || scale * rng.random_range(-limit..=limit));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n { Activation::Identity } else { activation },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParams("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Shape(format!("layer {i}: bias length {} vs fan-out {}", l.bias.len(), l.fan_out())));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].fan_out(),
                    i + 1,
                    w[1].fan_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(Layer::fan_out)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter slices in canonical order: per layer, weights (row-major) then bias.
    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.activation == b.activation)
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights.t());
        z += &layer.bias;
        z
    }

    /// Output only, without recording a cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let mut z = match &x {
                Some(a) => Self::affine(layer, &a.view()),
                None => Self::affine(layer, &input),
            };
            if layer.activation != Activation::Identity {
                z.mapv_inplace(|v| layer.activation.apply(v));
            }
            x = Some(z);
        }
        Ok(x.expect("at least one layer"))
    }

    /// Single-sample convenience wrapper around [`Network::predict`].
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = match post.last() {
                Some(a) => Self::affine(layer, &a.view()),
                None => Self::affine(layer, &input),
            };
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        let output = post.last().expect("at least one layer").clone();
        Ok((
            output,
            ForwardCache {
                input: input.to_owned(),
                pre,
                post,
            },
        ))
    }

    /// Reverse-mode gradients of a scalar whose gradient with respect to the
    /// network output is `output_grad`. Gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Gradients> {
        if cache.pre.len() != self.layers.len() {
            return Err(Error::Shape("cache does not match network depth".into()));
        }
        let last = &cache.post[cache.post.len() - 1];
        if output_grad.dim() != last.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs network output {:?}",
                output_grad.dim(),
                last.dim()
            )));
        }
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if cache.pre[i].ncols() != layer.fan_out() {
                return Err(Error::Shape(format!("cache layer {i} width mismatch")));
            }
            if layer.activation != Activation::Identity {
                Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .and(&cache.post[i])
                    .for_each(|d, &z, &a| *d *= layer.activation.derivative(z, a));
            }
            let input = if i == 0 { cache.input.view() } else { cache.post[i - 1].view() };
            let weights = delta.t().dot(&input);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights);
            layer_grads.push(LayerGrad { weights, bias });
            delta = next;
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            input: delta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            hyper: AdamHyper::default(),
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::new(net.num_params())
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advances the step counter and returns the two bias-correction factors.
    fn tick(&mut self) -> (f64, f64) {
        self.t += 1;
        let t = self.t as i32;
        (1.0 - self.hyper.beta1.powi(t), 1.0 - self.hyper.beta2.powi(t))
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64, correction: (f64, f64)) {
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction.0;
            let v_hat = *v / correction.1;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Adam step on a plain parameter slice (e.g. a free scalar).
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape("adam state / parameter length mismatch".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let c = self.tick();
        self.update(0, params, grads, lr, c);
        Ok(())
    }
}

/// One bias-corrected adaptive-moment step, in place.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.layers.len() != net.layers.len()
        || state.m.len() != net.num_params()
        || net
            .layers
            .iter()
            .zip(&grads.layers)
            .any(|(l, g)| l.weights.dim() != g.weights.dim() || l.bias.len() != g.bias.len())
    {
        return Err(Error::Shape("gradients / optimizer state do not match network".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("network gradient".into()));
    }
    let c = state.tick();
    let mut offset = 0;
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        let w = layer.weights.as_slice_mut().expect("standard layout");
        state.update(offset, w, g.weights.as_slice().expect("standard layout"), lr, c);
        offset += w.len();
        let b = layer.bias.as_slice_mut().expect("standard layout");
        state.update(offset, b, g.bias.as_slice().expect("standard layout"), lr, c);
        offset += b.len();
    }
    Ok(())
}
