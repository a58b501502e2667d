//! Dense feed-forward network with exact reverse-mode gradients, plus Adam.
//!
//! The network is time-conditioned: [`Mlp::forward`] feeds
//! `[q, t, sin(2πt), cos(2πt)]` to the first layer, so an `Mlp` built for a
//! `d`-dimensional state has `layer_dims[0] == d + TIME_EMBED`.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::state::State;

/// Width of the time embedding appended to every state.
pub const TIME_EMBED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Silu,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Silu => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Silu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// One affine layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Network parameters. Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Gradients, shaped exactly like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Training examples: rows of `states` are `q_t`, `targets` the velocities to match.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub times: Vec<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least an input and an output layer, got dims {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!(
            "layer widths must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// LeCun-uniform weights, `U(-sqrt(3/fan_in), sqrt(3/fan_in))`, and zero biases.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = rng::from_seed(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (3.0 / fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Mlp { layers, activation })
    }

    /// Assemble from explicit layers, checking that adjacent shapes chain.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Config(format!(
                    "layer {k} produces {} values but layer {} expects {}",
                    pair[0].fan_out(),
                    k + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Config(format!("layer {k} bias has wrong length")));
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::Config(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Mlp { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].fan_in()];
        dims.extend(self.layers.iter().map(Layer::fan_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// State dimension this network accepts once the time embedding is appended.
    pub fn state_dim(&self) -> Option<usize> {
        self.input_dim().checked_sub(TIME_EMBED)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_state(&self, len: usize) -> Result<()> {
        match self.state_dim() {
            Some(d) if d == len => Ok(()),
            _ => Err(Error::shape(self.input_dim(), len + TIME_EMBED)),
        }
    }

    /// Velocity at `(q, t)`.
    pub fn forward(&self, q: &[f64], t: f64) -> Result<State> {
        self.check_state(q.len())?;
        let mut input = Vec::with_capacity(q.len() + TIME_EMBED);
        input.extend_from_slice(q);
        push_time_embedding(&mut input, t);
        Ok(Array1::from(self.forward_raw(&input)))
    }

    /// Forward pass on an already-embedded input row.
    fn forward_raw(&self, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, &x);
            if k != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            x = z;
        }
        x
    }

    /// Mean over the batch of `||v(q_t, t) - target||^2`, with its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        let n = batch.len();
        let scale = 1.0 / n as f64;
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let last = self.layers.len() - 1;

        let mut input = Vec::with_capacity(self.input_dim());
        // Per-layer (pre-activation, activation) kept for the backward sweep.
        let mut trace: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for i in 0..n {
            input.clear();
            input.extend(batch.states.row(i).iter());
            push_time_embedding(&mut input, batch.times[i]);

            trace.clear();
            for (k, layer) in self.layers.iter().enumerate() {
                let x = if k == 0 { &input } else { &trace[k - 1].1 };
                let z = affine(layer, x);
                let a = if k == last {
                    z.clone()
                } else {
                    z.iter().map(|&v| self.activation.apply(v)).collect()
                };
                trace.push((z, a));
            }

            let out = &trace[last].1;
            let mut delta: Vec<f64> = out
                .iter()
                .zip(batch.targets.row(i).iter())
                .map(|(o, u)| o - u)
                .collect();
            loss += delta.iter().map(|d| d * d).sum::<f64>();
            delta.iter_mut().for_each(|d| *d *= 2.0 * scale);

            for k in (0..=last).rev() {
                let x = if k == 0 { &input } else { &trace[k - 1].1 };
                let g = &mut grads.layers[k];
                let gw = g.weight.as_slice_mut().expect("standard layout");
                let fan_in = x.len();
                for (o, &d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    axpy(d, x, &mut gw[o * fan_in..(o + 1) * fan_in]);
                }
                if k == 0 {
                    break;
                }
                let w = self.layers[k].weight.as_slice().expect("standard layout");
                let mut back = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    axpy(d, &w[o * fan_in..(o + 1) * fan_in], &mut back);
                }
                let (z_prev, a_prev) = &trace[k - 1];
                for (b, (&z, &a)) in back.iter_mut().zip(z_prev.iter().zip(a_prev)) {
                    *b *= self.activation.derivative(z, a);
                }
                delta = back;
            }
        }
        Ok((loss * scale, grads))
    }

    /// Loss only; same definition as [`Mlp::loss_and_grad`].
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let n = batch.len();
        let mut input = Vec::with_capacity(self.input_dim());
        let mut loss = 0.0;
        for i in 0..n {
            input.clear();
            input.extend(batch.states.row(i).iter());
            push_time_embedding(&mut input, batch.times[i]);
            let out = self.forward_raw(&input);
            loss += out
                .iter()
                .zip(batch.targets.row(i).iter())
                .map(|(o, u)| (o - u) * (o - u))
                .sum::<f64>();
        }
        Ok(loss * (1.0 / n as f64))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        self.check_state(batch.states.ncols())?;
        if batch.targets.ncols() != self.output_dim() {
            return Err(Error::shape(self.output_dim(), batch.targets.ncols()));
        }
        if batch.targets.nrows() != batch.len() || batch.times.len() != batch.len() {
            return Err(Error::Usage(
                "batch states, times and targets differ in length".into(),
            ));
        }
        Ok(())
    }
}

fn push_time_embedding(input: &mut Vec<f64>, t: f64) {
    input.push(t);
    input.push((TAU * t).sin());
    input.push((TAU * t).cos());
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let w = layer.weight.as_slice().expect("standard layout");
    let fan_in = x.len();
    layer
        .bias
        .iter()
        .enumerate()
        .map(|(o, b)| b + dot(&w[o * fan_in..(o + 1) * fan_in], x))
        .collect()
}

/// Dot product with four independent accumulators; the summation order is
/// fixed, so results do not depend on anything but the two slices.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Adam optimizer state (bias-corrected moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || self.first_moment.layers.len() != net.layers.len()
        {
            return Err(Error::shape(net.layers.len(), grads.layers.len()));
        }
        for ((p, g), m) in net.layers.iter().zip(&grads.layers).zip(&self.first_moment.layers) {
            if p.weight.dim() != g.weight.dim() || p.weight.dim() != m.weight.dim() {
                return Err(Error::shape(p.weight.len(), g.weight.len()));
            }
        }

        self.step_count += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step_count as i32);
        let c2 = 1.0 - b2.powi(self.step_count as i32);
        let (lr, eps) = (self.lr, self.eps);

        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (k, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[k];
            let m = &mut self.first_moment.layers[k];
            let v = &mut self.second_moment.layers[k];
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
