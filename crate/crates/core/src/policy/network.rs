use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, NUM_ACTIONS, OBS_LEN};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Layer sizes: a shared trunk of `hidden` layers feeding a policy head with
/// `actions` logits and a scalar value head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub activation: Activation,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape {
            input: OBS_LEN,
            hidden: vec![64, 64],
            actions: NUM_ACTIONS,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Start of the row-major `fan_out × fan_in` weight block; biases follow it.
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn end(&self) -> usize {
        self.offset + (self.fan_in + 1) * self.fan_out
    }
}

struct Layout {
    trunk: Vec<Layer>,
    policy: Layer,
    value: Layer,
}

impl NetworkShape {
    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut fan_in = self.input;
        let mut trunk = Vec::with_capacity(self.hidden.len());
        for &fan_out in &self.hidden {
            let layer = Layer {
                fan_in,
                fan_out,
                offset,
            };
            offset = layer.end();
            fan_in = fan_out;
            trunk.push(layer);
        }
        let policy = Layer {
            fan_in,
            fan_out: self.actions,
            offset,
        };
        let value = Layer {
            fan_in,
            fan_out: 1,
            offset: policy.end(),
        };
        Layout { trunk, policy, value }
    }

    pub fn param_count(&self) -> usize {
        self.layout().value.end()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.actions < 2 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }
}

/// Flat parameter vector θ together with the shape that interprets it.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    shape: NetworkShape,
    values: Vec<f64>,
}

/// Policy and value outputs for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub action_probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

impl PolicyOutput {
    pub fn entropy(&self) -> f64 {
        -self
            .action_probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
            .sum::<f64>()
    }
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// `activations[0]` is the input, `activations[k]` the output of trunk layer `k - 1`.
    activations: Vec<Vec<f64>>,
    pub output: PolicyOutput,
}

impl PolicyParams {
    pub fn new(shape: NetworkShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(Error::Contract(format!(
                "parameter vector has {} entries, shape needs {}",
                values.len(),
                shape.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("parameter {i} is not finite")));
        }
        Ok(PolicyParams { shape, values })
    }

    /// Orthogonal initialization: gain √2 on the trunk, 0.01 on the policy head,
    /// 1 on the value head, zero biases.
    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; shape.param_count()];
        let layout = shape.layout();
        let gains = layout
            .trunk
            .iter()
            .map(|l| (*l, std::f64::consts::SQRT_2))
            .chain([(layout.policy, 0.01), (layout.value, 1.0)]);
        for (layer, gain) in gains {
            let w = orthogonal(layer.fan_out, layer.fan_in, gain, &mut rng);
            values[layer.weights()].copy_from_slice(&w);
        }
        Ok(PolicyParams { shape, values })
    }

    /// Same network with the policy head zeroed, so every observation maps to the
    /// uniform action distribution.
    pub fn with_zero_policy_head(mut self) -> Self {
        let policy = self.shape.layout().policy;
        self.values[policy.offset..policy.end()].fill(0.0);
        self
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Content hash of the exact parameter bits; used as the snapshot id.
    pub fn snapshot_id(&self) -> String {
        crate::util::hash_f64s(&self.values)[..16].to_string()
    }

    /// θ + scale · direction.
    pub fn offset_by(&self, direction: &GradVector, scale: f64) -> Result<Self> {
        if direction.len() != self.len() {
            return Err(Error::Contract("direction length differs from parameter count".into()));
        }
        let values = self
            .values
            .iter()
            .zip(direction.as_slice())
            .map(|(v, d)| v + scale * d)
            .collect();
        PolicyParams::new(self.shape.clone(), values)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        PolicyParams::new(self.shape.clone(), values)
    }

    pub fn forward(&self, obs: &Observation) -> PolicyOutput {
        self.forward_input(&obs.flat()).output
    }

    pub(crate) fn forward_input(&self, input: &[f64]) -> ForwardCache {
        debug_assert_eq!(input.len(), self.shape.input);
        let layout = self.shape.layout();
        let mut activations = Vec::with_capacity(layout.trunk.len() + 1);
        activations.push(input.to_vec());
        for layer in &layout.trunk {
            let mut z = self.affine(layer, activations.last().unwrap());
            z.iter_mut().for_each(|v| *v = self.shape.activation.apply(*v));
            activations.push(z);
        }
        let features = activations.last().unwrap();
        let logits = self.affine(&layout.policy, features);
        let value = self.affine(&layout.value, features)[0];
        let output = PolicyOutput::from_logits(logits, value);
        ForwardCache { activations, output }
    }

    fn affine(&self, layer: &Layer, x: &[f64]) -> Vec<f64> {
        let w = &self.values[layer.weights()];
        let b = &self.values[layer.biases()];
        (0..layer.fan_out)
            .map(|o| {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates ∂L/∂θ into `grad` given ∂L/∂logits and ∂L/∂value.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_logits: &[f64], d_value: f64, grad: &mut [f64]) {
        let layout = self.shape.layout();
        let features = cache.activations.last().unwrap();
        let mut delta = vec![0.0; features.len()];
        self.backward_affine(&layout.policy, features, d_logits, grad, &mut delta);
        self.backward_affine(&layout.value, features, &[d_value], grad, &mut delta);

        for (k, layer) in layout.trunk.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= self.shape.activation.derivative(*y);
            }
            let mut next = vec![0.0; layer.fan_in];
            self.backward_affine(layer, &cache.activations[k], &delta, grad, &mut next);
            delta = next;
        }
    }

    fn backward_affine(&self, layer: &Layer, x: &[f64], d_out: &[f64], grad: &mut [f64], d_in: &mut [f64]) {
        let w = &self.values[layer.weights()];
        let (wr, br) = (layer.weights(), layer.biases());
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[br.start + o] += d;
            let row = o * layer.fan_in;
            let gw = &mut grad[wr.start + row..wr.start + row + layer.fan_in];
            for ((g, xi), (di, wi)) in gw
                .iter_mut()
                .zip(x)
                .zip(d_in.iter_mut().zip(&w[row..row + layer.fan_in]))
            {
                *g += d * xi;
                *di += d * wi;
            }
        }
    }
}

impl PolicyOutput {
    /// Output for an explicit distribution, e.g. a mixture of network outputs.
    /// Logits are the log-probabilities.
    pub fn from_probs(action_probs: Vec<f64>, value: f64) -> Self {
        let log_probs: Vec<f64> = action_probs.iter().map(|p| p.ln()).collect();
        PolicyOutput {
            logits: log_probs.clone(),
            action_probs,
            log_probs,
            value,
        }
    }

    pub(crate) fn from_logits(logits: Vec<f64>, value: f64) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let action_probs = log_probs.iter().map(|l| l.exp()).collect();
        PolicyOutput {
            logits,
            action_probs,
            log_probs,
            value,
        }
    }
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

/// Inverse-CDF categorical sample. Returns the action id and its log-probability.
pub fn sample<R: Rng + ?Sized>(output: &PolicyOutput, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_nonzero = 0;
    for (a, p) in output.action_probs.iter().enumerate() {
        if *p > 0.0 {
            last_nonzero = a;
        }
        cumulative += p;
        if u < cumulative {
            return (a, output.log_probs[a]);
        }
    }
    (last_nonzero, output.log_probs[last_nonzero])
}

/// Dense gradient with the same layout as [`PolicyParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        GradVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_scaled(&mut self, other: &GradVector, c: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}
