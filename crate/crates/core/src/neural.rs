//! Small dense network: LeakyReLU hidden layers, identity output, masked
//! mean-squared-error loss, backpropagation and Adam. Everything is `f64`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SLOPE: f64 = 0.3;

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn leaky_relu_vec(xs: &[f64], slope: f64) -> Vec<f64> {
    xs.iter().map(|&x| leaky_relu(x, slope)).collect()
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub slope: f64,
}

impl Mlp {
    pub fn zeros(sizes: &[usize], slope: f64) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least an input and an output size");
        Mlp {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            slope,
        }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], slope: f64, rng: &mut R) -> Self {
        let mut net = Mlp::zeros(sizes, slope);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        net
    }

    /// The Q-network shape: input and both hidden layers as wide as the grid,
    /// four outputs.
    pub fn for_grid<R: Rng + ?Sized>(n_cells: usize, slope: f64, rng: &mut R) -> Self {
        Mlp::new(&[n_cells, n_cells, n_cells, 4], slope, rng)
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_len()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Parameters in canonical order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Shape {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.affine(&x);
            if i < last {
                x.iter_mut().for_each(|v| *v = leaky_relu(*v, self.slope));
            }
        }
        Ok(x)
    }

    /// Layer inputs (post-activation) and pre-activations for every layer.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(acts.last().expect("input pushed"));
            let a = if i < last {
                leaky_relu_vec(&z, self.slope)
            } else {
                z.clone()
            };
            pres.push(z);
            acts.push(a);
        }
        (acts, pres)
    }

    /// Text checkpoint: a header with the layer sizes and slope, then one
    /// parameter per line in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.sizes().iter().map(usize::to_string).collect();
        writeln!(out, "mlp 1").unwrap();
        writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
        writeln!(out, "slope {}", self.slope).unwrap();
        for p in self.params() {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |msg: &str| Error::Parse {
            path: "<mlp>".into(),
            msg: msg.into(),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("mlp 1") {
            return Err(err("missing 'mlp 1' header"));
        }
        let sizes: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("sizes "))
            .ok_or_else(|| err("missing sizes line"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| err("bad layer size")))
            .collect::<Result<_>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(err("need at least two positive layer sizes"));
        }
        let slope: f64 = lines
            .next()
            .and_then(|l| l.strip_prefix("slope "))
            .ok_or_else(|| err("missing slope line"))?
            .trim()
            .parse()
            .map_err(|_| err("bad slope"))?;
        let mut net = Mlp::zeros(&sizes, slope);
        let expected = net.n_params();
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| err("bad parameter")))
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(err(&format!("expected {expected} parameters, found {}", values.len())));
        }
        for (p, v) in net.params_mut().zip(values) {
            *p = v;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mlp::from_text(&text)
    }
}

/// Mean of `(q - target)^2` over the outputs selected by `mask`; zero when
/// nothing is selected.
pub fn masked_mse(output: &[f64], target: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((q, t), &m) in output.iter().zip(target).zip(mask) {
        if m {
            sum += (q - t) * (q - t);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Gradient of the loss with respect to every parameter, canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(net: &Mlp) -> Self {
        Gradients(vec![0.0; net.n_params()])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// One training example for [`backprop`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Loss and gradients of [`masked_mse`] for a single example.
pub fn backprop(net: &Mlp, input: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(net);
    let loss = accumulate(net, input, target, mask, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Mean loss and mean gradients over a batch.
pub fn batch_backprop(net: &Mlp, batch: &[Sample]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(net);
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        loss += accumulate(net, &s.input, &s.target, &s.mask, scale, &mut grads)? * scale;
    }
    Ok((loss, grads))
}

/// Adds `scale * dLoss/dParam` into `grads`; returns the unscaled loss.
fn accumulate(
    net: &Mlp,
    input: &[f64],
    target: &[f64],
    mask: &[bool],
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    net.check_input(input)?;
    let n_out = net.output_len();
    for len in [target.len(), mask.len()] {
        if len != n_out {
            return Err(Error::Shape {
                expected: n_out,
                got: len,
            });
        }
    }
    let (acts, pres) = net.forward_trace(input);
    let output = acts.last().expect("output layer");
    let loss = masked_mse(output, target, mask);
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Ok(loss);
    }

    // dL/dz for the output layer (identity activation).
    let mut delta: Vec<f64> = output
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((q, t), &m)| if m { 2.0 * (q - t) / n_masked as f64 } else { 0.0 })
        .collect();

    // Parameter offsets of each layer in canonical order.
    let mut offsets = Vec::with_capacity(net.layers.len());
    let mut off = 0;
    for layer in &net.layers {
        offsets.push(off);
        off += layer.n_params();
    }

    for (li, layer) in net.layers.iter().enumerate().rev() {
        let x = &acts[li];
        let base = offsets[li];
        let (gw, gb) = grads.0[base..base + layer.n_params()].split_at_mut(layer.weights.len());
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
            for (g, &xi) in row.iter_mut().zip(x) {
                *g += scale * d * xi;
            }
            gb[o] += scale * d;
        }
        if li == 0 {
            break;
        }
        // Back through this layer's weights and the previous layer's activation.
        let prev_pre = &pres[li - 1];
        let mut next = vec![0.0; layer.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (n, &w) in next.iter_mut().zip(row) {
                *n += d * w;
            }
        }
        for (n, &z) in next.iter_mut().zip(prev_pre) {
            *n *= leaky_relu_grad(z, net.slope);
        }
        delta = next;
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update of every parameter.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.0.len() != state.m.len() || net.n_params() != state.m.len() {
        return Err(Error::Shape {
            expected: state.m.len(),
            got: grads.0.len(),
        });
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in net
        .params_mut()
        .zip(&grads.0)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
