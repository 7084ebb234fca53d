//! A small fully connected network with hand-written reverse mode.
//!
//! Hidden layers use ReLU, the output layer is linear. All parameters live in
//! one flat buffer, layer by layer, each layer storing its `out × in`
//! row-major weight matrix followed by its `out` biases. Gradients use the
//! same layout, which lets [`AdamState`] work on plain slices.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Feed-forward network `input → hidden… → output`.
#[derive(Debug, Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    /// Changes whenever parameters may have changed; ties caches to weights.
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes && self.params == other.params
    }
}

/// Activations recorded by [`Mlp::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// `inputs[l]` is the input fed to layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
}

/// Gradients of a scalar objective with respect to parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            generation: next_generation(),
        })
    }

    /// Builds a network from per-layer weight matrices and bias vectors.
    pub fn from_layers(layer_sizes: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::Schema(format!(
                "expected {n_layers} weight and bias arrays, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for (l, w) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != w[0] * w[1] || biases[l].len() != w[1] {
                return Err(Error::Schema(format!("layer {l} has mismatched parameter shapes")));
            }
            params.extend_from_slice(&weights[l]);
            params.extend_from_slice(&biases[l]);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Schema("non-finite network parameter".into()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            generation: next_generation(),
        })
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {layer_sizes:?}")));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.layer_sizes[..=layer])
    }

    /// Weight matrix of `layer`, `out × in` row-major.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let start = self.offset(layer);
        let n = self.layer_sizes[layer] * self.layer_sizes[layer + 1];
        &self.params[start..start + n]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let start = self.offset(layer) + self.layer_sizes[layer] * self.layer_sizes[layer + 1];
        &self.params[start..start + self.layer_sizes[layer + 1]]
    }

    pub fn set_bias(&mut self, layer: usize, index: usize, value: f64) {
        let start = self.offset(layer) + self.layer_sizes[layer] * self.layer_sizes[layer + 1];
        self.params_mut()[start + index] = value;
    }

    /// Output only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.input_size() {
            return Err(Error::Domain(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite network input".into()));
        }
        let n_layers = self.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = x.to_vec();
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = self.weights(l);
            let b = self.biases(l);
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>() + b[o]
                })
                .collect();
            let out = if l + 1 < n_layers {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, out));
            pre.push(z);
        }
        Ok((
            a,
            ForwardCache {
                generation: self.generation,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse-mode gradients of `Σ output_grad·y` for the cached forward pass.
    ///
    /// ReLU uses subgradient 0 at 0.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
        if cache.generation != self.generation || cache.inputs.len() != self.n_layers() {
            return Err(Error::Domain("forward cache does not belong to this network state".into()));
        }
        if output_grad.len() != self.output_size() {
            return Err(Error::Domain(format!(
                "output gradient has {} entries, network has {} outputs",
                output_grad.len(),
                self.output_size()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = output_grad.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if l + 1 < self.n_layers() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let start = self.offset(l);
            let input = &cache.inputs[l];
            for o in 0..n_out {
                let row = &mut grads[start + o * n_in..start + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g = delta[o] * a;
                }
                grads[start + n_in * n_out + o] = delta[o];
            }
            let w = self.weights(l);
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                for (i, p) in prev.iter_mut().enumerate() {
                    *p += w[o * n_in + i] * delta[o];
                }
            }
            delta = prev;
        }
        Ok(Gradients { params: grads, input: delta })
    }

    /// Applies one Adam update to the network parameters.
    pub fn adam_step(&mut self, state: &mut AdamState, grads: &[f64]) -> Result<()> {
        state.step(self.params_mut(), grads)
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Domain(format!(
                "adam state sized for {} parameters, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Input normalisation stored alongside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationRecord {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub s: usize,
    pub x_percentile: f64,
}

/// Versioned JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub normalization: NormalizationRecord,
    pub meta: CheckpointMeta,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(net: &Mlp, normalization: NormalizationRecord, meta: CheckpointMeta) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            layer_sizes: net.layer_sizes().to_vec(),
            weights: (0..net.n_layers()).map(|l| net.weights(l).to_vec()).collect(),
            biases: (0..net.n_layers()).map(|l| net.biases(l).to_vec()).collect(),
            normalization,
            meta,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => return Err(Error::Schema(format!("unsupported checkpoint version {v}"))),
            None => return Err(Error::Schema("checkpoint has no version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn network(&self) -> Result<Mlp> {
        Mlp::from_layers(&self.layer_sizes, &self.weights, &self.biases)
    }
}
