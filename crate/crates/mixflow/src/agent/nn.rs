//! The Q-network: a fully connected value function over observation
//! vectors with a dueling split, plus its optimizer.
//!
//! All parameters live in one flat `Vec<f64>` with per-layer offsets, so
//! the optimizer, checkpointing, and finite-difference checks treat every
//! layer uniformly. Layers are either plain linear or noisy linear
//! (factorized Gaussian noise on weights and biases); with the noise
//! vectors zeroed a noisy layer evaluates exactly like its mean weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    BadParameterCount { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn param_len(&self) -> usize {
        let dense = self.out_dim * (self.in_dim + 1);
        match self.kind {
            LayerKind::Linear => dense,
            LayerKind::Noisy => 2 * dense,
        }
    }
}

/// Factorized noise sample of one noisy layer; zeros mean "evaluate the
/// mean weights".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerNoise {
    pub eps_in: Vec<f64>,
    pub eps_out: Vec<f64>,
}

fn noise_map(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

/// Number of actions the network scores.
pub const ACTION_COUNT: usize = 2;

/// Dueling Q-network: `hidden` ReLU layers feeding a scalar state-value
/// head and an advantage head, combined as
/// `Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a')`.
#[derive(Debug, Clone)]
pub struct QNetwork {
    obs_dim: usize,
    hidden: Vec<LayerSpec>,
    value_head: LayerSpec,
    adv_head: LayerSpec,
    params: Vec<f64>,
    noise: Vec<LayerNoise>, // parallel to hidden + [value, adv]
}

impl QNetwork {
    /// Deterministic initialization from a seeded stream: uniform
    /// `+-sqrt(6/(in+out))` means, sigma `0.5/sqrt(in)` for noisy layers.
    pub fn new(obs_dim: usize, hidden_sizes: &[usize], noisy: bool, rng: &mut ChaCha8Rng) -> Self {
        let kind = if noisy { LayerKind::Noisy } else { LayerKind::Linear };
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut last = obs_dim;
        for &h in hidden_sizes {
            let spec = LayerSpec {
                kind,
                in_dim: last,
                out_dim: h,
                offset,
            };
            offset += spec.param_len();
            specs.push(spec);
            last = h;
        }
        let value_head = LayerSpec {
            kind,
            in_dim: last,
            out_dim: 1,
            offset,
        };
        let mut offset = offset + value_head.param_len();
        let adv_head = LayerSpec {
            kind,
            in_dim: last,
            out_dim: ACTION_COUNT,
            offset,
        };
        offset += adv_head.param_len();

        let mut net = QNetwork {
            obs_dim,
            hidden: specs,
            value_head,
            adv_head,
            params: vec![0.0; offset],
            noise: Vec::new(),
        };
        net.noise = net
            .layers()
            .map(|spec| LayerNoise {
                eps_in: vec![0.0; spec.in_dim],
                eps_out: vec![0.0; spec.out_dim],
            })
            .collect();
        for spec in net.layers().collect::<Vec<_>>() {
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let dense = spec.out_dim * (spec.in_dim + 1);
            for k in 0..spec.out_dim * spec.in_dim {
                net.params[spec.offset + k] = rng.random_range(-limit..limit);
            }
            // Biases start at zero; noisy sigmas at 0.5/sqrt(in).
            if spec.kind == LayerKind::Noisy {
                let sigma = 0.5 / (spec.in_dim as f64).sqrt();
                for k in 0..spec.out_dim * spec.in_dim {
                    net.params[spec.offset + dense + k] = sigma;
                }
                for k in 0..spec.out_dim {
                    net.params[spec.offset + dense + spec.out_dim * spec.in_dim + k] = sigma;
                }
            }
        }
        net
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(|s| s.out_dim).collect()
    }

    pub fn is_noisy(&self) -> bool {
        self.hidden.first().map(|s| s.kind) == Some(LayerKind::Noisy)
    }

    fn layers(&self) -> impl Iterator<Item = LayerSpec> + '_ {
        self.hidden
            .iter()
            .copied()
            .chain([self.value_head, self.adv_head])
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::BadParameterCount {
                got: params.len(),
                expected: self.params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn copy_params_from(&mut self, other: &QNetwork) {
        self.params.copy_from_slice(&other.params);
    }

    /// Draw fresh factorized noise for every noisy layer.
    pub fn resample_noise(&mut self, rng: &mut ChaCha8Rng) {
        let specs: Vec<LayerSpec> = self.layers().collect();
        for (noise, spec) in self.noise.iter_mut().zip(specs) {
            if spec.kind != LayerKind::Noisy {
                continue;
            }
            for e in noise.eps_in.iter_mut() {
                *e = noise_map(sample_standard_normal(rng));
            }
            for e in noise.eps_out.iter_mut() {
                *e = noise_map(sample_standard_normal(rng));
            }
        }
    }

    /// Clear all noise; the network then evaluates its mean weights.
    pub fn zero_noise(&mut self) {
        for n in &mut self.noise {
            n.eps_in.iter_mut().for_each(|e| *e = 0.0);
            n.eps_out.iter_mut().for_each(|e| *e = 0.0);
        }
    }

    fn layer_forward(&self, li: usize, spec: LayerSpec, x: &[f64], y: &mut [f64]) {
        let p = &self.params[spec.offset..spec.offset + spec.param_len()];
        let dense = spec.out_dim * (spec.in_dim + 1);
        let (w, rest) = p.split_at(spec.out_dim * spec.in_dim);
        let b = &rest[..spec.out_dim];
        match spec.kind {
            LayerKind::Linear => {
                for o in 0..spec.out_dim {
                    let mut acc = b[o];
                    let row = &w[o * spec.in_dim..(o + 1) * spec.in_dim];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    y[o] = acc;
                }
            }
            LayerKind::Noisy => {
                let sw = &p[dense..dense + spec.out_dim * spec.in_dim];
                let sb = &p[dense + spec.out_dim * spec.in_dim..];
                let noise = &self.noise[li];
                for o in 0..spec.out_dim {
                    let eo = noise.eps_out[o];
                    let mut acc = b[o] + sb[o] * eo;
                    for i in 0..spec.in_dim {
                        let weff = w[o * spec.in_dim + i]
                            + sw[o * spec.in_dim + i] * eo * noise.eps_in[i];
                        acc += weff * x[i];
                    }
                    y[o] = acc;
                }
            }
        }
    }

    fn layer_backward(
        &self,
        li: usize,
        spec: LayerSpec,
        x: &[f64],
        dy: &[f64],
        dx: Option<&mut [f64]>,
        grad: &mut [f64],
    ) {
        let p = &self.params[spec.offset..spec.offset + spec.param_len()];
        let g = &mut grad[spec.offset..spec.offset + spec.param_len()];
        let dense = spec.out_dim * (spec.in_dim + 1);
        let nw = spec.out_dim * spec.in_dim;
        match spec.kind {
            LayerKind::Linear => {
                for o in 0..spec.out_dim {
                    for i in 0..spec.in_dim {
                        g[o * spec.in_dim + i] += dy[o] * x[i];
                    }
                    g[nw + o] += dy[o];
                }
                if let Some(dx) = dx {
                    for i in 0..spec.in_dim {
                        let mut acc = 0.0;
                        for o in 0..spec.out_dim {
                            acc += dy[o] * p[o * spec.in_dim + i];
                        }
                        dx[i] = acc;
                    }
                }
            }
            LayerKind::Noisy => {
                let noise = &self.noise[li];
                for o in 0..spec.out_dim {
                    let eo = noise.eps_out[o];
                    for i in 0..spec.in_dim {
                        let k = o * spec.in_dim + i;
                        g[k] += dy[o] * x[i];
                        g[dense + k] += dy[o] * x[i] * eo * noise.eps_in[i];
                    }
                    g[nw + o] += dy[o];
                    g[dense + nw + o] += dy[o] * eo;
                }
                if let Some(dx) = dx {
                    let sw = &p[dense..dense + nw];
                    for i in 0..spec.in_dim {
                        let mut acc = 0.0;
                        for o in 0..spec.out_dim {
                            let weff =
                                p[o * spec.in_dim + i] + sw[o * spec.in_dim + i] * noise.eps_out[o] * noise.eps_in[i];
                            acc += dy[o] * weff;
                        }
                        dx[i] = acc;
                    }
                }
            }
        }
    }

    /// Forward pass keeping the activations needed for backprop.
    pub fn forward_trace(&self, obs: &[f64]) -> Result<ForwardTrace, NnError> {
        if obs.len() != self.obs_dim {
            return Err(NnError::DimensionMismatch {
                got: obs.len(),
                expected: self.obs_dim,
            });
        }
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        let mut x = obs.to_vec();
        for (li, spec) in self.hidden.iter().enumerate() {
            let mut y = vec![0.0; spec.out_dim];
            self.layer_forward(li, *spec, &x, &mut y);
            pre.push(y.clone());
            for v in y.iter_mut() {
                *v = v.max(0.0);
            }
            x = y.clone();
            post.push(y);
        }
        let nh = self.hidden.len();
        let mut value = vec![0.0; 1];
        self.layer_forward(nh, self.value_head, &x, &mut value);
        let mut adv = vec![0.0; ACTION_COUNT];
        self.layer_forward(nh + 1, self.adv_head, &x, &mut adv);
        let mean_adv = adv.iter().sum::<f64>() / ACTION_COUNT as f64;
        let mut q = [0.0; ACTION_COUNT];
        for a in 0..ACTION_COUNT {
            q[a] = value[0] + adv[a] - mean_adv;
        }
        Ok(ForwardTrace {
            input: obs.to_vec(),
            pre,
            post,
            value: value[0],
            adv: [adv[0], adv[1]],
            q,
        })
    }

    /// Q-values for one observation with the current noise state.
    pub fn q_values(&self, obs: &[f64]) -> Result<[f64; ACTION_COUNT], NnError> {
        Ok(self.forward_trace(obs)?.q)
    }

    /// State value and advantages (before the dueling combination).
    pub fn dueling_parts(&self, obs: &[f64]) -> Result<(f64, [f64; ACTION_COUNT]), NnError> {
        let t = self.forward_trace(obs)?;
        Ok((t.value, t.adv))
    }

    /// Backpropagate `dq` (gradient of the loss in the Q outputs) for the
    /// traced sample, accumulating into `grad` (same layout as `params`).
    pub fn backward(&self, trace: &ForwardTrace, dq: &[f64; ACTION_COUNT], grad: &mut [f64]) {
        // Dueling combination: dV = sum(dq); dA_a = dq_a - mean(dq).
        let s: f64 = dq.iter().sum();
        let dv = [s];
        let mut da = [0.0; ACTION_COUNT];
        for a in 0..ACTION_COUNT {
            da[a] = dq[a] - s / ACTION_COUNT as f64;
        }

        let last_hidden: &[f64] = match self.post_last(trace) {
            Some(h) => h,
            None => &trace.input,
        };
        let nh = self.hidden.len();
        let mut dh = vec![0.0; last_hidden.len()];
        let mut dh_v = vec![0.0; last_hidden.len()];
        self.layer_backward(nh, self.value_head, last_hidden, &dv, Some(&mut dh_v), grad);
        self.layer_backward(nh + 1, self.adv_head, last_hidden, &da, Some(&mut dh), grad);
        for (a, b) in dh.iter_mut().zip(&dh_v) {
            *a += b;
        }

        // Walk the hidden stack backwards through the ReLUs.
        for li in (0..self.hidden.len()).rev() {
            for (g, &z) in dh.iter_mut().zip(&trace.pre[li]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            let x: &[f64] = if li == 0 { &trace.input } else { &trace.post[li - 1] };
            let mut dx = vec![0.0; x.len()];
            let need_dx = li > 0;
            self.layer_backward(
                li,
                self.hidden[li],
                x,
                &dh.clone(),
                if need_dx { Some(&mut dx) } else { None },
                grad,
            );
            dh = dx;
        }
    }

    fn post_last<'a>(&self, trace: &'a ForwardTrace) -> Option<&'a [f64]> {
        trace.post.last().map(Vec::as_slice)
    }
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub value: f64,
    pub adv: [f64; ACTION_COUNT],
    pub q: [f64; ACTION_COUNT],
}

/// Box–Muller standard normal from a uniform stream.
fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Adam with standard defaults over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / b1t;
            let v_hat = *v / b2t;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
