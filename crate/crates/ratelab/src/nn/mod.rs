//! From-scratch fully connected networks: forward/backward passes,
//! Huber loss, softmax/entropy utilities, and a bias-corrected Adam
//! optimizer. Everything is 64-bit and allocation-explicit; the
//! batched kernels are the training hot path.

pub mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One dense layer; weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    /// He-scaled normal weights, zero biases.
    pub fn he_init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        Layer {
            w: (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect(),
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer { w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim], in_dim, out_dim }
    }

    /// `y[o] = Σ_i w[o][i]·x[i] + b[o]`
    ///
    /// Outputs are produced four at a time so the x row is streamed
    /// once per group and the accumulator chains stay independent.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        let n = self.in_dim;
        let mut o = 0;
        while o + 4 <= self.out_dim {
            let r0 = &self.w[o * n..o * n + n];
            let r1 = &self.w[(o + 1) * n..(o + 1) * n + n];
            let r2 = &self.w[(o + 2) * n..(o + 2) * n + n];
            let r3 = &self.w[(o + 3) * n..(o + 3) * n + n];
            let (mut a0, mut a1, mut a2, mut a3) =
                (self.b[o], self.b[o + 1], self.b[o + 2], self.b[o + 3]);
            for i in 0..n {
                let xi = x[i];
                a0 += r0[i] * xi;
                a1 += r1[i] * xi;
                a2 += r2[i] * xi;
                a3 += r3[i] * xi;
            }
            y[o] = a0;
            y[o + 1] = a1;
            y[o + 2] = a2;
            y[o + 3] = a3;
            o += 4;
        }
        while o < self.out_dim {
            let row = &self.w[o * n..o * n + n];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y[o] = acc;
            o += 1;
        }
    }

    /// Batched apply: `ys` is `batch × out`, `xs` is `batch × in`.
    /// Output-major tiling keeps each group of weight rows cached
    /// across the whole batch.
    fn apply_batch(&self, xs: &[f64], ys: &mut [f64], batch: usize) {
        debug_assert_eq!(xs.len(), batch * self.in_dim);
        debug_assert_eq!(ys.len(), batch * self.out_dim);
        let n = self.in_dim;
        let m = self.out_dim;
        let mut o = 0;
        while o + 4 <= m {
            let r0 = &self.w[o * n..o * n + n];
            let r1 = &self.w[(o + 1) * n..(o + 1) * n + n];
            let r2 = &self.w[(o + 2) * n..(o + 2) * n + n];
            let r3 = &self.w[(o + 3) * n..(o + 3) * n + n];
            for bi in 0..batch {
                let x = &xs[bi * n..bi * n + n];
                let (mut a0, mut a1, mut a2, mut a3) =
                    (self.b[o], self.b[o + 1], self.b[o + 2], self.b[o + 3]);
                for i in 0..n {
                    let xi = x[i];
                    a0 += r0[i] * xi;
                    a1 += r1[i] * xi;
                    a2 += r2[i] * xi;
                    a3 += r3[i] * xi;
                }
                let y = &mut ys[bi * m + o..bi * m + o + 4];
                y[0] = a0;
                y[1] = a1;
                y[2] = a2;
                y[3] = a3;
            }
            o += 4;
        }
        while o < m {
            let row = &self.w[o * n..o * n + n];
            for bi in 0..batch {
                let x = &xs[bi * n..bi * n + n];
                let mut acc = self.b[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc += wi * xi;
                }
                ys[bi * m + o] = acc;
            }
            o += 1;
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Fully connected net: rectifier on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub sizes: Vec<usize>,
}

/// Post-activation values kept from a batched forward pass;
/// `activations[0]` is the input batch itself.
pub struct BatchCache {
    pub batch: usize,
    pub activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let layers = sizes.windows(2).map(|w| Layer::he_init(w[0], w[1], rng)).collect();
        Mlp { layers, sizes: sizes.to_vec() }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.apply(&cur, &mut next);
            if li != last {
                relu_in_place(&mut next);
            }
            cur = next;
        }
        cur
    }

    /// Batched forward keeping per-layer activations for backprop.
    /// `xs` is `batch × input_dim` row-major; returns `batch × output_dim`.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> (Vec<f64>, BatchCache) {
        assert_eq!(xs.len(), batch * self.input_dim(), "input batch shape mismatch");
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(xs.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; batch * layer.out_dim];
            layer.apply_batch(activations.last().unwrap(), &mut next, batch);
            if li != last {
                relu_in_place(&mut next);
            }
            activations.push(next);
        }
        let out = activations.last().unwrap().clone();
        (out, BatchCache { batch, activations })
    }

    /// Backprop a batch of output-side gradients to parameter gradients,
    /// summed over the batch.
    pub fn backward_batch(&self, cache: &BatchCache, upstream: &[f64]) -> Gradients {
        let batch = cache.batch;
        assert_eq!(upstream.len(), batch * self.output_dim(), "upstream shape mismatch");
        assert_eq!(cache.activations.len(), self.layers.len() + 1, "stale forward cache");
        let mut grads = Gradients::zeros_like_mlp(self);
        let mut delta = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let below = &cache.activations[li];
            let (dw, db) = grads.layer_mut(li);
            accumulate_layer_grads(layer, below, &delta, batch, dw, db);
            if li > 0 {
                let mut prev_delta = vec![0.0; batch * layer.in_dim];
                backprop_delta(layer, &delta, batch, &mut prev_delta);
                // rectifier gate: post-activation > 0 iff pre-activation > 0
                for (d, a) in prev_delta.iter_mut().zip(below) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }
        grads
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Layer { w, b, .. } = l;
                [w.as_mut_slice(), b.as_mut_slice()]
            })
            .collect()
    }

    pub fn copy_params_from(&mut self, other: &Mlp) {
        assert_eq!(self.sizes, other.sizes, "net architectures differ");
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.w.copy_from_slice(&src.w);
            dst.b.copy_from_slice(&src.b);
        }
    }

    pub fn params_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// `dw[o][i] += Σ_b delta[b][o]·x[b][i]`, `db[o] += Σ_b delta[b][o]`
///
/// Output-major so each gradient row stays cached across the batch;
/// zero deltas (rectifier masks, untouched Q outputs) skip their row.
fn accumulate_layer_grads(
    layer: &Layer,
    x: &[f64],
    delta: &[f64],
    batch: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let n = layer.in_dim;
    let m = layer.out_dim;
    for o in 0..m {
        let wrow = &mut dw[o * n..(o + 1) * n];
        let mut bias_acc = 0.0;
        for bi in 0..batch {
            let d = delta[bi * m + o];
            if d == 0.0 {
                continue;
            }
            bias_acc += d;
            let xrow = &x[bi * n..bi * n + n];
            for (wg, xv) in wrow.iter_mut().zip(xrow) {
                *wg += d * xv;
            }
        }
        db[o] += bias_acc;
    }
}

/// `out[b][i] = Σ_o delta[b][o]·w[o][i]`
fn backprop_delta(layer: &Layer, delta: &[f64], batch: usize, out: &mut [f64]) {
    let n = layer.in_dim;
    let m = layer.out_dim;
    for bi in 0..batch {
        let drow = &delta[bi * m..(bi + 1) * m];
        let orow = &mut out[bi * n..(bi + 1) * n];
        for (o, d) in drow.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let wrow = &layer.w[o * n..(o + 1) * n];
            for (ov, wv) in orow.iter_mut().zip(wrow) {
                *ov += d * wv;
            }
        }
    }
}

/// Parameter-shaped gradient accumulator (layer order: w, b, w, b, ...).
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(shapes: &[usize]) -> Self {
        Gradients { tensors: shapes.iter().map(|n| vec![0.0; *n]).collect() }
    }

    pub fn zeros_like_mlp(net: &Mlp) -> Self {
        Self::zeros(&net.param_shapes())
    }

    fn layer_mut(&mut self, layer_idx: usize) -> (&mut [f64], &mut [f64]) {
        let (lo, hi) = self.tensors.split_at_mut(2 * layer_idx + 1);
        (lo.last_mut().unwrap(), hi.first_mut().unwrap())
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.tensors.iter().map(|t| t.as_slice()).collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for x in t {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale down so the global norm does not exceed `max_norm`;
    /// returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One update: `p -= lr · m̂ / (√v̂ + ε)`.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "param/moment tensor count mismatch");
        assert_eq!(grads.len(), self.m.len(), "grad/moment tensor count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), m.len(), "param/moment shape mismatch");
            assert_eq!(g.len(), m.len(), "grad/moment shape mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Huber loss: quadratic within `kappa`, linear outside.
pub fn huber(delta: f64, kappa: f64) -> f64 {
    debug_assert!(kappa > 0.0);
    let a = delta.abs();
    if a <= kappa {
        0.5 * delta * delta
    } else {
        kappa * (a - 0.5 * kappa)
    }
}

/// d huber / d delta, i.e. `clamp(delta, -kappa, kappa)`.
pub fn huber_grad(delta: f64, kappa: f64) -> f64 {
    delta.clamp(-kappa, kappa)
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Shannon entropy in nats, with 0·log 0 = 0.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Shared-trunk actor-critic: rectifier trunk feeding a logit head and
/// a scalar value head.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticNet {
    pub trunk: Vec<Layer>,
    pub actor: Layer,
    pub critic: Layer,
    pub trunk_sizes: Vec<usize>,
}

/// Trunk activations from a cached single-sample forward pass.
pub struct AcCache {
    activations: Vec<Vec<f64>>,
}

impl ActorCriticNet {
    pub fn new(trunk_sizes: &[usize], n_actions: usize, rng: &mut impl Rng) -> Self {
        assert!(trunk_sizes.len() >= 2, "trunk needs at least two widths");
        let trunk = trunk_sizes.windows(2).map(|w| Layer::he_init(w[0], w[1], rng)).collect();
        let top = *trunk_sizes.last().unwrap();
        ActorCriticNet {
            trunk,
            actor: Layer::he_init(top, n_actions, rng),
            critic: Layer::he_init(top, 1, rng),
            trunk_sizes: trunk_sizes.to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk_sizes[0]
    }

    pub fn n_actions(&self) -> usize {
        self.actor.out_dim
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let (logits, value, _) = self.forward_cached(x);
        (logits, value)
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, f64, AcCache) {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.trunk {
            let mut next = vec![0.0; layer.out_dim];
            layer.apply(activations.last().unwrap(), &mut next);
            relu_in_place(&mut next);
            activations.push(next);
        }
        let top = activations.last().unwrap();
        let mut logits = vec![0.0; self.actor.out_dim];
        self.actor.apply(top, &mut logits);
        let mut value = [0.0];
        self.critic.apply(top, &mut value);
        (logits, value[0], AcCache { activations })
    }

    /// Backprop head gradients through the shared trunk; tensor order is
    /// trunk layers (w, b each), then actor (w, b), then critic (w, b).
    pub fn backward(&self, cache: &AcCache, d_logits: &[f64], d_value: f64) -> Gradients {
        assert_eq!(d_logits.len(), self.actor.out_dim, "logit grad width mismatch");
        assert_eq!(cache.activations.len(), self.trunk.len() + 1, "stale forward cache");
        let mut grads = Gradients::zeros(&self.param_shapes());
        let n_trunk = self.trunk.len();
        let top = &cache.activations[n_trunk];

        let d_val = [d_value];
        {
            let (dw, db) = grads.layer_mut(n_trunk); // actor tensors
            accumulate_layer_grads(&self.actor, top, d_logits, 1, dw, db);
        }
        {
            let (dw, db) = grads.layer_mut(n_trunk + 1); // critic tensors
            accumulate_layer_grads(&self.critic, top, &d_val, 1, dw, db);
        }

        // merge both heads' contributions into the trunk delta
        let mut delta = vec![0.0; self.actor.in_dim];
        backprop_delta(&self.actor, d_logits, 1, &mut delta);
        backprop_delta(&self.critic, &d_val, 1, &mut delta);
        for (d, a) in delta.iter_mut().zip(top) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }

        for li in (0..n_trunk).rev() {
            let layer = &self.trunk[li];
            let below = &cache.activations[li];
            let (dw, db) = grads.layer_mut(li);
            accumulate_layer_grads(layer, below, &delta, 1, dw, db);
            if li > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                backprop_delta(layer, &delta, 1, &mut prev);
                for (d, a) in prev.iter_mut().zip(below) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = prev;
            }
        }
        grads
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        let mut shapes: Vec<usize> =
            self.trunk.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
        shapes.extend([self.actor.w.len(), self.actor.b.len()]);
        shapes.extend([self.critic.w.len(), self.critic.b.len()]);
        shapes
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> =
            self.trunk.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect();
        out.extend([self.actor.w.as_slice(), self.actor.b.as_slice()]);
        out.extend([self.critic.w.as_slice(), self.critic.b.as_slice()]);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .trunk
            .iter_mut()
            .flat_map(|l| {
                let Layer { w, b, .. } = l;
                [w.as_mut_slice(), b.as_mut_slice()]
            })
            .collect();
        {
            let Layer { w, b, .. } = &mut self.actor;
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        {
            let Layer { w, b, .. } = &mut self.critic;
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn copy_params_from(&mut self, other: &ActorCriticNet) {
        assert_eq!(self.trunk_sizes, other.trunk_sizes, "net architectures differ");
        assert_eq!(self.actor.out_dim, other.actor.out_dim, "net architectures differ");
        for (dst, src) in self.trunk.iter_mut().zip(&other.trunk) {
            dst.w.copy_from_slice(&src.w);
            dst.b.copy_from_slice(&src.b);
        }
        self.actor.w.copy_from_slice(&other.actor.w);
        self.actor.b.copy_from_slice(&other.actor.b);
        self.critic.w.copy_from_slice(&other.critic.w);
        self.critic.b.copy_from_slice(&other.critic.b);
    }

    pub fn params_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}
