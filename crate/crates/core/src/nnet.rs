//! Dense MLPs with ELU hidden activations, hand-written reverse mode and Adam.
//!
//! Batches are row-major: one sample per row. A layer with `out` units and
//! `inp` inputs stores its weights as an `out x inp` matrix.

use nalgebra::DMatrix;
use ndarray::linalg::{general_mat_mul, general_mat_vec_mul};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Multilayer perceptron: ELU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs recorded by [`Mlp::forward`]; `inputs[0]` is the batch itself.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// ELU derivative written in terms of the activation value.
#[inline]
fn elu_grad_from_output(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Random matrix with orthonormal rows (`rows <= cols`) or columns, times `gain`.
pub fn orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs a non-empty shape");
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
        gain * v
    })
}

impl Mlp {
    /// Orthogonally initialised net with zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let gain = if l == last { output_gain } else { hidden_gain };
                Dense {
                    weights: orthogonal_init(w[1], w[0], gain, rng),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_congruent(&self, other: &Mlp) -> bool {
        self.sizes() == other.sizes()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Weight and bias buffers in a fixed order.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    fn layer_forward(layer: &Dense, x: &ArrayView2<f64>, activate: bool) -> Array2<f64> {
        let mut z = x.dot(&layer.weights.t());
        z += &layer.bias;
        if activate {
            z.mapv_inplace(elu);
        }
        z
    }

    /// Batch forward pass, returning the output and the cache needed by `backward`.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let next = Self::layer_forward(layer, &cur.view(), l != last);
            inputs.push(cur);
            cur = next;
        }
        (cur, ForwardCache { inputs })
    }

    /// Forward pass without a cache.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let last = self.layers.len() - 1;
        let mut cur = Self::layer_forward(&self.layers[0], &x, last != 0);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            cur = Self::layer_forward(layer, &cur.view(), l != last);
        }
        cur
    }

    /// Single-sample forward pass.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        let last = self.layers.len() - 1;
        let mut cur = Array1::from(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = layer.bias.clone();
            general_mat_vec_mul(1.0, &layer.weights, &cur, 1.0, &mut out);
            if l != last {
                out.mapv_inplace(elu);
            }
            cur = out;
        }
        cur.to_vec()
    }

    /// Reverse pass for `dL/d(output) = grad_out`. Returns parameter gradients
    /// (skipped when `with_params` is false) and `dL/d(input)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: Array2<f64>,
        with_params: bool,
    ) -> (Option<Mlp>, Array2<f64>) {
        let mut grads = with_params.then(|| self.zeros_like());
        let mut delta = grad_out;
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[l];
                // written in place so the gradient keeps row-major layout
                general_mat_mul(1.0, &delta.t(), input, 0.0, &mut gl.weights);
                gl.bias = delta.sum_axis(Axis(0));
            }
            let mut dx = delta.dot(&self.layers[l].weights);
            if l > 0 {
                Zip::from(&mut dx)
                    .and(input)
                    .for_each(|d, &a| *d *= elu_grad_from_output(a));
            }
            delta = dx;
        }
        (grads, delta)
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.tensors_mut().zip(source.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }

    /// Flat copy of every parameter (weights then bias, layer by layer).
    pub fn flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        assert_eq!(off, values.len(), "flat parameter length mismatch");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn adam_update(cfg: &AdamConfig, t: u64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Mlp,
    pub second: Mlp,
    pub steps: u64,
}

impl AdamState {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) {
        assert!(params.is_congruent(grads) && params.is_congruent(&self.first));
        self.steps += 1;
        let t = self.steps;
        let cfg = self.config;
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
        {
            adam_update(&cfg, t, p, g, m, v);
        }
    }
}

/// Adam for a single scalar parameter (the entropy temperature).
#[derive(Debug, Clone, Copy)]
pub struct ScalarAdam {
    pub config: AdamConfig,
    first: f64,
    second: f64,
    steps: u64,
}

impl ScalarAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: 0.0,
            second: 0.0,
            steps: 0,
        }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) {
        self.steps += 1;
        let mut p = [*param];
        let (mut m, mut v) = ([self.first], [self.second]);
        adam_update(&self.config, self.steps, &mut p, &[grad], &mut m, &mut v);
        *param = p[0];
        self.first = m[0];
        self.second = v[0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn scalar_orthogonal_is_plus_minus_one() {
        let mut rng = seeded(0);
        for _ in 0..10 {
            let w = orthogonal_init(1, 1, 1.0, &mut rng);
            assert!((w[[0, 0]].abs() - 1.0).abs() < 1e-12);
        }
    }

    fn max_gram_residual(w: &Array2<f64>, gain: f64) -> f64 {
        let (rows, cols) = w.dim();
        let gram = if rows <= cols { w.dot(&w.t()) } else { w.t().dot(w) };
        let k = gram.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[[i, j]] / (gain * gain) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn orthogonality_wide_and_tall() {
        let mut rng = seeded(1);
        let g = 2f64.sqrt();
        let w = orthogonal_init(22, 256, g, &mut rng);
        assert!(max_gram_residual(&w, g) < 1e-6);
        let w = orthogonal_init(256, 22, g, &mut rng);
        assert!(max_gram_residual(&w, g) < 1e-6);
        let a = orthogonal_init(8, 8, 1.0, &mut seeded(2));
        let b = orthogonal_init(8, 8, 1.0, &mut seeded(3));
        assert_ne!(a, b);
        assert!(max_gram_residual(&b, 1.0) < 1e-6);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[4, 5, 3]);
        let out = net.predict(&[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn output_layer_is_linear_and_hidden_is_elu() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].weights[[0, 0]] = 1.0;
        assert_eq!(net.predict(&[-1.0]), vec![-1.0]);

        let mut net = Mlp::zeros(&[1, 1, 1]);
        net.layers[0].weights[[0, 0]] = 1.0;
        net.layers[1].weights[[0, 0]] = 1.0;
        let y = net.predict(&[-1.0])[0];
        assert!((y - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y + 0.632).abs() < 1e-3);
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let mut rng = seeded(4);
        let net = Mlp::new(&[5, 7, 7, 3], 2f64.sqrt(), 0.5, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (y, _) = net.forward(x.view());
        let y2 = net.predict_batch(x.view());
        for i in 0..4 {
            let s = net.predict(x.row(i).as_slice().unwrap());
            for j in 0..3 {
                assert!((y[[i, j]] - s[j]).abs() < 1e-12);
                assert_eq!(y[[i, j]], y2[[i, j]]);
            }
        }
    }

    #[test]
    fn hand_chain_rule_one_by_one() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].weights[[0, 0]] = 2.0;
        let x = array![[1.0]];
        let (y, cache) = net.forward(x.view());
        // L = y^2, dL/dy = 2y = 4, dL/dw = 4 x, dL/dx = 4 w
        let grad = y.mapv(|v| 2.0 * v);
        let (g, dx) = net.backward(&cache, grad, true);
        let g = g.unwrap();
        assert_eq!(g.layers[0].weights[[0, 0]], 4.0);
        assert_eq!(g.layers[0].bias[0], 4.0);
        assert_eq!(dx[[0, 0]], 8.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = seeded(5);
        let net = Mlp::new(&[3, 4, 2], 1.0, 1.0, &mut rng);
        let x = Array2::from_elem((2, 3), 0.3);
        let (_, cache) = net.forward(x.view());
        let (g, dx) = net.backward(&cache, Array2::zeros((2, 2)), true);
        assert!(g.unwrap().flat().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut rng = seeded(6);
        let mut net = Mlp::new(&[2, 3, 1], 1.0, 1.0, &mut rng);
        let before = net.flat();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let z = net.zeros_like();
        adam.step(&mut net, &z);
        assert_eq!(net.flat(), before);

        let mut ones = net.zeros_like();
        ones.tensors_mut().for_each(|t| t.fill(1.0));
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &ones);
        for (a, b) in net.flat().iter().zip(&before) {
            assert!((a - b + 3e-4).abs() < 1e-10);
        }
        // moments decay under zero gradient afterwards
        let m0 = adam.first.flat()[0];
        let z = net.zeros_like();
        adam.step(&mut net, &z);
        assert!((adam.first.flat()[0] - 0.9 * m0).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut p = 0.0;
        let mut opt = ScalarAdam::new(AdamConfig::default());
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p;
            opt.step(&mut p, 0.37);
            last = before - p;
        }
        assert!((last - 3e-4).abs() < 1e-8);
    }

    #[test]
    fn polyak_mixes() {
        let mut target = Mlp::zeros(&[2, 2]);
        let mut online = target.zeros_like();
        online.tensors_mut().for_each(|t| t.fill(1.0));
        target.polyak_from(&online, 0.005);
        assert!(target.flat().iter().all(|&v| (v - 0.005).abs() < 1e-15));
        let snapshot = online.clone();
        online.polyak_from(&snapshot, 0.3);
        assert_eq!(online, snapshot);
    }
}
