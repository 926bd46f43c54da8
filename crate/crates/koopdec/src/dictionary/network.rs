//! Feedforward networks used as trainable dictionary feature generators.
//!
//! A network of depth `D` applies `D - 1` activated layers followed by one
//! affine output layer; a depth-1 network is therefore purely affine. All
//! activations are C^1 everywhere so that gradients can be checked against
//! finite differences.

use crate::numerics::Matrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Weights and biases of a feedforward stack.
///
/// Layer `i` maps a vector of `weights[i].cols()` entries to
/// `weights[i].rows()` entries; consecutive layer dimensions chain. Hidden
/// layers apply `activation`, the final layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Gradient (or any tangent direction) with the same shape as [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct NetworkGradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetworkParams {
    /// Random initialization: `depth` layers, all hidden and output widths
    /// equal to `width`, entries drawn N(0, 1/sqrt(fan_in)).
    pub fn random(input_dim: usize, width: usize, depth: usize, activation: Activation, seed: u64) -> Self {
        assert!(depth >= 1 && width >= 1 && input_dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        let mut fan_in = input_dim;
        for _ in 0..depth {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            weights.push(Matrix::from_fn(width, fan_in, |_, _| normal.sample(&mut rng)));
            biases.push((0..width).map(|_| 0.1 * normal.sample(&mut rng)).collect());
            fan_in = width;
        }
        NetworkParams {
            weights,
            biases,
            activation,
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Forward pass keeping pre-activations and activations for backprop.
    /// Returns (pre_activations per layer, post-layer values per layer).
    fn forward_trace(&self, v: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut post = Vec::with_capacity(depth + 1);
        post.push(v.to_vec());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.mul_vec(post.last().unwrap());
            for (zj, bj) in z.iter_mut().zip(b) {
                *zj += bj;
            }
            let out = if i + 1 == depth {
                z.clone()
            } else {
                z.iter().map(|&x| self.activation.apply(x)).collect()
            };
            pre.push(z);
            post.push(out);
        }
        (pre, post)
    }

    pub fn output(&self, v: &[f64]) -> Vec<f64> {
        let (_, post) = self.forward_trace(v);
        post.into_iter().next_back().unwrap()
    }

    /// Exact Jacobian of the network output with respect to the input,
    /// accumulated layer by layer.
    pub fn jacobian(&self, v: &[f64]) -> Matrix {
        let depth = self.depth();
        let (pre, _) = self.forward_trace(v);
        let mut jac = Matrix::identity(self.input_dim());
        for i in 0..depth {
            let mut j_next = &self.weights[i] * &jac;
            if i + 1 != depth {
                for r in 0..j_next.rows() {
                    let d = self.activation.derivative(pre[i][r]);
                    for c in 0..j_next.cols() {
                        j_next.set(r, c, j_next.get(r, c) * d);
                    }
                }
            }
            jac = j_next;
        }
        jac
    }

    /// Gradient of `<upstream, output(v)>` with respect to every weight and
    /// bias, by reverse-mode accumulation.
    pub fn parameter_gradient(&self, v: &[f64], upstream: &[f64]) -> NetworkGradient {
        let depth = self.depth();
        let (pre, post) = self.forward_trace(v);
        let mut grad = NetworkGradient::zeros_like(self);

        // delta starts at the affine output layer.
        let mut delta: Vec<f64> = upstream.to_vec();
        for i in (0..depth).rev() {
            // dW_i = delta * post_i^T, db_i = delta
            let input = &post[i];
            for r in 0..delta.len() {
                for c in 0..input.len() {
                    let cur = grad.weights[i].get(r, c);
                    grad.weights[i].set(r, c, cur + delta[r] * input[c]);
                }
                grad.biases[i][r] += delta[r];
            }
            if i > 0 {
                let back = self.weights[i].transpose().mul_vec(&delta);
                delta = back
                    .iter()
                    .enumerate()
                    .map(|(r, &x)| x * self.activation.derivative(pre[i - 1][r]))
                    .collect();
            }
        }
        grad
    }

    /// In-place parameter update `theta += scale * direction`.
    pub fn add_scaled(&mut self, direction: &NetworkGradient, scale: f64) {
        for (w, d) in self.weights.iter_mut().zip(&direction.weights) {
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    w.set(r, c, w.get(r, c) + scale * d.get(r, c));
                }
            }
        }
        for (b, d) in self.biases.iter_mut().zip(&direction.biases) {
            for (bj, dj) in b.iter_mut().zip(d) {
                *bj += scale * dj;
            }
        }
    }
}

impl NetworkGradient {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        NetworkGradient {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGradient) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w = &*w + o;
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            for (bj, oj) in b.iter_mut().zip(o) {
                *bj += oj;
            }
        }
    }

    pub fn sub_assign(&mut self, other: &NetworkGradient) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w = &*w - o;
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            for (bj, oj) in b.iter_mut().zip(o) {
                *bj -= oj;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w = w.scale(s);
        }
        for b in &mut self.biases {
            for bj in b.iter_mut() {
                *bj *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(|m| m.max_abs()).fold(0.0, f64::max);
        let b = self
            .biases
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        w.max(b)
    }
}

/// Adam state for one network.
pub struct Adam {
    m: NetworkGradient,
    v: NetworkGradient,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &NetworkParams) -> Self {
        Adam {
            m: NetworkGradient::zeros_like(params),
            v: NetworkGradient::zeros_like(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grad: &NetworkGradient, lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.weights.len() {
            let w = &mut params.weights[i];
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    let g = grad.weights[i].get(r, c);
                    let m = self.beta1 * self.m.weights[i].get(r, c) + (1.0 - self.beta1) * g;
                    let v = self.beta2 * self.v.weights[i].get(r, c) + (1.0 - self.beta2) * g * g;
                    self.m.weights[i].set(r, c, m);
                    self.v.weights[i].set(r, c, v);
                    let update = (m / b1t) / ((v / b2t).sqrt() + self.eps);
                    w.set(r, c, w.get(r, c) - lr * update);
                }
            }
            for (j, bj) in params.biases[i].iter_mut().enumerate() {
                let g = grad.biases[i][j];
                let m = self.beta1 * self.m.biases[i][j] + (1.0 - self.beta1) * g;
                let v = self.beta2 * self.v.biases[i][j] + (1.0 - self.beta2) * g * g;
                self.m.biases[i][j] = m;
                self.v.biases[i][j] = v;
                *bj -= lr * (m / b1t) / ((v / b2t).sqrt() + self.eps);
            }
        }
    }
}
