//! Dense feed-forward network with a single sigmoid output unit.
//!
//! Layer weights are row-major `(outputs, inputs)`. Hidden layers share one
//! activation; the last layer is linear and its output goes through a
//! sigmoid. Parameters flatten as `[w0, b0, w1, b1, ...]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Cross-entropy on the sigmoid output, computed from the logit.
    BinaryCrossEntropy,
    /// `(sigmoid(z) - y)^2`.
    SquaredError,
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(z: T) -> T {
    // ln(1 + e^z) without overflow
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

impl Objective {
    fn loss<T: Scalar>(self, logit: T, target: T) -> T {
        match self {
            Objective::BinaryCrossEntropy => softplus(logit) - target * logit,
            Objective::SquaredError => {
                let d = sigmoid(logit) - target;
                d * d
            }
        }
    }

    fn dloss_dlogit<T: Scalar>(self, logit: T, target: T) -> T {
        let p = sigmoid(logit);
        match self {
            Objective::BinaryCrossEntropy => p - target,
            Objective::SquaredError => T::of(2.0) * (p - target) * p * (T::one() - p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn forward(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z = row.iter().zip(x).fold(self.bias[o], |acc, (&w, &xi)| acc + w * xi);
            out.push(z);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    pub activation: Activation,
}

impl<T: Scalar> Network<T> {
    /// All-zero network; every input maps to exactly 0.5.
    pub fn zeros(inputs: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Layer::zeros(fan_in, h));
            fan_in = h;
        }
        Self { layers, activation }
    }

    /// Uniform initialisation: He limits for relu, Glorot limits for tanh,
    /// zero biases. Draws are `f64` from the supplied generator.
    pub fn init(inputs: usize, hidden: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(inputs, hidden, activation);
        for layer in &mut net.layers {
            let limit = match activation {
                Activation::Relu => (6.0 / layer.inputs as f64).sqrt(),
                Activation::Tanh => (6.0 / (layer.inputs + layer.outputs) as f64).sqrt(),
            };
            for w in &mut layer.weights {
                *w = T::of(rng.gen_range(-limit..limit));
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    pub fn logit(&self, x: &[T]) -> T {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.forward(&cur, &mut next);
            if i != last {
                for v in &mut next {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    pub fn forward(&self, x: &[T]) -> T {
        sigmoid(self.logit(x))
    }

    /// Mean loss over the batch and its gradient in [`Network::params`]
    /// layout.
    pub fn loss_and_gradient(&self, xs: &[Vec<T>], ys: &[T], objective: Objective) -> (T, Vec<T>) {
        assert_eq!(xs.len(), ys.len());
        let mut grad = vec![T::zero(); self.param_count()];
        let mut total = T::zero();
        let offsets = self.offsets();

        for (x, &y) in xs.iter().zip(ys) {
            // forward, keeping post-activation outputs per layer
            let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() + 1);
            acts.push(x.clone());
            let last = self.layers.len() - 1;
            for (i, l) in self.layers.iter().enumerate() {
                let mut out = Vec::new();
                l.forward(&acts[i], &mut out);
                if i != last {
                    for v in &mut out {
                        *v = self.activation.apply(*v);
                    }
                }
                acts.push(out);
            }
            let z = acts[self.layers.len()][0];
            total = total + objective.loss(z, y);

            let mut delta = vec![objective.dloss_dlogit(z, y)];
            for i in (0..self.layers.len()).rev() {
                let l = &self.layers[i];
                let input = &acts[i];
                let (w_off, b_off) = offsets[i];
                for o in 0..l.outputs {
                    grad[b_off + o] = grad[b_off + o] + delta[o];
                    for k in 0..l.inputs {
                        let g = &mut grad[w_off + o * l.inputs + k];
                        *g = *g + delta[o] * input[k];
                    }
                }
                if i == 0 {
                    break;
                }
                let mut prev = vec![T::zero(); l.inputs];
                for (k, p) in prev.iter_mut().enumerate() {
                    let s = (0..l.outputs).fold(T::zero(), |acc, o| acc + l.weights[o * l.inputs + k] * delta[o]);
                    *p = s * self.activation.derivative_from_output(input[k]);
                }
                delta = prev;
            }
        }

        let n = T::of(xs.len().max(1) as f64);
        for g in &mut grad {
            *g = *g / n;
        }
        (total / n, grad)
    }

    pub fn loss(&self, xs: &[Vec<T>], ys: &[T], objective: Objective) -> T {
        let total = xs.iter().zip(ys).fold(T::zero(), |acc, (x, &y)| acc + objective.loss(self.logit(x), y));
        total / T::of(xs.len().max(1) as f64)
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = at;
                let b = at + l.weights.len();
                at = b + l.bias.len();
                (w, b)
            })
            .collect()
    }
}

/// Adam optimiser state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
