//! Parameter storage, dense layers and the Adam optimizer.

use rand::Rng as _;

use crate::rng::Rng;
use crate::tape::{Tape, Tensor, Var};

/// Named parameter tensors addressed by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, index: usize) -> Var {
        tape.param(index, &self.tensors[index])
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Glorot-uniform matrix.
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_vec(fan_in, fan_out, (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect())
}

/// Affine map `x W + b` on row-stacked inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = store.bind(tape, self.weight);
        let b = store.bind(tape, self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// Fully connected network with ReLU after every layer, or a single linear layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu: bool,
}

impl Mlp {
    /// Layer widths `input -> hidden... -> output`.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers, relu: true }
    }

    pub fn linear(store: &mut ParamStore, rng: &mut Rng, name: &str, input: usize, output: usize) -> Self {
        Self { layers: vec![Dense::new(store, rng, name, input, output)], relu: false }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for layer in &self.layers {
            x = layer.forward(tape, store, x);
            if self.relu {
                x = tape.relu(x);
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Self { config, step: 0, m: store.zeros_like(), v: store.zeros_like() }
    }

    /// One descent step on `store` along `grads`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in store.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
    }
}

/// Rescales `grads` in place so their global norm does not exceed `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::default();
        store.add("x", Tensor::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, AdamConfig { learning_rate: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let g = store.tensors[0].scale(2.0);
            opt.update(&mut store, &[g]);
        }
        assert!(store.tensors[0].norm_sq() < 1e-6);
    }

    #[test]
    fn mlp_shapes_and_relu() {
        let mut store = ParamStore::default();
        let mut rng = stream(1, &[]);
        let mlp = Mlp::new(&mut store, &mut rng, "f", 3, &[5], 4);
        assert_eq!(store.len(), 4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(2, 3, 1.0));
        let y = mlp.forward(&mut tape, &store, x);
        assert_eq!(tape.shape(y), (2, 4));
        assert!(tape.value(y).data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::from_vec(1, 2, vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].norm_sq() - 1.0).abs() < 1e-12);
    }
}
