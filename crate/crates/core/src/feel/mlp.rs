//! Fully connected network with softmax cross-entropy loss and hand-written
//! backpropagation over a flat parameter vector.
//!
//! Parameter layout, layer by layer: the `out × in` weight matrix
//! (row-major), then the `out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Input width, hidden widths, class count.
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidDimensions(format!(
                "MLP needs at least input and output layers of nonzero width, got {sizes:?}"
            )));
        }
        Ok(Self { sizes, activation })
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.num_params());
        for pair in self.sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            w.extend(std::iter::repeat_n(0.0, fan_out));
        }
        w
    }

    fn check(&self, w: &[f64], data: &Dataset) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                actual: w.len(),
            });
        }
        if data.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input features",
                expected: self.input_dim(),
                actual: data.dim(),
            });
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds raw logits.
    fn forward(&self, w: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (li, pair) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let weights = &w[off..off + n_in * n_out];
            let bias = &w[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = acts.last().expect("non-empty");
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z = bias[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(w, x).pop().expect("non-empty")
    }

    /// Arg-max class; ties go to the smallest class index.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let z = self.logits(w, x);
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        best
    }

    /// Mean cross-entropy over the selected samples.
    pub fn loss(&self, w: &[f64], data: &Dataset, idx: &[usize]) -> Result<f64> {
        self.check(w, data)?;
        let total: f64 = idx
            .iter()
            .map(|&i| {
                let z = self.logits(w, data.features(i));
                log_sum_exp(&z) - z[data.label(i)]
            })
            .sum();
        Ok(total / idx.len().max(1) as f64)
    }

    /// Mean cross-entropy and its gradient over the selected samples.
    pub fn loss_and_grad(&self, w: &[f64], data: &Dataset, idx: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(w, data)?;
        let mut grad = vec![0.0; w.len()];
        let mut total = 0.0;
        let nl = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(nl);
        let mut off = 0;
        for pair in self.sizes.windows(2) {
            offsets.push(off);
            off += pair[0] * pair[1] + pair[1];
        }

        for &i in idx {
            let acts = self.forward(w, data.features(i));
            let logits = &acts[nl];
            let lse = log_sum_exp(logits);
            let label = data.label(i);
            total += lse - logits[label];

            // dL/dz at the output: softmax - onehot.
            let mut delta: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
            delta[label] -= 1.0;

            for layer in (0..nl).rev() {
                let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
                let off = offsets[layer];
                let input = &acts[layer];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let g_row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, &x) in g_row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    grad[off + n_in * n_out + o] += d;
                }
                if layer > 0 {
                    let weights = &w[off..off + n_in * n_out];
                    let mut prev = vec![0.0; n_in];
                    for o in 0..n_out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, &wt) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                            *p += d * wt;
                        }
                    }
                    for (p, &a) in prev.iter_mut().zip(input) {
                        *p *= self.activation.grad_from_output(a);
                    }
                    delta = prev;
                }
            }
        }
        let scale = 1.0 / idx.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((total * scale, grad))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Flat parameters plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub w: Vec<f64>,
    pub arch: Mlp,
}

impl GlobalModel {
    pub fn new(arch: Mlp, w: Vec<f64>) -> Result<Self> {
        if w.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: arch.num_params(),
                actual: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { w, arch })
    }

    pub fn init(arch: Mlp, rng: &mut impl Rng) -> Self {
        let w = arch.init_params(rng);
        Self { w, arch }
    }

    pub fn num_params(&self) -> usize {
        self.w.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feel::data::gaussian_blobs;
    use crate::seed;

    #[test]
    fn param_count() {
        let m = Mlp::new(vec![2, 40, 40, 2], Activation::Tanh).unwrap();
        assert_eq!(m.num_params(), 2 * 40 + 40 + 40 * 40 + 40 + 40 * 2 + 2);
        assert!(Mlp::new(vec![3], Activation::Relu).is_err());
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = Mlp::new(vec![3, 4, 5], Activation::Relu).unwrap();
        let w = vec![0.0; m.num_params()];
        assert_eq!(m.predict(&w, &[1.0, -2.0, 0.5]), 0);
    }

    #[test]
    fn one_layer_gradient_closed_form() {
        // Softmax regression: dL/dW = (p - y) x^T, dL/db = p - y.
        let data = gaussian_blobs(4, 3, 2, 2.0, 0.5, 7).unwrap();
        let m = Mlp::new(vec![2, 3], Activation::Relu).unwrap();
        let w = m.init_params(&mut seed::rng(3));
        let idx: Vec<usize> = (0..data.len()).collect();
        let (_, g) = m.loss_and_grad(&w, &data, &idx).unwrap();
        let mut want = vec![0.0; w.len()];
        for &i in &idx {
            let x = data.features(i);
            let z: Vec<f64> = (0..3)
                .map(|o| w[6 + o] + w[o * 2] * x[0] + w[o * 2 + 1] * x[1])
                .collect();
            let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let s: f64 = e.iter().sum();
            for o in 0..3 {
                let d = e[o] / s - if data.label(i) == o { 1.0 } else { 0.0 };
                want[o * 2] += d * x[0];
                want[o * 2 + 1] += d * x[1];
                want[6 + o] += d;
            }
        }
        for (a, b) in g.iter().zip(&want) {
            assert!((a - b / idx.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_checks() {
        let data = gaussian_blobs(2, 2, 3, 1.0, 0.1, 0).unwrap();
        let m = Mlp::new(vec![2, 2], Activation::Tanh).unwrap();
        let w = vec![0.0; m.num_params()];
        assert!(m.loss(&w, &data, &[0]).is_err());
        assert!(GlobalModel::new(m, vec![0.0; 3]).is_err());
    }
}
