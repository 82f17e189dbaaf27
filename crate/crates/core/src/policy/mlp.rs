//! Dense feed-forward networks with batched forward and backward passes.
//!
//! Weights are row-major `(out, in)`; batches are row-major `(batch, width)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanhf(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self { input, output, activation, weights: vec![0.0; input * output], bias: vec![0.0; output] }
    }

    /// Uniform fan-in initialization in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut CounterRng) -> Self {
        let bound = 1.0 / libm::sqrt(input.max(1) as f64);
        let mut layer = Self::zeros(input, output, activation);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.uniform(-bound, bound) as f32;
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlpError {
    #[error("input width {got} does not match network input {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("layer {layer} is inconsistent with its neighbours")]
    InconsistentLayers { layer: usize },
    #[error("non-finite weight in layer {layer}")]
    NonFinite { layer: usize },
}

/// Feed-forward network description and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer outputs kept from a batched forward pass; `activations[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub batch: usize,
    pub activations: Vec<Vec<f32>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f32] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f32> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn scale(&mut self, s: f32) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= s);
        }
    }
}

impl Mlp {
    /// Builds a network from `input` through `widths`, one activation per layer.
    pub fn new(input: usize, widths: &[usize], activations: &[Activation], rng: &mut CounterRng) -> Self {
        assert_eq!(widths.len(), activations.len());
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for (&w, &a) in widths.iter().zip(activations) {
            layers.push(Dense::init(prev, w, a, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.input * l.output || l.bias.len() != l.output || l.output == 0 {
                return Err(MlpError::InconsistentLayers { layer: i });
            }
            if i > 0 && self.layers[i - 1].output != l.input {
                return Err(MlpError::InconsistentLayers { layer: i });
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|w| w.is_finite()) {
                return Err(MlpError::NonFinite { layer: i });
            }
        }
        if self.layers.is_empty() {
            return Err(MlpError::InconsistentLayers { layer: 0 });
        }
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = &f32> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Single-sample forward pass with shape checking.
    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, MlpError> {
        if input.len() != self.input_width() {
            return Err(MlpError::ShapeMismatch { expected: self.input_width(), got: input.len() });
        }
        Ok(self.forward_batch(input, 1).activations.pop().unwrap_or_default())
    }

    /// Batched forward pass; panics if `input.len() != batch * input_width`.
    pub fn forward_batch(&self, input: &[f32], batch: usize) -> ForwardCache {
        assert_eq!(input.len(), batch * self.input_width(), "batch input shape");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().expect("input present");
            let mut y = vec![0.0f32; batch * layer.output];
            for row in y.chunks_exact_mut(layer.output) {
                row.copy_from_slice(&layer.bias);
            }
            // y += x (B x I) * W^T (I x O)
            gemm(batch, layer.input, layer.output, x, (layer.input, 1), &layer.weights, (1, layer.input), &mut y, 1.0);
            if layer.activation != Activation::Linear {
                y.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            activations.push(y);
        }
        ForwardCache { batch, activations }
    }

    /// Backpropagates `grad_output` (dLoss/dOutput, `batch x out`) through a cached pass,
    /// accumulating parameter gradients into `grads` and returning dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f32], grads: &mut Gradients) -> Vec<f32> {
        self.backprop(cache, grad_output, Some(grads), Some(0))
    }

    /// Like [`Mlp::backward`] without the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, grad_output: &[f32], grads: &mut Gradients) {
        self.backprop(cache, grad_output, Some(grads), None);
    }

    /// dLoss/dInput restricted to input columns `from..`, as `batch x (in - from)`;
    /// parameter gradients are not formed.
    pub fn input_grad(&self, cache: &ForwardCache, grad_output: &[f32], from: usize) -> Vec<f32> {
        self.backprop(cache, grad_output, None, Some(from))
    }

    fn backprop(&self, cache: &ForwardCache, grad_output: &[f32], mut grads: Option<&mut Gradients>, input_from: Option<usize>) -> Vec<f32> {
        let batch = cache.batch;
        assert_eq!(grad_output.len(), batch * self.output_width(), "grad shape");
        let mut delta = grad_output.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let y = &cache.activations[li + 1];
            if layer.activation != Activation::Linear {
                for (d, &yv) in delta.iter_mut().zip(y) {
                    *d *= layer.activation.derivative_from_output(yv);
                }
            }
            if let Some(grads) = grads.as_deref_mut() {
                let x = &cache.activations[li];
                let (gw, gb) = &mut grads.layers[li];
                // dW (O x I) += delta^T (O x B) * x (B x I)
                gemm(layer.output, batch, layer.input, &delta, (1, layer.output), x, (layer.input, 1), gw, 1.0);
                for row in delta.chunks_exact(layer.output) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            let from = if li == 0 {
                match input_from {
                    Some(f) => f.min(layer.input),
                    None => return Vec::new(),
                }
            } else {
                0
            };
            // dX (B x I') = delta (B x O) * W[:, from..] (O x I')
            let cols = layer.input - from;
            let mut dx = vec![0.0f32; batch * cols];
            if cols > 0 {
                gemm(batch, layer.output, cols, &delta, (layer.output, 1), &layer.weights[from..], (layer.input, 1), &mut dx, 0.0);
            }
            delta = dx;
        }
        delta
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn polyak_update(&mut self, source: &Mlp, tau: f32) {
        for (t, s) in self.params_mut().zip(source.params()) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    /// Euclidean distance between the parameter vectors of two same-shaped networks.
    pub fn param_distance(&self, other: &Mlp) -> f64 {
        let sq: f64 = self.params().zip(other.params()).map(|(a, b)| ((a - b) as f64) * ((a - b) as f64)).sum();
        libm::sqrt(sq)
    }
}

/// `c = beta * c + a * b` for row-major-strided `a` (`m x k`), `b` (`k x n`), dense `c` (`m x n`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_strides: (usize, usize), b: &[f32], b_strides: (usize, usize), c: &mut [f32], beta: f32) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * a_strides.0 + k.saturating_sub(1) * a_strides.1 + usize::from(k > 0));
    assert!(b.len() >= k.saturating_sub(1) * b_strides.0 + (n - 1) * b_strides.1 + usize::from(k > 0));
    assert_eq!(c.len(), m * n);
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above bound every index touched by the kernel.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward triple-loop forward pass in f64.
    fn reference_forward(net: &Mlp, input: &[f32]) -> Vec<f64> {
        let mut x: Vec<f64> = input.iter().map(|v| *v as f64).collect();
        for l in &net.layers {
            let mut y = Vec::with_capacity(l.output);
            for o in 0..l.output {
                let mut acc = l.bias[o] as f64;
                for i in 0..l.input {
                    acc += l.weights[o * l.input + i] as f64 * x[i];
                }
                y.push(match l.activation {
                    Activation::Relu => acc.max(0.0),
                    Activation::Tanh => libm::tanh(acc),
                    Activation::Linear => acc,
                });
            }
            x = y;
        }
        x
    }

    #[test]
    fn identity_linear_layer() {
        let mut l = Dense::zeros(3, 3, Activation::Linear);
        for i in 0..3 {
            l.weights[i * 3 + i] = 1.0;
        }
        let net = Mlp { layers: vec![l] };
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_weights_output_activation_of_bias() {
        let mut l = Dense::zeros(4, 2, Activation::Tanh);
        l.bias = vec![0.5, -1.0];
        let net = Mlp { layers: vec![l] };
        let out = net.forward(&[3.0, 1.0, -2.0, 7.0]).unwrap();
        assert_eq!(out, vec![libm::tanhf(0.5), libm::tanhf(-1.0)]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = Mlp::new(3, &[4, 2], &[Activation::Relu, Activation::Linear], &mut CounterRng::new(0));
        assert_eq!(net.forward(&[1.0]), Err(MlpError::ShapeMismatch { expected: 3, got: 1 }));
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = CounterRng::new(11);
        let net = Mlp::new(7, &[16, 3], &[Activation::Tanh, Activation::Linear], &mut rng);
        for _ in 0..100 {
            let x: Vec<f32> = (0..7).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
            let got = net.forward(&x).unwrap();
            let want = reference_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!(((*g as f64) - w).abs() <= 1e-6 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn batched_equals_single() {
        let mut rng = CounterRng::new(5);
        let net = Mlp::new(5, &[8, 8, 2], &[Activation::Relu, Activation::Relu, Activation::Linear], &mut rng);
        let xs: Vec<f32> = (0..5 * 6).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let batch = net.forward_batch(&xs, 6);
        for b in 0..6 {
            let single = net.forward(&xs[b * 5..(b + 1) * 5]).unwrap();
            assert_eq!(&batch.output()[b * 2..(b + 1) * 2], single.as_slice());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = CounterRng::new(21);
        let net = Mlp::new(3, &[5, 2], &[Activation::Tanh, Activation::Linear], &mut rng);
        let x: Vec<f32> = vec![0.3, -0.7, 1.1, -0.2, 0.5, 0.9];
        // loss = sum(output * w)
        let w = [0.7f32, -1.3, 0.4, 2.0];
        let cache = net.forward_batch(&x, 2);
        let mut grads = Gradients::zeros_like(&net);
        let dx = net.backward(&cache, &w, &mut grads);
        let loss = |n: &Mlp, x: &[f32]| -> f64 {
            let out: Vec<f64> = (0..2).flat_map(|b| reference_forward(n, &x[b * 3..b * 3 + 3])).collect();
            out.iter().zip(w.iter()).map(|(o, w)| o * *w as f64).sum()
        };
        let h = 1e-3f32;
        for li in 0..net.layers.len() {
            for k in 0..net.layers[li].weights.len() {
                let mut p = net.clone();
                p.layers[li].weights[k] += h;
                let mut m = net.clone();
                m.layers[li].weights[k] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h as f64);
                assert!((grads.layers[li].0[k] as f64 - fd).abs() < 2e-3, "layer {li} w{k}");
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h as f64);
            assert!((dx[k] as f64 - fd).abs() < 2e-3);
        }
    }

    #[test]
    fn polyak_tau_one_copies() {
        let mut rng = CounterRng::new(1);
        let a = Mlp::new(3, &[4, 1], &[Activation::Relu, Activation::Linear], &mut rng);
        let mut b = Mlp::new(3, &[4, 1], &[Activation::Relu, Activation::Linear], &mut rng);
        b.polyak_update(&a, 1.0);
        assert_eq!(a, b);
    }
}
