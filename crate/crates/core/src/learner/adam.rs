use alloc::vec;
use alloc::vec::Vec;

use crate::policy::mlp::{Gradients, Mlp};

/// Moments of parameters with vanishing gradients decay into subnormals, which
/// are slow on most CPUs.
#[inline]
fn flush(x: f32) -> f32 {
    if x.abs() < f32::MIN_POSITIVE { 0.0 } else { x }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn for_mlp(net: &Mlp, lr: f32) -> Self {
        Self::new(net.param_count(), lr)
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One descent step on `params` given matching `grads`.
    pub fn step<'a, 'b>(&mut self, params: impl Iterator<Item = &'a mut f32>, grads: impl Iterator<Item = &'b f32>) {
        self.t += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.t as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.t as f32);
        let step = self.lr / bc1;
        for (((p, &g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = flush(self.beta1 * *m + (1.0 - self.beta1) * g);
            *v = flush(self.beta2 * *v + (1.0 - self.beta2) * g * g);
            *p -= step * *m / (libm::sqrtf(*v / bc2) + self.eps);
        }
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step(net.params_mut(), grads.iter());
    }
}
