use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Adam, LearnerError};
use crate::policy::mlp::{Gradients, Mlp};
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 256, epochs: 50, hidden: vec![256, 256] }
    }
}

/// Mean-squared error between the deterministic action `tanh(mean)` and the
/// demonstrated commands, with its gradient. The log-std outputs get no gradient.
pub fn bc_loss_and_grad(actor: &Mlp, obs: &[f32], targets: &[f32], batch: usize) -> (f64, Gradients) {
    let act_dim = actor.output_width() / 2;
    assert_eq!(targets.len(), batch * act_dim, "target shape");
    let cache = actor.forward_batch(obs, batch);
    let out = cache.output();
    let scale = 1.0 / (batch * act_dim) as f64;
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f32; batch * 2 * act_dim];
    for i in 0..batch {
        for j in 0..act_dim {
            let a = libm::tanh(out[i * 2 * act_dim + j] as f64);
            let d = a - targets[i * act_dim + j] as f64;
            loss += d * d;
            grad[i * 2 * act_dim + j] = (2.0 * d * (1.0 - a * a) * scale) as f32;
        }
    }
    let mut grads = Gradients::zeros_like(actor);
    actor.backward_params(&cache, &grad, &mut grads);
    (loss * scale, grads)
}

/// Minibatch behavior cloning on an in-memory demonstration set.
#[derive(Debug, Clone)]
pub struct BcTrainer {
    pub actor: Mlp,
    opt: Adam,
    obs: Vec<f32>,
    targets: Vec<f32>,
    len: usize,
}

impl BcTrainer {
    pub fn new(actor: Mlp, lr: f64) -> Self {
        let opt = Adam::for_mlp(&actor, lr as f32);
        Self { actor, opt, obs: Vec::new(), targets: Vec::new(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.lr = lr as f32;
    }

    pub fn add(&mut self, obs: &[f32], command: &[f32]) -> Result<(), LearnerError> {
        if obs.len() != self.actor.input_width() {
            return Err(LearnerError::ShapeMismatch { expected: self.actor.input_width(), got: obs.len() });
        }
        if command.len() * 2 != self.actor.output_width() {
            return Err(LearnerError::ShapeMismatch { expected: self.actor.output_width() / 2, got: command.len() });
        }
        self.obs.extend_from_slice(obs);
        self.targets.extend(command.iter().map(|c| c.clamp(-1.0, 1.0)));
        self.len += 1;
        Ok(())
    }

    /// Loss over the whole demonstration set.
    pub fn dataset_loss(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        bc_loss_and_grad(&self.actor, &self.obs, &self.targets, self.len).0
    }

    /// One step on the full set.
    pub fn full_batch_step(&mut self) -> Result<f64, LearnerError> {
        let (loss, grads) = bc_loss_and_grad(&self.actor, &self.obs, &self.targets, self.len);
        self.apply(loss, &grads)
    }

    /// One pass over a shuffled copy of the set; returns the mean minibatch loss.
    pub fn epoch(&mut self, batch_size: usize, rng: &mut CounterRng) -> Result<f64, LearnerError> {
        if self.len == 0 {
            return Err(LearnerError::EmptyBuffer);
        }
        let mut order: Vec<usize> = (0..self.len).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let (od, ad) = (self.actor.input_width(), self.actor.output_width() / 2);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size.max(1)) {
            let mut obs = Vec::with_capacity(chunk.len() * od);
            let mut tgt = Vec::with_capacity(chunk.len() * ad);
            for &i in chunk {
                obs.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
                tgt.extend_from_slice(&self.targets[i * ad..(i + 1) * ad]);
            }
            let (loss, grads) = bc_loss_and_grad(&self.actor, &obs, &tgt, chunk.len());
            total += self.apply(loss, &grads)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn apply(&mut self, loss: f64, grads: &Gradients) -> Result<f64, LearnerError> {
        if !loss.is_finite() || !grads.is_finite() {
            return Err(LearnerError::NumericalDivergence { what: "behavior cloning loss", update: self.opt.steps() as u64 });
        }
        self.opt.step_mlp(&mut self.actor, grads);
        Ok(loss)
    }
}
