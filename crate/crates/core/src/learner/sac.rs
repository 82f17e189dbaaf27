//! Soft actor-critic with twin critics, Polyak-averaged targets, and automatic
//! temperature tuning.
//!
//! The actor is an [`Mlp`] head emitting `[mean, log_std]` per action dimension;
//! actions are `tanh(mean + std * eps)`. Critics take `[obs, action]` and emit one
//! value. The loss and gradient functions are pure and take their noise explicitly.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Adam, Batch, LearnerError};
use crate::policy::actor::{LOG_STD_MAX, LOG_STD_MIN};
use crate::policy::mlp::{Activation, ForwardCache, Gradients, Mlp};
use crate::rng::CounterRng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    /// Environment steps collected with random actions before updates start.
    pub warmup_steps: usize,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    /// Gradient steps per ingested environment step.
    pub grad_steps_per_env_step: f64,
    pub initial_alpha: f64,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            batch_size: 256,
            warmup_steps: 1000,
            target_entropy: None,
            grad_steps_per_env_step: 1.0,
            initial_alpha: 1.0,
            hidden: vec![256, 256],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(LearnerError::InvalidConfig("gamma must lie in [0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LearnerError::InvalidConfig("tau must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(LearnerError::InvalidConfig("batch size and hidden widths must be positive"));
        }
        if !(self.initial_alpha > 0.0) || !(self.grad_steps_per_env_step >= 0.0) {
            return Err(LearnerError::InvalidConfig("initial alpha must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SacDiagnostics {
    pub update: u64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub q1_mean: f64,
    pub q2_mean: f64,
    /// `-mean log pi` of the reparameterized batch actions.
    pub entropy: f64,
    pub alpha: f64,
}

/// Hidden layers with `activation`, then a linear output of `outputs` units.
pub fn build_mlp(input: usize, hidden: &[usize], outputs: usize, activation: Activation, rng: &mut CounterRng) -> Mlp {
    let mut widths = hidden.to_vec();
    widths.push(outputs);
    let mut acts = vec![activation; hidden.len()];
    acts.push(Activation::Linear);
    Mlp::new(input, &widths, &acts, rng)
}

/// Actor head with a zero output layer: zero mean and unit std everywhere.
pub fn build_actor(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut CounterRng) -> Mlp {
    let mut net = build_mlp(obs_dim, hidden, 2 * act_dim, Activation::Relu, rng);
    if let Some(last) = net.layers.last_mut() {
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|w| *w = 0.0);
    }
    net
}

fn concat_rows(a: &[f32], a_w: usize, b: &[f32], b_w: usize, rows: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * (a_w + b_w));
    for r in 0..rows {
        out.extend_from_slice(&a[r * a_w..(r + 1) * a_w]);
        out.extend_from_slice(&b[r * b_w..(r + 1) * b_w]);
    }
    out
}

/// Reparameterized actor outputs for a batch.
struct PolicyBatch {
    cache: ForwardCache,
    /// `batch x act_dim`
    action: Vec<f32>,
    /// Per-sample log density, computed in f64.
    log_prob: Vec<f64>,
}

fn policy_batch(actor: &Mlp, obs: &[f32], eps: &[f32], batch: usize) -> PolicyBatch {
    let act_dim = actor.output_width() / 2;
    assert_eq!(eps.len(), batch * act_dim, "noise shape");
    let cache = actor.forward_batch(obs, batch);
    let out = cache.output();
    let mut action = Vec::with_capacity(batch * act_dim);
    let mut log_prob = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &out[b * 2 * act_dim..(b + 1) * 2 * act_dim];
        let mut lp = 0.0f64;
        for j in 0..act_dim {
            let ls = row[act_dim + j].clamp(LOG_STD_MIN, LOG_STD_MAX) as f64;
            let e = eps[b * act_dim + j] as f64;
            let u = row[j] as f64 + libm::exp(ls) * e;
            let a = libm::tanh(u);
            lp += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq_f64(u);
            action.push(a as f32);
        }
        log_prob.push(lp);
    }
    PolicyBatch { cache, action, log_prob }
}

#[inline]
fn log_one_minus_tanh_sq_f64(u: f64) -> f64 {
    let x = -2.0 * u;
    let sp = if x > 30.0 { x } else { libm::log1p(libm::exp(x)) };
    2.0 * (core::f64::consts::LN_2 - u - sp)
}

/// `y = r + gamma * (1 - done) * (min(Q1', Q2')(s', a') - alpha * log pi(a'|s'))` with
/// `a' = tanh(mean + std * eps_next)` from the current actor.
#[allow(clippy::too_many_arguments)]
pub fn td_targets(
    gamma: f64,
    alpha: f64,
    actor: &Mlp,
    target1: &Mlp,
    target2: &Mlp,
    batch: &Batch,
    eps_next: &[f32],
) -> Vec<f32> {
    let n = batch.len;
    let act_dim = actor.output_width() / 2;
    let obs_dim = actor.input_width();
    let pb = policy_batch(actor, &batch.next_obs, eps_next, n);
    let input = concat_rows(&batch.next_obs, obs_dim, &pb.action, act_dim, n);
    let q1 = target1.forward_batch(&input, n).activations.pop().unwrap_or_default();
    let q2 = target2.forward_batch(&input, n).activations.pop().unwrap_or_default();
    (0..n)
        .map(|i| {
            let soft = (q1[i].min(q2[i]) as f64) - alpha * pb.log_prob[i];
            (batch.reward[i] as f64 + gamma * (1.0 - batch.done[i] as f64) * soft) as f32
        })
        .collect()
}

/// Mean-squared critic loss against fixed targets, its parameter gradient, and the
/// mean predicted value.
pub fn critic_loss_and_grad(critic: &Mlp, obs: &[f32], action: &[f32], targets: &[f32], batch: usize) -> (f64, Gradients, f64) {
    let obs_dim = obs.len() / batch.max(1);
    let act_dim = action.len() / batch.max(1);
    assert_eq!(obs_dim + act_dim, critic.input_width(), "critic input width");
    let input = concat_rows(obs, obs_dim, action, act_dim, batch);
    let cache = critic.forward_batch(&input, batch);
    let q = cache.output();
    let mut loss = 0.0f64;
    let mut q_sum = 0.0f64;
    let mut grad_out = Vec::with_capacity(batch);
    for i in 0..batch {
        let d = q[i] as f64 - targets[i] as f64;
        loss += d * d;
        q_sum += q[i] as f64;
        grad_out.push((2.0 * d / batch as f64) as f32);
    }
    let mut grads = Gradients::zeros_like(critic);
    critic.backward_params(&cache, &grad_out, &mut grads);
    (loss / batch as f64, grads, q_sum / batch as f64)
}

/// Outputs of [`actor_loss_and_grad`].
#[derive(Debug, Clone)]
pub struct ActorStep {
    pub loss: f64,
    pub grads: Gradients,
    pub mean_log_prob: f64,
}

/// `L = mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))` with `a` reparameterized by
/// `eps`; gradient with respect to the actor parameters only.
pub fn actor_loss_and_grad(actor: &Mlp, critic1: &Mlp, critic2: &Mlp, obs: &[f32], eps: &[f32], alpha: f64, batch: usize) -> ActorStep {
    let act_dim = actor.output_width() / 2;
    let obs_dim = actor.input_width();
    let pb = policy_batch(actor, obs, eps, batch);
    let input = concat_rows(obs, obs_dim, &pb.action, act_dim, batch);
    let c1 = critic1.forward_batch(&input, batch);
    let c2 = critic2.forward_batch(&input, batch);
    let (q1, q2) = (c1.output(), c2.output());
    let mut sel1 = vec![0.0f32; batch];
    let mut sel2 = vec![0.0f32; batch];
    let mut loss = 0.0f64;
    for i in 0..batch {
        let q = if q1[i] <= q2[i] {
            sel1[i] = 1.0;
            q1[i]
        } else {
            sel2[i] = 1.0;
            q2[i]
        };
        loss += alpha * pb.log_prob[i] - q as f64;
    }
    // dQmin/da per sample, from whichever critic is active
    let d1 = critic1.input_grad(&c1, &sel1, obs_dim);
    let d2 = critic2.input_grad(&c2, &sel2, obs_dim);
    let out = pb.cache.output();
    let mut grad_head = vec![0.0f32; batch * 2 * act_dim];
    let inv_b = 1.0 / batch as f64;
    for i in 0..batch {
        for j in 0..act_dim {
            let g = (d1[i * act_dim + j] + d2[i * act_dim + j]) as f64;
            let raw_ls = out[i * 2 * act_dim + act_dim + j];
            let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX) as f64;
            let a = pb.action[i * act_dim + j] as f64;
            let se = libm::exp(ls) * eps[i * act_dim + j] as f64;
            let one_minus = 1.0 - a * a;
            grad_head[i * 2 * act_dim + j] = ((alpha * 2.0 * a - g * one_minus) * inv_b) as f32;
            let g_ls = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls) {
                alpha * (-1.0 + 2.0 * a * se) - g * one_minus * se
            } else {
                0.0
            };
            grad_head[i * 2 * act_dim + act_dim + j] = (g_ls * inv_b) as f32;
        }
    }
    let mut grads = Gradients::zeros_like(actor);
    actor.backward_params(&pb.cache, &grad_head, &mut grads);
    let mean_log_prob = pb.log_prob.iter().sum::<f64>() * inv_b;
    ActorStep { loss: loss * inv_b, grads, mean_log_prob }
}

/// Learner state for one SAC run.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha: f64,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    alpha_opt: Adam,
    rng: CounterRng,
    updates: u64,
}

impl SacAgent {
    pub fn new(config: SacConfig, obs_dim: usize, act_dim: usize, seed: u64) -> Result<Self, LearnerError> {
        config.validate()?;
        let root = CounterRng::new(seed);
        let actor = build_actor(obs_dim, act_dim, &config.hidden, &mut root.split(1));
        Self::with_actor(config, actor, act_dim, seed)
    }

    /// Starts from an existing actor head (e.g. a published snapshot).
    pub fn with_actor(config: SacConfig, actor: Mlp, act_dim: usize, seed: u64) -> Result<Self, LearnerError> {
        config.validate()?;
        if actor.output_width() != 2 * act_dim {
            return Err(LearnerError::ShapeMismatch { expected: 2 * act_dim, got: actor.output_width() });
        }
        let obs_dim = actor.input_width();
        let root = CounterRng::new(seed);
        let critic1 = build_mlp(obs_dim + act_dim, &config.hidden, 1, Activation::Relu, &mut root.split(2));
        let critic2 = build_mlp(obs_dim + act_dim, &config.hidden, 1, Activation::Relu, &mut root.split(3));
        Ok(Self {
            actor_opt: Adam::for_mlp(&actor, config.actor_lr as f32),
            critic1_opt: Adam::for_mlp(&critic1, config.critic_lr as f32),
            critic2_opt: Adam::for_mlp(&critic2, config.critic_lr as f32),
            alpha_opt: Adam::new(1, config.alpha_lr as f32),
            log_alpha: libm::log(config.initial_alpha),
            target1: critic1.clone(),
            target2: critic2.clone(),
            critic1,
            critic2,
            actor,
            obs_dim,
            act_dim,
            rng: root.split(4),
            updates: 0,
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        libm::exp(self.log_alpha)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Restores the update counter of a checkpointed agent.
    pub fn set_updates(&mut self, updates: u64) {
        self.updates = updates;
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    fn noise(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.rng.normal() as f32).collect()
    }

    /// One gradient step on critics, actor, and temperature, then a Polyak step.
    pub fn update(&mut self, batch: &Batch) -> Result<SacDiagnostics, LearnerError> {
        let n = batch.len;
        if batch.obs.len() != n * self.obs_dim || batch.action.len() != n * self.act_dim {
            return Err(LearnerError::ShapeMismatch { expected: n * self.obs_dim, got: batch.obs.len() });
        }
        let update = self.updates + 1;
        let alpha = self.alpha();
        let eps_next = self.noise(n * self.act_dim);
        let y = td_targets(self.config.gamma, alpha, &self.actor, &self.target1, &self.target2, batch, &eps_next);
        let (l1, g1, q1) = critic_loss_and_grad(&self.critic1, &batch.obs, &batch.action, &y, n);
        let (l2, g2, q2) = critic_loss_and_grad(&self.critic2, &batch.obs, &batch.action, &y, n);
        if !l1.is_finite() || !l2.is_finite() || !g1.is_finite() || !g2.is_finite() {
            return Err(LearnerError::NumericalDivergence { what: "critic loss", update });
        }
        self.critic1_opt.step_mlp(&mut self.critic1, &g1);
        self.critic2_opt.step_mlp(&mut self.critic2, &g2);

        let eps = self.noise(n * self.act_dim);
        let step = actor_loss_and_grad(&self.actor, &self.critic1, &self.critic2, &batch.obs, &eps, alpha, n);
        if !step.loss.is_finite() || !step.grads.is_finite() {
            return Err(LearnerError::NumericalDivergence { what: "actor loss", update });
        }
        self.actor_opt.step_mlp(&mut self.actor, &step.grads);

        let h = self.target_entropy();
        let alpha_grad = -(step.mean_log_prob + h);
        let alpha_loss = -self.log_alpha * (step.mean_log_prob + h);
        if !alpha_loss.is_finite() {
            return Err(LearnerError::NumericalDivergence { what: "temperature loss", update });
        }
        let mut la = [self.log_alpha as f32];
        self.alpha_opt.step(la.iter_mut(), [alpha_grad as f32].iter());
        self.log_alpha = la[0] as f64;

        let tau = self.config.tau as f32;
        self.target1.polyak_update(&self.critic1, tau);
        self.target2.polyak_update(&self.critic2, tau);
        self.updates = update;
        Ok(SacDiagnostics {
            update,
            critic1_loss: l1,
            critic2_loss: l2,
            actor_loss: step.loss,
            alpha_loss,
            q1_mean: q1,
            q2_mean: q2,
            entropy: -step.mean_log_prob,
            alpha: self.alpha(),
        })
    }
}
