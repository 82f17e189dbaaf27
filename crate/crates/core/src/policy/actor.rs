//! Squashed-Gaussian action distribution on top of an [`Mlp`] head that emits
//! `[mean..., log_std...]`.

use alloc::vec::Vec;

use super::mlp::Mlp;
use crate::rng::CounterRng;

pub const LOG_STD_MIN: f32 = -20.0;
pub const LOG_STD_MAX: f32 = 2.0;
const HALF_LN_2PI: f32 = 0.918_938_5;

/// `ln(1 - tanh(u)^2)` evaluated without cancellation.
#[inline]
pub fn log_one_minus_tanh_sq(u: f32) -> f32 {
    2.0 * (core::f32::consts::LN_2 - u - softplus(-2.0 * u))
}

#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        libm::log1pf(libm::expf(x))
    }
}

/// Splits a head output row into `(mean, log_std)` with log-std clamped.
pub fn split_head(row: &[f32]) -> (&[f32], impl Iterator<Item = f32> + '_) {
    let a = row.len() / 2;
    (&row[..a], row[a..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)))
}

/// One reparameterized draw per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub pre_tanh: Vec<f32>,
    pub action: Vec<f32>,
    pub log_prob: f32,
}

/// Draws `tanh(mean + std * eps)` and its log density (with the tanh correction)
/// for the given standard-normal noise `eps`.
pub fn squashed_sample(mean: &[f32], log_std: &[f32], eps: &[f32]) -> SquashedSample {
    let mut pre = Vec::with_capacity(mean.len());
    let mut act = Vec::with_capacity(mean.len());
    let mut log_prob = 0.0;
    for ((&m, &ls), &e) in mean.iter().zip(log_std).zip(eps) {
        let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let u = m + libm::expf(ls) * e;
        log_prob += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        pre.push(u);
        act.push(libm::tanhf(u));
    }
    SquashedSample { pre_tanh: pre, action: act, log_prob }
}

/// Log density of squashed action `a` (each component in `(-1, 1)`).
pub fn squashed_log_prob(mean: &[f32], log_std: &[f32], action: &[f32]) -> f64 {
    let mut lp = 0.0f64;
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX) as f64;
        let a = (a as f64).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let u = libm::atanh(a);
        let z = (u - m as f64) / libm::exp(ls);
        lp += -0.5 * z * z - ls - HALF_LN_2PI as f64 - libm::log(1.0 - a * a);
    }
    lp
}

/// Action selection mode.
#[derive(Debug)]
pub enum Sampling<'a> {
    Deterministic,
    Stochastic(&'a mut CounterRng),
}

/// Evaluates the head on one input and returns `(action, log_prob)`.
pub fn act(head: &Mlp, input: &[f32], sampling: Sampling<'_>) -> Result<(Vec<f32>, f32), super::mlp::MlpError> {
    let out = head.forward(input)?;
    let a = out.len() / 2;
    let mean = &out[..a];
    let log_std: Vec<f32> = out[a..].to_vec();
    let eps: Vec<f32> = match sampling {
        Sampling::Deterministic => alloc::vec![0.0; a],
        Sampling::Stochastic(rng) => (0..a).map(|_| rng.normal() as f32).collect(),
    };
    let s = squashed_sample(mean, &log_std, &eps);
    Ok((s.action, s.log_prob))
}
