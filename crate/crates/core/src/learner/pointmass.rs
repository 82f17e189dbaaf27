//! Deterministic 1-D point mass used to sanity-check SAC end to end.
//!
//! State is the signed distance to the origin, the action a velocity in `[-1, 1]`
//! scaled by [`MAX_SPEED`], and the reward `-|x|` after each move.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{LearnerError, ReplayBuffer, SacAgent, SacConfig};
use crate::policy::actor::{act, Sampling};
use crate::rng::CounterRng;

pub const HORIZON: u32 = 50;
pub const MAX_SPEED: f64 = 0.1;
pub const BOUND: f64 = 2.0;

/// Evaluation start states.
pub const EVAL_STARTS: [f64; 8] = [-1.0, -0.75, -0.5, -0.25, 0.25, 0.5, 0.75, 1.0];

pub fn step(x: f64, action: f64) -> (f64, f64) {
    let next = (x + MAX_SPEED * action.clamp(-1.0, 1.0)).clamp(-BOUND, BOUND);
    (next, -next.abs())
}

/// Undiscounted return of one episode from `x0`.
pub fn episode_return(x0: f64, mut policy: impl FnMut(f64) -> f64) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for _ in 0..HORIZON {
        let (n, r) = step(x, policy(x));
        total += r;
        x = n;
    }
    total
}

/// Mean return over [`EVAL_STARTS`].
pub fn mean_return(mut policy: impl FnMut(f64) -> f64) -> f64 {
    EVAL_STARTS.iter().map(|&x0| episode_return(x0, &mut policy)).sum::<f64>() / EVAL_STARTS.len() as f64
}

/// Mean return of uniform random actions, averaged over `repeats` passes.
pub fn random_return(repeats: usize, seed: u64) -> f64 {
    let mut rng = CounterRng::new(seed);
    (0..repeats).map(|_| mean_return(|_| rng.uniform(-1.0, 1.0))).sum::<f64>() / repeats as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassRun {
    pub seed: u64,
    pub env_steps: u64,
    pub random_return: f64,
    /// `(env steps, deterministic mean return)` after each evaluation.
    pub curve: Vec<(u64, f64)>,
}

impl PointMassRun {
    pub fn final_return(&self) -> f64 {
        self.curve.last().map_or(f64::NEG_INFINITY, |c| c.1)
    }

    /// `random_return / final_return`; both are negative, so larger is better.
    pub fn improvement(&self) -> f64 {
        self.random_return / self.final_return()
    }
}

fn greedy(agent: &SacAgent, x: f64) -> f64 {
    act(&agent.actor, &[x as f32], Sampling::Deterministic).map_or(0.0, |(a, _)| a[0] as f64)
}

/// Trains SAC for `total_steps` environment steps with an evaluation every `eval_every`.
pub fn train(config: SacConfig, total_steps: u64, eval_every: u64, seed: u64) -> Result<PointMassRun, LearnerError> {
    let mut agent = SacAgent::new(config, 1, 1, seed)?;
    let mut buffer = ReplayBuffer::new(1, 1, total_steps as usize);
    let mut rng = CounterRng::new(seed).split(7);
    let mut curve = Vec::new();
    let mut x = rng.uniform(-1.0, 1.0);
    let mut t = 0;
    for s in 1..=total_steps {
        let a = if (s as usize) <= agent.config.warmup_steps {
            rng.uniform(-1.0, 1.0)
        } else {
            let (a, _) = act(&agent.actor, &[x as f32], Sampling::Stochastic(&mut rng)).map_err(crate::policy::SnapshotError::from)?;
            a[0] as f64
        };
        let (next, r) = step(x, a);
        t += 1;
        // episodes end on the time limit only, so no terminal masking
        buffer.push_transition(&[x as f32], &[a as f32], r as f32, &[next as f32], false);
        x = next;
        if t == HORIZON {
            x = rng.uniform(-1.0, 1.0);
            t = 0;
        }
        if (s as usize) > agent.config.warmup_steps {
            let batch = buffer.sample(agent.config.batch_size, &mut rng)?;
            agent.update(&batch)?;
        }
        if s % eval_every == 0 || s == total_steps {
            curve.push((s, mean_return(|x| greedy(&agent, x))));
        }
    }
    Ok(PointMassRun { seed, env_steps: total_steps, random_return: random_return(20, seed ^ 0x5eed), curve })
}
