//! The navigation policy: unicycle base controller, residual actor head, and the
//! portable snapshot format.

pub mod actor;
pub mod mlp;
mod snapshot;
mod unicycle;

use alloc::vec::Vec;

pub use actor::Sampling;
pub use mlp::{Activation, Dense, Mlp, MlpError};
pub use snapshot::{
    content_digest, hex32, sha256, ActionSpec, ObsSpec, PolicySnapshot, SnapshotError, POLICY_FORMAT_VERSION,
    POLICY_MAGIC,
};
pub use unicycle::{compose, unicycle_base, ResidualAction, UnicycleCommand};

use crate::rng::CounterRng;
use crate::sim::{Observation, WheelCommand};

/// Builds an actor head for `input` features: hidden layers with `activation`, then a
/// zero-initialized linear layer emitting mean and log-std for two action dims.
///
/// The zero output layer makes the deterministic action exactly zero, so a fresh
/// residual policy behaves as the pure unicycle controller.
pub fn init_actor(input: usize, hidden: &[usize], activation: Activation, rng: &mut CounterRng) -> Mlp {
    let mut widths: Vec<usize> = hidden.to_vec();
    widths.push(2 * ActionSpec::DIM);
    let mut acts: Vec<Activation> = alloc::vec![activation; hidden.len()];
    acts.push(Activation::Linear);
    let mut net = Mlp::new(input, &widths, &acts, rng);
    if let Some(last) = net.layers.last_mut() {
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|w| *w = 0.0);
    }
    net
}

/// One policy decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Raw actor action in `[-1, 1]^2` (the residual, or the wheel command in direct mode).
    pub action: [f64; 2],
    pub log_prob: f32,
    pub command: WheelCommand,
}

/// Samples the actor on a stacked observation.
pub fn sample_action(
    snapshot: &PolicySnapshot,
    obs: &Observation,
    sampling: Sampling<'_>,
) -> Result<(ResidualAction, f32), SnapshotError> {
    let (a, lp) = raw_action(snapshot, &obs.stacked, sampling)?;
    Ok((ResidualAction::new(a[0], a[1]), lp))
}

fn raw_action(snapshot: &PolicySnapshot, stacked: &[f32], sampling: Sampling<'_>) -> Result<([f64; 2], f32), SnapshotError> {
    if stacked.len() != snapshot.obs_spec.input_len() {
        return Err(SnapshotError::SpecMismatch { actor: snapshot.obs_spec.input_len(), spec: stacked.len() });
    }
    let (a, lp) = actor::act(&snapshot.actor, stacked, sampling)?;
    Ok(([a[0] as f64, a[1] as f64], lp))
}

/// Maps a raw actor action to a wheel command given the heading error `alpha`.
pub fn to_command(spec: &ActionSpec, alpha: f64, action: [f64; 2]) -> WheelCommand {
    match *spec {
        ActionSpec::Residual { beta } => compose(unicycle_base(alpha), ResidualAction::new(action[0], action[1]), beta),
        ActionSpec::Direct => WheelCommand::new(action[0], action[1]),
    }
}

/// Full decision: actor sample plus composition with the base controller.
pub fn decide(snapshot: &PolicySnapshot, obs: &Observation, sampling: Sampling<'_>) -> Result<Decision, SnapshotError> {
    let (action, log_prob) = raw_action(snapshot, &obs.stacked, sampling)?;
    let command = to_command(&snapshot.action_spec, obs.alpha() as f64, action);
    Ok(Decision { action, log_prob, command })
}
