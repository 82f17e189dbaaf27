//! Off-policy learning: post-hoc rewards, replay, SAC, behavior cloning, and
//! policy publication.

mod adam;
mod bc;
pub mod pointmass;
mod publish;
mod replay;
mod reward;
pub mod sac;

use alloc::string::String;

pub use adam::Adam;
pub use bc::{bc_loss_and_grad, BcConfig, BcTrainer};
pub use publish::{FinetuneRule, Publisher};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use reward::{assign_rewards, RewardConfig, StepType, Trajectory, TrajectoryMeta, TrajectoryStep};
pub use sac::{SacAgent, SacConfig, SacDiagnostics};

use crate::policy::SnapshotError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("malformed episode log: {0}")]
    MalformedLog(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("non-finite {what} at update {update}")]
    NumericalDivergence { what: &'static str, update: u64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("replay spill: {0}")]
    Spill(&'static str),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[cfg(test)]
mod tests;
