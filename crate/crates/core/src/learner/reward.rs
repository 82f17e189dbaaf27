use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::episode::{Controller, EpisodeLog};
use crate::sim::{FrameHistory, StopReason};

/// Post-hoc reward assignment; terminal constants default to goal +5, collision -1,
/// tracking loss -0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub goal: f64,
    pub collision: f64,
    pub tracking_lost: f64,
    /// Weight on per-step progress `d_{t-1} - d_t`.
    pub progress_weight: f64,
    pub time_penalty: f64,
    /// Terminal rewards only.
    pub sparse_mode: bool,
    /// Discount recorded on first and mid steps.
    pub discount: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            goal: 5.0,
            collision: -1.0,
            tracking_lost: -0.5,
            progress_weight: 1.0,
            time_penalty: -0.01,
            sparse_mode: false,
            discount: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn sparse() -> Self {
        Self { sparse_mode: true, ..Self::default() }
    }

    pub fn terminal(&self, reason: StopReason) -> f64 {
        match reason {
            StopReason::GoalReached => self.goal,
            StopReason::Collision => self.collision,
            StopReason::TrackingLost => self.tracking_lost,
            StopReason::Timeout | StopReason::UserStop | StopReason::UserCancel => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepType {
    First,
    Mid,
    Last,
}

/// One trajectory element. `reward` is received on arriving at this step; `action`
/// is the one applied from it (zero on the last step).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub obs: Vec<f32>,
    pub action: [f32; 2],
    pub command: [f32; 2],
    pub reward: f32,
    pub discount: f32,
    pub step_type: StepType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub stop_reason: StopReason,
    pub layout_seed: u64,
    pub worker_id: String,
    pub policy_id: Option<u64>,
    pub controller: Controller,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward as f64).sum()
    }
}

/// Turns an uploaded log into a rewarded trajectory with stacked observations.
pub fn assign_rewards(log: &EpisodeLog, cfg: &RewardConfig) -> Result<Trajectory, LearnerError> {
    if log.steps.is_empty() {
        return Err(LearnerError::MalformedLog(String::from("no step records")));
    }
    let spec = log.header.obs_spec;
    let frame_len = spec.frame_len();
    let n = log.steps.len();
    let mut history = FrameHistory::new(spec.history, frame_len);
    let mut steps = Vec::with_capacity(n);
    for (i, rec) in log.steps.iter().enumerate() {
        if rec.obs.len() != frame_len {
            return Err(LearnerError::MalformedLog(alloc::format!("record {i}: observation width")));
        }
        if !rec.goal_distance.is_finite() {
            return Err(LearnerError::MalformedLog(alloc::format!("record {i}: missing goal distance")));
        }
        history.push(rec.obs.clone());
        let last = i + 1 == n;
        let mut reward = 0.0;
        if i > 0 && !cfg.sparse_mode {
            reward += cfg.progress_weight * (log.steps[i - 1].goal_distance - rec.goal_distance) + cfg.time_penalty;
        }
        if last {
            reward += cfg.terminal(log.footer.stop_reason);
        }
        let to32 = |a: Option<[f64; 2]>| a.map_or([0.0; 2], |v| [v[0] as f32, v[1] as f32]);
        let action = match log.header.controller {
            Controller::Policy => to32(rec.action),
            // demonstrations act directly in wheel space
            Controller::Teleop | Controller::Expert => to32(rec.action.or(rec.command)),
        };
        steps.push(TrajectoryStep {
            obs: history.stacked(),
            action: if last { [0.0; 2] } else { action },
            command: if last { [0.0; 2] } else { to32(rec.command) },
            reward: reward as f32,
            discount: if last { 0.0 } else { cfg.discount as f32 },
            step_type: if i == 0 && !last {
                StepType::First
            } else if last {
                StepType::Last
            } else {
                StepType::Mid
            },
        });
    }
    Ok(Trajectory {
        steps,
        meta: TrajectoryMeta {
            stop_reason: log.footer.stop_reason,
            layout_seed: log.header.layout_seed,
            worker_id: log.header.worker_id.clone(),
            policy_id: log.header.policy_id,
            controller: log.header.controller,
        },
    })
}
