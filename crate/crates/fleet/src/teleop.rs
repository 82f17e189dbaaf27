//! Server-hosted teleoperation sessions.
//!
//! The simulator advances on a fixed tick. The latest accepted frame's command is
//! held between frames; after [`DEADMAN_MS`] without a frame the command drops to
//! zero. Frames with a sequence number at or below the last accepted one are
//! discarded.

use fleetnav_core::env::LayoutSpec;
use fleetnav_core::episode::{Controller, EpisodeLog};
use fleetnav_core::rollout::{EpisodeRunner, RolloutError, RolloutMeta};
use fleetnav_core::sim::{SimConfig, StopReason, WheelCommand};

use crate::api::{EpisodeStatus, StateFrame, TeleopFrame};

pub const DEADMAN_MS: u64 = 500;
/// How long a dropped session stays paused before it is cancelled.
pub const RECONNECT_GRACE_MS: u64 = 10_000;

/// What the server must do after a session ends.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEnd {
    /// The episode ended; the log awaits the user's review.
    Review(Box<EpisodeLog>),
    /// Cancelled: nothing is uploaded and the request reopens.
    Cancelled,
}

pub struct TeleopSession {
    pub session_id: String,
    pub claim_id: String,
    runner: Option<EpisodeRunner>,
    command: [f64; 2],
    last_seq: Option<u64>,
    last_frame_ms: u64,
    stop: Option<StopReason>,
    started_ms: u64,
    ended: Option<SessionEnd>,
}

impl TeleopSession {
    pub fn start(
        session_id: String,
        claim_id: String,
        layout: &LayoutSpec,
        config: &SimConfig,
        sim_seed: u64,
        meta: RolloutMeta,
        now_ms: u64,
    ) -> Result<Self, RolloutError> {
        let meta = RolloutMeta { controller: Controller::Teleop, start_time_ms: now_ms, ..meta };
        let runner = EpisodeRunner::start(layout, config, sim_seed, &meta)?;
        Ok(Self {
            session_id,
            claim_id,
            runner: Some(runner),
            command: [0.0; 2],
            last_seq: None,
            last_frame_ms: now_ms,
            stop: None,
            started_ms: now_ms,
            ended: None,
        })
    }

    /// Accepts a frame; returns false when it is stale or belongs to another session.
    pub fn on_frame(&mut self, frame: &TeleopFrame, now_ms: u64) -> bool {
        if frame.session_id != self.session_id || self.last_seq.is_some_and(|s| frame.seq <= s) {
            return false;
        }
        if !frame.tau_l.is_finite() || !frame.tau_r.is_finite() {
            return false;
        }
        self.last_seq = Some(frame.seq);
        self.last_frame_ms = now_ms;
        self.command = [frame.tau_l.clamp(-1.0, 1.0), frame.tau_r.clamp(-1.0, 1.0)];
        if frame.buttons.cancel {
            self.stop = Some(StopReason::UserCancel);
        } else if frame.buttons.stop && self.stop.is_none() {
            self.stop = Some(StopReason::UserStop);
        }
        true
    }

    /// Command the next tick will apply.
    pub fn effective_command(&self, now_ms: u64) -> [f64; 2] {
        if now_ms.saturating_sub(self.last_frame_ms) >= DEADMAN_MS {
            [0.0; 2]
        } else {
            self.command
        }
    }

    pub fn is_running(&self) -> bool {
        self.runner.is_some()
    }

    pub fn take_end(&mut self) -> Option<SessionEnd> {
        self.ended.take()
    }

    /// Advances one simulator step (or ends the episode) and returns the frame to send.
    pub fn tick(&mut self, now_ms: u64) -> Result<StateFrame, RolloutError> {
        let c = self.effective_command(now_ms);
        let Some(runner) = self.runner.as_mut() else {
            return Err(RolloutError::Env(fleetnav_core::env::EnvError::InvalidArgument("session already ended")));
        };
        if runner.ended().is_none() && self.stop.is_none() {
            runner.step(c, WheelCommand::new(c[0], c[1]))?;
        }
        let frame = |r: &EpisodeRunner, status, stop_reason| StateFrame {
            session_id: self.session_id.clone(),
            step: r.state().step,
            pose_est: r.state().pose_est,
            goal: r.state().goal(),
            boundary: r.observation().features().to_vec(),
            event: r.last_event(),
            status,
            stop_reason,
            recording_id: None,
        };
        if runner.ended().is_none() && self.stop.is_none() {
            return Ok(frame(runner, EpisodeStatus::Running, None));
        }
        let runner = self.runner.take().expect("checked above");
        let (log, outcome) = {
            let wall = now_ms.saturating_sub(self.started_ms) as f64 / 1000.0;
            let f = frame(&runner, EpisodeStatus::Running, None);
            let (log, outcome) = runner.finish(self.stop, wall);
            (log, (outcome, f))
        };
        let (outcome, mut f) = outcome;
        f.stop_reason = Some(outcome.stop_reason);
        if outcome.stop_reason == StopReason::UserCancel {
            f.status = EpisodeStatus::Discarded;
            self.ended = Some(SessionEnd::Cancelled);
        } else {
            f.status = EpisodeStatus::AwaitingReview;
            self.ended = Some(SessionEnd::Review(Box::new(log)));
        }
        Ok(f)
    }

    /// Cancels a running session (dropped connection past the grace period).
    pub fn abandon(&mut self) {
        if self.runner.take().is_some() {
            self.ended = Some(SessionEnd::Cancelled);
        }
    }
}
