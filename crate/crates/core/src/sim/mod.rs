//! Episodic differential-drive simulation with gym-style `reset`/`step`.

mod config;
mod estimation;
mod sensors;

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use config::{CameraModel, EstimationNoiseConfig, FeatureKind, ObservationConfig, SimConfig};
pub use estimation::{estimation_step, Motion};
pub use sensors::{boundary_observation, depth_rays_observation, goal_features, ray_azimuth};

use crate::env::{LayoutSpec, World};
use crate::geometry::{Pose2D, Vec2};
use crate::policy::unicycle_base;
use crate::rng::CounterRng;

/// Normalized wheel torques, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelCommand {
    pub tau_l: f64,
    pub tau_r: f64,
}

impl WheelCommand {
    pub fn new(tau_l: f64, tau_r: f64) -> Self {
        let clamp = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self { tau_l: clamp(tau_l), tau_r: clamp(tau_r) }
    }

    pub const STOP: WheelCommand = WheelCommand { tau_l: 0.0, tau_r: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GoalReached,
    Collision,
    Timeout,
    TrackingLost,
    UserStop,
    UserCancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    None,
    GoalReached,
    Collision,
    Timeout,
    TrackingLost,
}

impl StepEvent {
    pub fn stop_reason(self) -> Option<StopReason> {
        match self {
            StepEvent::None => None,
            StepEvent::GoalReached => Some(StopReason::GoalReached),
            StepEvent::Collision => Some(StopReason::Collision),
            StepEvent::Timeout => Some(StopReason::Timeout),
            StepEvent::TrackingLost => Some(StopReason::TrackingLost),
        }
    }

    pub fn is_terminal(self) -> bool {
        self != StepEvent::None
    }
}

impl From<StopReason> for StepEvent {
    fn from(r: StopReason) -> Self {
        match r {
            StopReason::GoalReached => StepEvent::GoalReached,
            StopReason::Collision => StepEvent::Collision,
            StopReason::Timeout => StepEvent::Timeout,
            StopReason::TrackingLost => StepEvent::TrackingLost,
            StopReason::UserStop | StopReason::UserCancel => StepEvent::None,
        }
    }
}

/// One policy input: the newest frame and the zero-padded stack of the last `H` frames
/// (oldest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `[goal_distance / d_norm, alpha, features...]`
    pub frame: Vec<f32>,
    pub stacked: Vec<f32>,
}

impl Observation {
    pub fn goal_distance(&self) -> f32 {
        self.frame[0]
    }

    pub fn alpha(&self) -> f32 {
        self.frame[1]
    }

    pub fn features(&self) -> &[f32] {
        &self.frame[2..]
    }
}

/// Stacks frames oldest-first with zero padding in front.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHistory {
    frames: VecDeque<Vec<f32>>,
    depth: usize,
    frame_len: usize,
}

impl FrameHistory {
    pub fn new(depth: usize, frame_len: usize) -> Self {
        Self { frames: VecDeque::with_capacity(depth), depth, frame_len }
    }

    pub fn push(&mut self, frame: Vec<f32>) {
        debug_assert_eq!(frame.len(), self.frame_len);
        if self.frames.len() == self.depth {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn stacked(&self) -> Vec<f32> {
        let mut out = vec![0.0; (self.depth - self.frames.len()) * self.frame_len];
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("start pose collides with the layout")]
    InvalidLayout,
    #[error("invalid simulator configuration")]
    InvalidConfig,
    #[error("episode already ended")]
    EpisodeEnded,
}

const STREAM_ACTUATION: u64 = 10;
const STREAM_ESTIMATION: u64 = 11;

/// Ground-truth simulation state for one episode.
#[derive(Debug, Clone)]
pub struct SimState {
    pub layout: LayoutSpec,
    pub config: SimConfig,
    pub world: World,
    pub pose_true: Pose2D,
    pub pose_est: Pose2D,
    pub wheel_speed_l: f64,
    pub wheel_speed_r: f64,
    pub step: u32,
    pub tracking_lost: bool,
    /// Bump contact during the latest step.
    pub contact: bool,
    pub ended: Option<StopReason>,
    history: FrameHistory,
    actuation_rng: CounterRng,
    estimation_rng: CounterRng,
}

impl SimState {
    pub fn reset(layout: &LayoutSpec, config: &SimConfig, seed: u64) -> Result<(SimState, Observation), SimError> {
        if !config.is_valid() {
            return Err(SimError::InvalidConfig);
        }
        let world = World::new(layout);
        if world.disc_collides(layout.start_pose.position(), config.robot_radius) {
            return Err(SimError::InvalidLayout);
        }
        let root = CounterRng::new(seed);
        let frame_len = config.observation.frame_len(&config.camera);
        let mut state = SimState {
            layout: layout.clone(),
            config: *config,
            world,
            pose_true: layout.start_pose,
            pose_est: layout.start_pose,
            wheel_speed_l: 0.0,
            wheel_speed_r: 0.0,
            step: 0,
            tracking_lost: false,
            contact: false,
            ended: None,
            history: FrameHistory::new(config.observation.history, frame_len),
            actuation_rng: root.split(STREAM_ACTUATION),
            estimation_rng: root.split(STREAM_ESTIMATION),
        };
        let obs = state.observe();
        Ok((state, obs))
    }

    pub fn goal(&self) -> Vec2 {
        self.layout.goal_position
    }

    /// True distance from the robot center to the goal.
    pub fn goal_distance_true(&self) -> f64 {
        self.pose_true.position().distance(self.goal())
    }

    pub fn is_ended(&self) -> bool {
        self.ended.is_some()
    }

    /// Advances one control period.
    pub fn step(&mut self, cmd: WheelCommand) -> Result<(Observation, StepEvent), SimError> {
        if self.ended.is_some() {
            return Err(SimError::EpisodeEnded);
        }
        let cmd = WheelCommand::new(cmd.tau_l, cmd.tau_r);
        let c = self.config;
        let nl = self.actuation_rng.normal();
        let nr = self.actuation_rng.normal();
        let target_l = cmd.tau_l * c.v_max * (1.0 + c.actuation_noise_sigma * nl);
        let target_r = cmd.tau_r * c.v_max * (1.0 + c.actuation_noise_sigma * nr);
        let lag = c.lag_factor();
        self.wheel_speed_l += (target_l - self.wheel_speed_l) * lag;
        self.wheel_speed_r += (target_r - self.wheel_speed_r) * lag;

        let v = 0.5 * (self.wheel_speed_l + self.wheel_speed_r);
        let omega = (self.wheel_speed_r - self.wheel_speed_l) / c.wheel_base;
        let prev = self.pose_true;
        let (pose, contact) = self.sweep(prev, v, omega);
        self.pose_true = pose;
        self.contact = contact;
        if contact {
            self.wheel_speed_l = 0.0;
            self.wheel_speed_r = 0.0;
        }

        let motion = Motion::between(&prev, &pose, omega);
        let (est, lost) =
            estimation_step(&c.estimation, &self.pose_true, &self.pose_est, &motion, &mut self.estimation_rng);
        self.pose_est = est;
        self.tracking_lost |= lost;
        self.step += 1;

        let event = match self.check_termination() {
            Some(r) => {
                self.ended = Some(r);
                StepEvent::from(r)
            }
            None => StepEvent::None,
        };
        Ok((self.observe(), event))
    }

    /// Drives toward a relative task-space target `(x, y, theta)` by steering
    /// the unicycle controller at it.
    pub fn step_task_space(&mut self, x: f64, y: f64, theta: f64) -> Result<(Observation, StepEvent), SimError> {
        let alpha = if libm::hypot(x, y) < 1e-9 { theta } else { libm::atan2(y, x) };
        let base = unicycle_base(alpha);
        self.step(WheelCommand::new(base.v_l, base.v_r))
    }

    /// Terminal classification for the current state, by priority
    /// collision > goal reached > tracking lost > timeout.
    pub fn check_termination(&self) -> Option<StopReason> {
        if self.contact {
            Some(StopReason::Collision)
        } else if self.goal_distance_true() <= self.config.goal_radius {
            Some(StopReason::GoalReached)
        } else if self.tracking_lost {
            Some(StopReason::TrackingLost)
        } else if self.step >= self.config.max_steps {
            Some(StopReason::Timeout)
        } else {
            None
        }
    }

    /// Integrates `(v, omega)` over `dt`, checking the robot disc along the way.
    /// On contact the robot stops at the last collision-free sub-pose.
    fn sweep(&self, start: Pose2D, v: f64, omega: f64) -> (Pose2D, bool) {
        let c = &self.config;
        let travel = v.abs() * c.dt;
        let max_sub = c.robot_radius * 0.25;
        let n = (libm::ceil(travel / max_sub) as usize).max(1);
        let mut last_free = start;
        for i in 1..=n {
            let t = c.dt * i as f64 / n as f64;
            let p = integrate(start, v, omega, t);
            if self.world.disc_collides(p.position(), c.robot_radius) {
                return (last_free, true);
            }
            last_free = p;
        }
        (last_free, false)
    }

    /// Builds the observation for the current state and pushes it into the history.
    fn observe(&mut self) -> Observation {
        let c = &self.config;
        let (dist, alpha) = goal_features(&self.pose_est, self.goal());
        let mut frame = Vec::with_capacity(c.observation.frame_len(&c.camera));
        frame.push((dist / c.observation.d_norm).min(1.0) as f32);
        frame.push(alpha as f32);
        match c.observation.features {
            FeatureKind::Boundary => {
                frame.extend(boundary_observation(&self.world, &self.pose_true, &c.camera).iter().map(|v| *v as f32))
            }
            FeatureKind::DepthRays { n_rays } => frame.extend(
                depth_rays_observation(&self.world, &self.pose_true, n_rays, c.camera.hfov, c.camera.max_range)
                    .iter()
                    .map(|v| *v as f32),
            ),
        }
        self.history.push(frame.clone());
        Observation { frame, stacked: self.history.stacked() }
    }
}

/// Exact unicycle integration for constant `(v, omega)` over `t`.
pub fn integrate(p: Pose2D, v: f64, omega: f64, t: f64) -> Pose2D {
    if omega.abs() > 1e-6 {
        let th1 = p.theta + omega * t;
        let r = v / omega;
        Pose2D::new(
            p.x + r * (libm::sin(th1) - libm::sin(p.theta)),
            p.y - r * (libm::cos(th1) - libm::cos(p.theta)),
            th1,
        )
    } else {
        Pose2D::new(p.x + v * t * libm::cos(p.theta), p.y + v * t * libm::sin(p.theta), p.theta + omega * t)
    }
}

#[cfg(test)]
mod tests;
