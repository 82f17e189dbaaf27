//! Episode logs: the unit a worker uploads after running one episode.
//!
//! On the wire a log is JSON lines: a header line, one line per step record,
//! and a footer line carrying the stop reason.
//!
//! ```text
//! {"kind":"header","format_version":1,"worker_id":...,"layout_seed":...,...}
//! {"kind":"step","t":0,"obs":[...],"action":[dl,dr],"command":[tl,tr],"pose_est":{...},"event":"none",...}
//! ...
//! {"kind":"step","t":N,"obs":[...],"action":null,"command":null,...,"event":"collision"}
//! {"kind":"footer","stop_reason":"collision","step_count":N+1,"duration_s":...}
//! ```
//!
//! Record `t` is the state observed at time `t` together with the action applied
//! from it; the final record holds the terminal state and no action. A log of `N`
//! simulator steps therefore has `N + 1` records.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::byte_offset;
use crate::geometry::{Pose2D, Vec2};
use crate::policy::ObsSpec;
use crate::sim::{StepEvent, StopReason};

pub const EPISODE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Actions come from a published policy.
    Policy,
    /// A human drove the robot.
    Teleop,
    /// A scripted planner drove the robot.
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub worker_id: String,
    pub request_id: String,
    pub policy_id: Option<u64>,
    pub layout_seed: u64,
    pub sim_config_digest: String,
    pub start_time_ms: u64,
    pub controller: Controller,
    pub obs_spec: ObsSpec,
    pub dt: f64,
    pub start_pose: Pose2D,
    pub goal: Vec2,
    pub start_goal_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    pub time_ms: u64,
    /// Unstacked observation frame.
    pub obs: Vec<f32>,
    /// Actor-space action applied from this state.
    pub action: Option<[f64; 2]>,
    /// Wheel command applied from this state.
    pub command: Option<[f64; 2]>,
    pub pose_est: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_true: Option<Pose2D>,
    /// Estimated distance to the goal (m) and heading error (rad).
    pub goal_distance: f64,
    pub alpha: f64,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFooter {
    pub stop_reason: StopReason,
    pub step_count: u32,
    /// Simulated episode duration (s).
    pub duration_s: f64,
    pub wall_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub footer: EpisodeFooter,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        format_version: u32,
        #[serde(flatten)]
        header: EpisodeHeader,
    },
    Step(StepRecord),
    Footer(EpisodeFooter),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogParseError {
    #[error("line {line}, byte {offset}: {message}")]
    Malformed { line: usize, offset: usize, message: String },
    #[error("unsupported episode format_version {0}")]
    UnsupportedVersion(u32),
    #[error("episode log is missing its {0}")]
    Missing(&'static str),
    #[error("unexpected {what} on line {line}")]
    Unexpected { what: &'static str, line: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogViolation {
    NoSteps,
    StepCountMismatch { declared: u32, actual: usize },
    NonMonotoneTime { index: usize },
    NonSequentialStep { index: usize },
    ObservationWidth { index: usize },
    NonFinite { index: usize },
    MissingAction { index: usize },
    StartGoalTooClose { distance: f64 },
    StartGoalMismatch { recorded: f64, computed: f64 },
}

impl EpisodeLog {
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut push = |line: &Line| {
            out.extend_from_slice(&serde_json::to_vec(line).expect("log serialization is infallible"));
            out.push(b'\n');
        };
        push(&Line::Header { format_version: EPISODE_FORMAT_VERSION, header: self.header.clone() });
        for s in &self.steps {
            push(&Line::Step(s.clone()));
        }
        push(&Line::Footer(self.footer.clone()));
        out
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self, LogParseError> {
        let text = core::str::from_utf8(bytes).map_err(|e| LogParseError::Malformed {
            line: 0,
            offset: e.valid_up_to(),
            message: String::from("invalid UTF-8"),
        })?;
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        let mut offset = 0usize;
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let line_start = offset;
            offset += raw.len();
            let trimmed = raw.trim_end_matches(['\n', '\r']);
            if trimmed.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(trimmed).map_err(|e| LogParseError::Malformed {
                line: i + 1,
                offset: line_start + byte_offset(trimmed, e.line(), e.column()),
                message: alloc::format!("{e}"),
            })?;
            if footer.is_some() {
                return Err(LogParseError::Unexpected { what: "line after footer", line: i + 1 });
            }
            match parsed {
                Line::Header { format_version, header: h } => {
                    if format_version != EPISODE_FORMAT_VERSION {
                        return Err(LogParseError::UnsupportedVersion(format_version));
                    }
                    if header.is_some() || !steps.is_empty() {
                        return Err(LogParseError::Unexpected { what: "header", line: i + 1 });
                    }
                    header = Some(h);
                }
                Line::Step(s) => {
                    if header.is_none() {
                        return Err(LogParseError::Unexpected { what: "step before header", line: i + 1 });
                    }
                    steps.push(s);
                }
                Line::Footer(f) => footer = Some(f),
            }
        }
        Ok(EpisodeLog {
            header: header.ok_or(LogParseError::Missing("header"))?,
            steps,
            footer: footer.ok_or(LogParseError::Missing("footer"))?,
        })
    }

    /// Structural checks shared by workers (before upload) and the server (on upload).
    pub fn validate(&self, min_start_goal_distance: f64) -> Vec<LogViolation> {
        let mut v = Vec::new();
        if self.steps.is_empty() {
            v.push(LogViolation::NoSteps);
        }
        if self.footer.step_count as usize != self.steps.len() {
            v.push(LogViolation::StepCountMismatch { declared: self.footer.step_count, actual: self.steps.len() });
        }
        let frame_len = self.header.obs_spec.frame_len();
        for (i, s) in self.steps.iter().enumerate() {
            if s.t as usize != i {
                v.push(LogViolation::NonSequentialStep { index: i });
            }
            if i > 0 && s.time_ms < self.steps[i - 1].time_ms {
                v.push(LogViolation::NonMonotoneTime { index: i });
            }
            if s.obs.len() != frame_len {
                v.push(LogViolation::ObservationWidth { index: i });
            }
            let finite = s.obs.iter().all(|x| x.is_finite())
                && s.pose_est.is_finite()
                && s.goal_distance.is_finite()
                && s.alpha.is_finite()
                && s.action.iter().flatten().all(|x| x.is_finite())
                && s.command.iter().flatten().all(|x| x.is_finite());
            if !finite {
                v.push(LogViolation::NonFinite { index: i });
            }
            if i + 1 < self.steps.len() && s.command.is_none() {
                v.push(LogViolation::MissingAction { index: i });
            }
        }
        let computed = self.header.start_pose.position().distance(self.header.goal);
        if (computed - self.header.start_goal_distance).abs() > 1e-6 {
            v.push(LogViolation::StartGoalMismatch { recorded: self.header.start_goal_distance, computed });
        }
        if computed < min_start_goal_distance {
            v.push(LogViolation::StartGoalTooClose { distance: computed });
        }
        v
    }
}

/// Accumulates step records for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecorder {
    header: EpisodeHeader,
    steps: Vec<StepRecord>,
}

impl EpisodeRecorder {
    pub fn new(header: EpisodeHeader) -> Self {
        Self { header, steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    /// Appends one record; `t` is assigned sequentially and `time_ms` is kept monotone.
    pub fn record_step(&mut self, mut record: StepRecord) -> &StepRecord {
        record.t = self.steps.len() as u32;
        if let Some(prev) = self.steps.last() {
            record.time_ms = record.time_ms.max(prev.time_ms);
        }
        self.steps.push(record);
        self.steps.last().expect("just pushed")
    }

    pub fn finish(self, stop_reason: StopReason, wall_duration_s: f64) -> EpisodeLog {
        let n = self.steps.len();
        let duration_s = n.saturating_sub(1) as f64 * self.header.dt;
        EpisodeLog {
            header: self.header,
            footer: EpisodeFooter { stop_reason, step_count: n as u32, duration_s, wall_duration_s },
            steps: self.steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{FeatureKind, SimConfig};
    use alloc::vec;

    fn header() -> EpisodeHeader {
        let mut c = SimConfig::default();
        c.observation.features = FeatureKind::DepthRays { n_rays: 11 };
        EpisodeHeader {
            worker_id: String::from("w"),
            request_id: String::from("r"),
            policy_id: Some(2),
            layout_seed: 9,
            sim_config_digest: String::from("abc"),
            start_time_ms: 1_700_000_000_000,
            controller: Controller::Policy,
            obs_spec: ObsSpec::from_sim(&c),
            dt: 0.1,
            start_pose: Pose2D::new(0.0, 0.0, 0.3),
            goal: Vec2::new(2.5, 0.0),
            start_goal_distance: 2.5,
        }
    }

    fn record(i: u32, last: bool) -> StepRecord {
        StepRecord {
            t: i,
            time_ms: 1_700_000_000_000 + 100 * i as u64,
            obs: vec![0.1 + 0.01 * i as f32; 13],
            action: (!last).then_some([0.25, -1.0 / 3.0]),
            command: (!last).then_some([0.7, 0.6]),
            pose_est: Pose2D::new(0.1 * i as f64, 0.0, 0.3),
            pose_true: Some(Pose2D::new(0.1 * i as f64, 1e-3, 0.3)),
            goal_distance: 2.5 - 0.1 * i as f64,
            alpha: -0.3,
            event: if last { StepEvent::Timeout } else { StepEvent::None },
        }
    }

    fn log(n: u32) -> EpisodeLog {
        let mut rec = EpisodeRecorder::new(header());
        for i in 0..n {
            rec.record_step(record(i, i + 1 == n));
        }
        rec.finish(StopReason::Timeout, 0.5)
    }

    #[test]
    fn recorder_counts_and_roundtrip() {
        let l = log(6);
        assert_eq!(l.steps.len(), 6);
        assert_eq!(l.footer.step_count, 6);
        assert!((l.footer.duration_s - 0.5).abs() < 1e-12);
        assert!(l.validate(2.0).is_empty());
        let back = EpisodeLog::from_jsonl(&l.to_jsonl()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn recorder_keeps_time_monotone() {
        let mut rec = EpisodeRecorder::new(header());
        rec.record_step(record(0, false));
        let mut r = record(1, false);
        r.time_ms = 0;
        r.t = 77;
        let stored = rec.record_step(r).clone();
        assert_eq!(stored.t, 1);
        assert_eq!(stored.time_ms, rec.steps()[0].time_ms);
    }

    #[test]
    fn short_start_goal_distance_is_a_violation() {
        let mut l = log(3);
        l.header.goal = Vec2::new(1.5, 0.0);
        l.header.start_goal_distance = 1.5;
        let v = l.validate(2.0);
        assert!(v.iter().any(|x| matches!(x, LogViolation::StartGoalTooClose { .. })), "{v:?}");
    }

    #[test]
    fn structural_violations() {
        let mut l = log(4);
        l.footer.step_count = 9;
        l.steps[2].obs.push(0.0);
        l.steps[1].command = None;
        l.steps[3].time_ms = 0;
        let v = l.validate(2.0);
        assert!(v.contains(&LogViolation::StepCountMismatch { declared: 9, actual: 4 }));
        assert!(v.contains(&LogViolation::ObservationWidth { index: 2 }));
        assert!(v.contains(&LogViolation::MissingAction { index: 1 }));
        assert!(v.contains(&LogViolation::NonMonotoneTime { index: 3 }));
    }

    #[test]
    fn parse_errors() {
        let bytes = log(3).to_jsonl();
        let text = core::str::from_utf8(&bytes).unwrap();
        let cut = &text[..text.len() - 20];
        assert!(matches!(EpisodeLog::from_jsonl(cut.as_bytes()), Err(LogParseError::Malformed { line: 5, .. })));
        let no_footer: String = text.lines().take(4).map(|l| alloc::format!("{l}\n")).collect();
        assert_eq!(EpisodeLog::from_jsonl(no_footer.as_bytes()), Err(LogParseError::Missing("footer")));
        let v2 = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert_eq!(EpisodeLog::from_jsonl(v2.as_bytes()), Err(LogParseError::UnsupportedVersion(2)));
        let extra = text.replacen("\"kind\":\"step\"", "\"kind\":\"step\",\"x\":1", 1);
        assert_eq!(EpisodeLog::from_jsonl(extra.as_bytes()).unwrap(), log(3));
    }
}
