//! Fleet coordination schema: recording requests, expiring claims, and the event
//! feed, plus the request lifecycle state machine.
//!
//! ```text
//!          claim                complete
//!   open ---------> claimed -------------> completed (deleted)
//!    ^                 |
//!    +-----------------+
//!      expire / cancel
//! ```
//!
//! Timestamps are integer milliseconds since the Unix epoch.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::GenConfig;
use crate::episode::Controller;

pub const PROTOCOL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_LEASE_MS: u64 = 600_000;

/// What a worker is asked to record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub layout_seed: u64,
    /// Generator for `layout_seed`; workers fall back to their local config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_config: Option<GenConfig>,
    #[serde(default = "one")]
    pub episode_count: u32,
    #[serde(default = "policy_controller")]
    pub controller: Controller,
    /// Free-text instructions for human drivers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

fn one() -> u32 {
    1
}

fn policy_controller() -> Controller {
    Controller::Policy
}

impl TaskDescriptor {
    pub fn policy_episode(layout_seed: u64) -> Self {
        Self { layout_seed, gen_config: None, episode_count: 1, controller: Controller::Policy, text: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Open,
    Claimed,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub request_id: String,
    pub worker_id: String,
    pub issued_at_ms: u64,
    pub expires_at_ms: u64,
}

impl Claim {
    pub fn is_live(&self, now_ms: u64) -> bool {
        now_ms < self.expires_at_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRequest {
    pub request_id: String,
    pub task: TaskDescriptor,
    /// Policy to run; `None` for demonstration tasks.
    #[serde(default)]
    pub policy_id: Option<u64>,
    #[serde(default)]
    pub policy_uri: Option<String>,
    #[serde(default)]
    pub policy_hash: Option<String>,
    /// Empty means every worker may claim.
    #[serde(default)]
    pub permitted_workers: Vec<String>,
    pub state: RequestState,
    #[serde(default)]
    pub claim: Option<Claim>,
    pub created_at_ms: u64,
    #[serde(default)]
    pub recording_id: Option<String>,
}

impl RecordingRequest {
    pub fn new(request_id: String, task: TaskDescriptor, created_at_ms: u64) -> Self {
        Self {
            request_id,
            task,
            policy_id: None,
            policy_uri: None,
            policy_hash: None,
            permitted_workers: Vec::new(),
            state: RequestState::Open,
            claim: None,
            created_at_ms,
            recording_id: None,
        }
    }

    pub fn permits(&self, worker_id: &str) -> bool {
        self.permitted_workers.is_empty() || self.permitted_workers.iter().any(|w| w == worker_id)
    }

    /// Open, or claimed under an expired lease.
    pub fn is_claimable(&self, now_ms: u64) -> bool {
        match self.state {
            RequestState::Open => true,
            RequestState::Claimed => self.claim.as_ref().is_none_or(|c| !c.is_live(now_ms)),
            RequestState::Completed => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Claim { worker_id: String, claim_id: String, now_ms: u64, lease_ms: u64 },
    Renew { claim_id: String, worker_id: String, now_ms: u64, lease_ms: u64 },
    Expire { now_ms: u64 },
    Complete { claim_id: String, recording_id: String, now_ms: u64 },
    Cancel { claim_id: String },
}

impl Action {
    fn name(&self) -> &'static str {
        match self {
            Action::Claim { .. } => "claim",
            Action::Renew { .. } => "renew",
            Action::Expire { .. } => "expire",
            Action::Complete { .. } => "complete",
            Action::Cancel { .. } => "cancel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ProtocolError {
    #[error("request is claimed by another worker")]
    Conflict,
    #[error("cannot {action} a request in state {from:?}")]
    InvalidTransition { from: RequestState, action: String },
    #[error("worker is not permitted on this request")]
    NotPermitted,
    #[error("claim is not held or has expired")]
    ClaimInvalid,
}

/// Applies one lifecycle action.
pub fn transition(req: &RecordingRequest, action: &Action) -> Result<RecordingRequest, ProtocolError> {
    let invalid = || ProtocolError::InvalidTransition { from: req.state, action: String::from(action.name()) };
    let mut next = req.clone();
    match action {
        Action::Claim { worker_id, claim_id, now_ms, lease_ms } => {
            if req.state == RequestState::Completed {
                return Err(invalid());
            }
            if !req.is_claimable(*now_ms) {
                return Err(ProtocolError::Conflict);
            }
            if !req.permits(worker_id) {
                return Err(ProtocolError::NotPermitted);
            }
            next.state = RequestState::Claimed;
            next.claim = Some(Claim {
                claim_id: claim_id.clone(),
                request_id: req.request_id.clone(),
                worker_id: worker_id.clone(),
                issued_at_ms: *now_ms,
                expires_at_ms: now_ms.saturating_add(*lease_ms),
            });
        }
        Action::Renew { claim_id, worker_id, now_ms, lease_ms } => {
            if req.state != RequestState::Claimed {
                return Err(invalid());
            }
            match next.claim.as_mut() {
                Some(c) if c.claim_id == *claim_id && c.worker_id == *worker_id && c.is_live(*now_ms) => {
                    c.expires_at_ms = now_ms.saturating_add(*lease_ms);
                }
                _ => return Err(ProtocolError::ClaimInvalid),
            }
        }
        Action::Expire { now_ms } => match (&req.state, &req.claim) {
            (RequestState::Claimed, Some(c)) if !c.is_live(*now_ms) => {
                next.state = RequestState::Open;
                next.claim = None;
            }
            _ => return Err(invalid()),
        },
        Action::Complete { claim_id, recording_id, now_ms } => {
            if req.state != RequestState::Claimed {
                return Err(invalid());
            }
            match &req.claim {
                Some(c) if c.claim_id == *claim_id && c.is_live(*now_ms) => {
                    next.state = RequestState::Completed;
                    next.recording_id = Some(recording_id.clone());
                }
                _ => return Err(ProtocolError::ClaimInvalid),
            }
        }
        Action::Cancel { claim_id } => {
            if req.state != RequestState::Claimed {
                return Err(invalid());
            }
            match &req.claim {
                Some(c) if c.claim_id == *claim_id => {
                    next.state = RequestState::Open;
                    next.claim = None;
                }
                _ => return Err(ProtocolError::ClaimInvalid),
            }
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestCreated,
    /// Emitted on claims and lease renewals.
    RequestClaimed,
    /// A claim was cancelled by its holder; the request is open again.
    RequestReleased,
    RequestCompleted,
    RecordingUploaded,
    PolicyPublished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetEvent {
    pub cursor: u64,
    pub time_ms: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    /// Full request on `request_created`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<RecordingRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<Claim>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
    /// Recorded episode duration for `recording_uploaded`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl FleetEvent {
    pub fn new(cursor: u64, time_ms: u64, kind: EventKind) -> Self {
        Self {
            cursor,
            time_ms,
            kind,
            request_id: None,
            request: None,
            claim: None,
            recording_id: None,
            worker_id: None,
            policy_id: None,
            content_hash: None,
            duration_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("cursor gap: expected {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("event {cursor} is missing its payload")]
    MissingPayload { cursor: u64 },
}

/// Request map rebuilt from the event feed. Completed requests are removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestView {
    pub requests: BTreeMap<String, RecordingRequest>,
    pub last_cursor: u64,
}

impl RequestView {
    pub fn apply(&mut self, ev: &FleetEvent) -> Result<(), ReplayError> {
        if ev.cursor != self.last_cursor + 1 {
            return Err(ReplayError::Gap { expected: self.last_cursor + 1, found: ev.cursor });
        }
        let missing = || ReplayError::MissingPayload { cursor: ev.cursor };
        match ev.kind {
            EventKind::RequestCreated => {
                let r = ev.request.clone().ok_or_else(missing)?;
                self.requests.insert(r.request_id.clone(), r);
            }
            EventKind::RequestClaimed => {
                let claim = ev.claim.clone().ok_or_else(missing)?;
                if let Some(r) = self.requests.get_mut(&claim.request_id) {
                    r.state = RequestState::Claimed;
                    r.claim = Some(claim);
                }
            }
            EventKind::RequestReleased => {
                let id = ev.request_id.as_ref().ok_or_else(missing)?;
                if let Some(r) = self.requests.get_mut(id) {
                    r.state = RequestState::Open;
                    r.claim = None;
                }
            }
            EventKind::RequestCompleted => {
                let id = ev.request_id.as_ref().ok_or_else(missing)?;
                self.requests.remove(id);
            }
            EventKind::RecordingUploaded | EventKind::PolicyPublished => {}
        }
        self.last_cursor = ev.cursor;
        Ok(())
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a FleetEvent>) -> Result<Self, ReplayError> {
        let mut v = Self::default();
        for e in events {
            v.apply(e)?;
        }
        Ok(v)
    }
}
