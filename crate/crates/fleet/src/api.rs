//! Request and response bodies of the HTTP API and the teleoperation frames.

use serde::{Deserialize, Serialize};

use fleetnav_core::geometry::{Pose2D, Vec2};
use fleetnav_core::protocol::{Claim, FleetEvent, RecordingRequest, TaskDescriptor};
use fleetnav_core::sim::{StepEvent, StopReason};

/// Header carrying a snapshot's content hash on policy downloads.
pub const CONTENT_HASH_HEADER: &str = "x-content-hash";
pub const POLICY_ID_HEADER: &str = "x-policy-id";

/// Upload cap for one episode log.
pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Worker,
    /// May create requests, publish policies, and read recordings.
    Learner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub worker_id: String,
    pub role: Role,
    pub expires_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestList {
    pub requests: Vec<RecordingRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub task: TaskDescriptor,
    /// Policy to run; the latest one when absent and the task runs a policy.
    #[serde(default)]
    pub policy_id: Option<u64>,
    #[serde(default)]
    pub permitted_workers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResponse {
    pub claim: Claim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRequest {
    pub claim_id: String,
}

/// JSON part of a recording upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadMetadata {
    pub claim_id: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub recording_id: String,
    /// The claim had already been uploaded; this is the original recording.
    #[serde(default)]
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishResponse {
    pub policy_id: u64,
    pub content_hash: String,
    /// Identical weights were already registered under `policy_id`.
    #[serde(default)]
    pub existing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsResponse {
    pub events: Vec<FleetEvent>,
    /// Highest cursor issued by the server.
    pub last_cursor: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub worker_id: String,
    pub recording_count: u64,
    pub total_recorded_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub workers: Vec<WorkerStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    BadRequest,
    AuthFailed,
    AuthExpired,
    Unauthorized,
    Forbidden,
    NotFound,
    Conflict,
    NotPermitted,
    ClaimInvalid,
    ValidationFailed,
    StorageFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorKind,
    pub message: String,
    /// Log violations for `validation_failed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TeleopButtons {
    #[serde(default)]
    pub stop: bool,
    #[serde(default)]
    pub cancel: bool,
}

/// Client to server: one control sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopFrame {
    pub session_id: String,
    pub seq: u64,
    pub tau_l: f64,
    pub tau_r: f64,
    #[serde(default)]
    pub buttons: TeleopButtons,
}

/// Client to server after the episode ended: keep or discard the recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopReview {
    pub session_id: String,
    pub upload: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TeleopClientMessage {
    Review(TeleopReview),
    Frame(TeleopFrame),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    /// Ended; waiting for a [`TeleopReview`] decision.
    AwaitingReview,
    /// Ended; the recording was stored under `recording_id`.
    Uploaded,
    /// Ended without an upload (cancelled, or storage refused it).
    Discarded,
}

/// Server to client: one per simulator step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub session_id: String,
    pub step: u32,
    pub pose_est: Pose2D,
    pub goal: Vec2,
    pub boundary: Vec<f32>,
    pub event: StepEvent,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording_id: Option<String>,
}
