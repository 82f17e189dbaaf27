//! Blocking HTTP client for the fleet API, shared by workers and the learner.

use std::time::Duration;

use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use fleetnav_core::policy::{hex32, sha256};
use fleetnav_core::protocol::{Claim, RecordingRequest};

use crate::api::*;
use crate::wire::{self, SchemaError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with an error body.
    #[error("{status}: {} ({})", body.message, serde_json::to_string(&body.error).unwrap_or_default())]
    Api { status: u16, body: ErrorBody },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("response schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("content hash mismatch: expected {expected}, got {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("not logged in")]
    NotLoggedIn,
}

impl ClientError {
    pub fn kind(&self) -> Option<ErrorKind> {
        match self {
            ClientError::Api { body, .. } => Some(body.error),
            _ => None,
        }
    }

    /// Connection-level failures worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Transport(_) | ClientError::HashMismatch { .. } => true,
            ClientError::Api { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// A downloaded, hash-verified policy snapshot.
#[derive(Debug, Clone)]
pub struct PolicyDownload {
    pub policy_id: u64,
    pub content_hash: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct FleetClient {
    base: String,
    http: Client,
    token: Option<String>,
    pub worker_id: Option<String>,
}

impl FleetClient {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let http = Client::builder().timeout(Duration::from_secs(120)).connect_timeout(Duration::from_secs(5)).build()?;
        Ok(Self { base: base.trim_end_matches('/').to_string(), http, token: None, worker_id: None })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn authed(&self, rb: RequestBuilder) -> Result<RequestBuilder, ClientError> {
        let t = self.token.as_ref().ok_or(ClientError::NotLoggedIn)?;
        Ok(rb.bearer_auth(t))
    }

    fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let bytes = resp.bytes()?;
        let body = serde_json::from_slice::<ErrorBody>(&bytes).unwrap_or_else(|_| ErrorBody {
            error: if status.is_server_error() { ErrorKind::StorageFailed } else { ErrorKind::BadRequest },
            message: String::from_utf8_lossy(&bytes).into_owned(),
            violations: Vec::new(),
        });
        Err(ClientError::Api { status: status.as_u16(), body })
    }

    fn json<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        let bytes = Self::check(resp)?.bytes()?;
        Ok(wire::decode(&bytes)?)
    }

    fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let rb = self.authed(self.http.post(self.url(path)))?;
        Self::json(rb.header("content-type", "application/json").body(wire::encode(body)).send()?)
    }

    pub fn login(&mut self, username: &str, password: &str) -> Result<LoginResponse, ClientError> {
        let body = LoginRequest { username: username.into(), password: password.into() };
        let resp = self.http.post(self.url("/v1/auth/login")).header("content-type", "application/json").body(wire::encode(&body)).send()?;
        let r: LoginResponse = Self::json(resp)?;
        self.token = Some(r.token.clone());
        self.worker_id = Some(r.worker_id.clone());
        Ok(r)
    }

    pub fn list_requests(&self) -> Result<Vec<RecordingRequest>, ClientError> {
        let r: RequestList = Self::json(self.authed(self.http.get(self.url("/v1/requests")))?.send()?)?;
        Ok(r.requests)
    }

    pub fn create_request(&self, req: &CreateRequest) -> Result<RecordingRequest, ClientError> {
        self.post_json("/v1/requests", req)
    }

    pub fn claim(&self, request_id: &str) -> Result<Claim, ClientError> {
        let rb = self.authed(self.http.post(self.url(&format!("/v1/requests/{request_id}/claim"))))?;
        let r: ClaimResponse = Self::json(rb.send()?)?;
        Ok(r.claim)
    }

    pub fn renew(&self, claim: &Claim) -> Result<Claim, ClientError> {
        let r: ClaimResponse =
            self.post_json(&format!("/v1/requests/{}/renew", claim.request_id), &ReleaseRequest { claim_id: claim.claim_id.clone() })?;
        Ok(r.claim)
    }

    pub fn release(&self, claim: &Claim) -> Result<(), ClientError> {
        let rb = self.authed(self.http.post(self.url(&format!("/v1/requests/{}/release", claim.request_id))))?;
        let body = wire::encode(&ReleaseRequest { claim_id: claim.claim_id.clone() });
        Self::check(rb.header("content-type", "application/json").body(body).send()?)?;
        Ok(())
    }

    pub fn upload(&self, claim: &Claim, episode: Vec<u8>) -> Result<UploadResponse, ClientError> {
        let meta = UploadMetadata { claim_id: claim.claim_id.clone(), request_id: claim.request_id.clone() };
        let form = multipart::Form::new()
            .part("metadata", multipart::Part::bytes(wire::encode(&meta)).mime_str("application/json")?)
            .part("episode", multipart::Part::bytes(episode).file_name("episode.jsonl").mime_str("application/x-ndjson")?);
        let rb = self.authed(self.http.post(self.url("/v1/recordings")))?;
        Self::json(rb.multipart(form).send()?)
    }

    /// Recording bytes, verified against the server's content hash.
    pub fn recording(&self, recording_id: &str) -> Result<Vec<u8>, ClientError> {
        let rb = self.authed(self.http.get(self.url(&format!("/v1/recordings/{recording_id}"))))?;
        let resp = Self::check(rb.send()?)?;
        let expected = header(&resp, CONTENT_HASH_HEADER);
        let bytes = resp.bytes()?.to_vec();
        if let Some(expected) = expected {
            let actual = hex32(&sha256(&bytes));
            if actual != expected {
                return Err(ClientError::HashMismatch { expected, actual });
            }
        }
        Ok(bytes)
    }

    pub fn publish_policy(&self, bytes: Vec<u8>) -> Result<PublishResponse, ClientError> {
        let rb = self.authed(self.http.post(self.url("/v1/policies")))?;
        Self::json(rb.header("content-type", "application/octet-stream").body(bytes).send()?)
    }

    /// Downloads a snapshot; `None` fetches the latest. The bytes must parse and
    /// hash to `expected_hash` (or to the server's header when none is given).
    pub fn policy(&self, policy_id: Option<u64>, expected_hash: Option<&str>) -> Result<PolicyDownload, ClientError> {
        let id = policy_id.map_or_else(|| "latest".to_string(), |i| i.to_string());
        let rb = self.authed(self.http.get(self.url(&format!("/v1/policies/{id}"))))?;
        let resp = Self::check(rb.send()?)?;
        let header_hash = header(&resp, CONTENT_HASH_HEADER).unwrap_or_default();
        let policy_id = header(&resp, POLICY_ID_HEADER).and_then(|v| v.parse().ok()).or(policy_id).unwrap_or(0);
        let bytes = resp.bytes()?.to_vec();
        let expected = expected_hash.map_or(header_hash, str::to_owned);
        let actual = match fleetnav_core::policy::PolicySnapshot::from_bytes(&bytes) {
            Ok(s) => s.hash_hex(),
            Err(_) => String::from("unparseable"),
        };
        if actual != expected {
            return Err(ClientError::HashMismatch { expected, actual });
        }
        Ok(PolicyDownload { policy_id, content_hash: actual, bytes })
    }

    pub fn events(&self, since: u64, timeout_ms: u64) -> Result<EventsResponse, ClientError> {
        let rb = self.authed(self.http.get(self.url("/v1/events")))?;
        let rb = rb.query(&[("since", since), ("timeout_ms", timeout_ms)]).timeout(Duration::from_millis(timeout_ms + 30_000));
        Self::json(rb.send()?)
    }

    pub fn stats(&self) -> Result<StatsResponse, ClientError> {
        Self::json(self.authed(self.http.get(self.url("/v1/stats/workers")))?.send()?)
    }

    pub fn health(&self) -> bool {
        self.http.get(self.url("/healthz")).timeout(Duration::from_secs(2)).send().is_ok_and(|r| r.status() == StatusCode::OK)
    }
}

fn header(resp: &Response, name: &str) -> Option<String> {
    resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_owned)
}
