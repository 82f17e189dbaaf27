//! Durable server state: a write-ahead journal plus an object directory.
//!
//! ```text
//! <dir>/secret.key                token signing key
//! <dir>/journal.wal               [u32 len][u32 crc32][json entry] ...
//! <dir>/objects/recordings/<id>.jsonl
//! <dir>/objects/policies/<id>.bin
//! <dir>/tmp/                      staging for atomic renames
//! ```
//!
//! Objects are staged, fsynced, and renamed into place before the journal entry
//! that references them is appended. Recovery truncates a torn journal tail and
//! deletes objects no entry references, so a crash at any point leaves either the
//! whole recording or none of it.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fleetnav_core::episode::EpisodeLog;
use fleetnav_core::policy::{sha256, hex32, PolicySnapshot};
use fleetnav_core::protocol::{
    transition, Action, Claim, EventKind, FleetEvent, ProtocolError, RecordingRequest, RequestState, RequestView,
    DEFAULT_LEASE_MS,
};

use crate::api::{
    CreateRequest, LoginResponse, PublishResponse, Role, UploadMetadata, UploadResponse, WorkerStats, MAX_UPLOAD_BYTES,
};
use crate::auth::{AuthError, Credential, TokenClaims, TokenSigner, DEFAULT_TOKEN_TTL_MS};
use crate::crash;

/// Minimum recorded start-goal separation accepted on upload (m).
pub const MIN_START_GOAL_DISTANCE: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("validation failed")]
    ValidationFailed(Vec<String>),
    #[error("forbidden: {0}")]
    Forbidden(&'static str),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("journal corrupt at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub lease_ms: u64,
    pub token_ttl_ms: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { lease_ms: DEFAULT_LEASE_MS, token_ttl_ms: DEFAULT_TOKEN_TTL_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub username: String,
    pub worker_id: String,
    pub role: Role,
    pub credential: Credential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: String,
    pub request_id: String,
    pub claim_id: String,
    pub worker_id: String,
    pub policy_id: Option<u64>,
    pub step_count: u32,
    pub duration_s: f64,
    pub content_hash: String,
    pub size: u64,
    pub uploaded_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub policy_id: u64,
    pub content_hash: String,
    pub size: u64,
    pub published_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalOp {
    Account(Account),
    Recording(RecordingMeta),
    Policy(PolicyMeta),
    Event(FleetEvent),
}

/// One atomic journal record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    ops: Vec<JournalOp>,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    journal: File,
    config: StoreConfig,
    signer: TokenSigner,
    accounts: BTreeMap<String, Account>,
    events: Vec<FleetEvent>,
    view: RequestView,
    recordings: BTreeMap<String, RecordingMeta>,
    recording_by_claim: HashMap<String, String>,
    policies: BTreeMap<u64, PolicyMeta>,
    policy_by_hash: HashMap<String, u64>,
    next_request: u64,
    next_recording: u64,
    claim_nonce: u64,
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

/// Writes `bytes` to `dest` via a staged file and rename.
pub(crate) fn write_atomic(tmp_dir: &Path, dest: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = tmp_dir.join(format!("{name}.{}.tmp", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dest)?;
    if let Some(parent) = dest.parent() {
        sync_dir(parent)?;
    }
    Ok(())
}

fn frame(entry: &Entry) -> Vec<u8> {
    let payload = serde_json::to_vec(entry).expect("journal entries serialize");
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Parses complete records; returns them with the length of the valid prefix.
fn read_journal(bytes: &[u8]) -> (Vec<Entry>, usize) {
    let mut entries = Vec::new();
    let mut pos = 0;
    while bytes.len() - pos >= 8 {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes"));
        let Some(payload) = bytes.get(pos + 8..pos + 8 + len) else { break };
        if crc32fast::hash(payload) != crc {
            break;
        }
        let Ok(entry) = serde_json::from_slice::<Entry>(payload) else { break };
        entries.push(entry);
        pos += 8 + len;
    }
    (entries, pos)
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>, config: StoreConfig) -> Result<Self, StoreError> {
        let dir = dir.into();
        for sub in ["objects/recordings", "objects/policies", "tmp"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for e in fs::read_dir(dir.join("tmp"))? {
            fs::remove_file(e?.path())?;
        }
        let key_path = dir.join("secret.key");
        let signer = match fs::read(&key_path) {
            Ok(k) if k.len() == 32 => TokenSigner::new(k),
            Ok(_) => return Err(StoreError::Corrupt { offset: 0, message: "secret.key has the wrong length".into() }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let s = TokenSigner::random();
                write_atomic(&dir.join("tmp"), &key_path, s.key())?;
                s
            }
            Err(e) => return Err(e.into()),
        };
        let journal_path = dir.join("journal.wal");
        let mut bytes = Vec::new();
        if journal_path.exists() {
            File::open(&journal_path)?.read_to_end(&mut bytes)?;
        }
        let (entries, valid) = read_journal(&bytes);
        let journal = OpenOptions::new().create(true).read(true).append(true).open(&journal_path)?;
        if valid < bytes.len() {
            tracing::warn!(valid, total = bytes.len(), "truncating torn journal tail");
            journal.set_len(valid as u64)?;
            journal.sync_all()?;
        }
        sync_dir(&dir)?;
        let mut store = Self {
            dir,
            journal,
            config,
            signer,
            accounts: BTreeMap::new(),
            events: Vec::new(),
            view: RequestView::default(),
            recordings: BTreeMap::new(),
            recording_by_claim: HashMap::new(),
            policies: BTreeMap::new(),
            policy_by_hash: HashMap::new(),
            next_request: 1,
            next_recording: 1,
            claim_nonce: rand::random::<u64>() >> 16,
        };
        for (i, entry) in entries.into_iter().enumerate() {
            for op in entry.ops {
                store.apply(op).map_err(|m| StoreError::Corrupt { offset: i as u64, message: m })?;
            }
        }
        store.remove_orphans()?;
        Ok(store)
    }

    fn apply(&mut self, op: JournalOp) -> Result<(), String> {
        match op {
            JournalOp::Account(a) => {
                self.accounts.insert(a.username.clone(), a);
            }
            JournalOp::Recording(m) => {
                let n = m.recording_id.strip_prefix("rec-").and_then(|s| s.parse::<u64>().ok()).unwrap_or(0);
                self.next_recording = self.next_recording.max(n + 1);
                self.recording_by_claim.insert(m.claim_id.clone(), m.recording_id.clone());
                self.recordings.insert(m.recording_id.clone(), m);
            }
            JournalOp::Policy(p) => {
                self.policy_by_hash.insert(p.content_hash.clone(), p.policy_id);
                self.policies.insert(p.policy_id, p);
            }
            JournalOp::Event(ev) => {
                if let Some(r) = &ev.request {
                    let n = r.request_id.strip_prefix("req-").and_then(|s| s.parse::<u64>().ok()).unwrap_or(0);
                    self.next_request = self.next_request.max(n + 1);
                }
                self.view.apply(&ev).map_err(|e| e.to_string())?;
                self.events.push(ev);
            }
        }
        Ok(())
    }

    fn remove_orphans(&self) -> io::Result<()> {
        for e in fs::read_dir(self.dir.join("objects/recordings"))? {
            let p = e?.path();
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if !self.recordings.contains_key(&id) {
                tracing::warn!(path = %p.display(), "removing unreferenced recording object");
                fs::remove_file(&p)?;
            }
        }
        for e in fs::read_dir(self.dir.join("objects/policies"))? {
            let p = e?.path();
            let id = p.file_stem().and_then(|s| s.to_string_lossy().parse::<u64>().ok());
            if id.is_none_or(|id| !self.policies.contains_key(&id)) {
                tracing::warn!(path = %p.display(), "removing unreferenced policy object");
                fs::remove_file(&p)?;
            }
        }
        Ok(())
    }

    /// Appends one entry durably, then applies it.
    fn commit(&mut self, ops: Vec<JournalOp>) -> Result<(), StoreError> {
        let bytes = frame(&Entry { ops: ops.clone() });
        if crash::armed("journal.torn") {
            self.journal.write_all(&bytes[..bytes.len() / 2])?;
            self.journal.sync_data()?;
            std::process::abort();
        }
        self.journal.write_all(&bytes)?;
        self.journal.sync_data()?;
        for op in ops {
            self.apply(op).map_err(|m| StoreError::Corrupt { offset: 0, message: m })?;
        }
        Ok(())
    }

    fn event(&self, offset: u64, kind: EventKind, now: u64) -> FleetEvent {
        FleetEvent::new(self.view.last_cursor + offset, now, kind)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn last_cursor(&self) -> u64 {
        self.view.last_cursor
    }

    /// Adds an account; an existing username keeps its original credential.
    pub fn add_account(&mut self, username: &str, password: &str, role: Role) -> Result<String, StoreError> {
        if let Some(a) = self.accounts.get(username) {
            return Ok(a.worker_id.clone());
        }
        if username.is_empty() || username.len() > 64 || !username.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(StoreError::BadRequest("usernames are 1-64 characters of [A-Za-z0-9-_.]".into()));
        }
        let a = Account { username: username.into(), worker_id: username.into(), role, credential: Credential::new(password) };
        let id = a.worker_id.clone();
        self.commit(vec![JournalOp::Account(a)])?;
        Ok(id)
    }

    pub fn login(&self, username: &str, password: &str, now: u64) -> Result<LoginResponse, StoreError> {
        // hash against a dummy credential for unknown users to keep timing uniform
        let dummy = Credential::with_salt("", &[0u8; 16]);
        let (cred, account) = match self.accounts.get(username) {
            Some(a) => (&a.credential, Some(a)),
            None => (&dummy, None),
        };
        let ok = cred.verify(password);
        let a = match (ok, account) {
            (true, Some(a)) => a,
            _ => return Err(AuthError::AuthFailed.into()),
        };
        let claims = TokenClaims { worker_id: a.worker_id.clone(), role: a.role, expires_at_ms: now + self.config.token_ttl_ms };
        Ok(LoginResponse { token: self.signer.issue(&claims), worker_id: a.worker_id.clone(), role: a.role, expires_at_ms: claims.expires_at_ms })
    }

    pub fn authenticate(&self, token: &str, now: u64) -> Result<TokenClaims, StoreError> {
        let c = self.signer.verify(token, now)?;
        if !self.accounts.values().any(|a| a.worker_id == c.worker_id) {
            return Err(AuthError::InvalidToken.into());
        }
        Ok(c)
    }

    pub fn signer(&self) -> &TokenSigner {
        &self.signer
    }

    /// Requests the worker may see: open or claimed, never completed.
    pub fn list_requests(&self, worker_id: &str) -> Vec<RecordingRequest> {
        self.view.requests.values().filter(|r| r.state != RequestState::Completed && r.permits(worker_id)).cloned().collect()
    }

    pub fn request(&self, request_id: &str) -> Option<&RecordingRequest> {
        self.view.requests.get(request_id)
    }

    pub fn requests(&self) -> &BTreeMap<String, RecordingRequest> {
        &self.view.requests
    }

    pub fn create_request(&mut self, req: CreateRequest, now: u64) -> Result<RecordingRequest, StoreError> {
        let id = format!("req-{:08}", self.next_request);
        let mut r = RecordingRequest::new(id, req.task, now);
        r.permitted_workers = req.permitted_workers;
        if r.task.controller == fleetnav_core::episode::Controller::Policy {
            let meta = match req.policy_id {
                Some(p) => self.policies.get(&p),
                None => self.policies.values().next_back(),
            }
            .ok_or_else(|| StoreError::NotFound("policy".into()))?;
            r.policy_id = Some(meta.policy_id);
            r.policy_uri = Some(format!("/v1/policies/{}", meta.policy_id));
            r.policy_hash = Some(meta.content_hash.clone());
        }
        let mut ev = self.event(1, EventKind::RequestCreated, now);
        ev.request_id = Some(r.request_id.clone());
        ev.request = Some(r.clone());
        self.commit(vec![JournalOp::Event(ev)])?;
        Ok(r)
    }

    fn live_request(&self, request_id: &str) -> Result<&RecordingRequest, StoreError> {
        self.view.requests.get(request_id).ok_or_else(|| StoreError::NotFound(format!("request {request_id}")))
    }

    pub fn claim(&mut self, request_id: &str, worker_id: &str, now: u64) -> Result<Claim, StoreError> {
        self.claim_nonce += 1;
        let req = self.live_request(request_id)?;
        let claim_id = format!("clm-{:012x}{:06x}", self.claim_nonce, self.view.last_cursor & 0xff_ffff);
        let next = transition(req, &Action::Claim { worker_id: worker_id.into(), claim_id, now_ms: now, lease_ms: self.config.lease_ms })?;
        let claim = next.claim.clone().expect("claimed requests carry a claim");
        let mut ev = self.event(1, EventKind::RequestClaimed, now);
        ev.request_id = Some(request_id.into());
        ev.claim = Some(claim.clone());
        ev.worker_id = Some(worker_id.into());
        self.commit(vec![JournalOp::Event(ev)])?;
        Ok(claim)
    }

    pub fn renew(&mut self, request_id: &str, claim_id: &str, worker_id: &str, now: u64) -> Result<Claim, StoreError> {
        let req = self.live_request(request_id)?;
        let next = transition(
            req,
            &Action::Renew { claim_id: claim_id.into(), worker_id: worker_id.into(), now_ms: now, lease_ms: self.config.lease_ms },
        )?;
        let claim = next.claim.clone().expect("renewed requests carry a claim");
        let mut ev = self.event(1, EventKind::RequestClaimed, now);
        ev.request_id = Some(request_id.into());
        ev.claim = Some(claim.clone());
        ev.worker_id = Some(worker_id.into());
        self.commit(vec![JournalOp::Event(ev)])?;
        Ok(claim)
    }

    /// Cancels the caller's claim and reopens the request.
    pub fn release(&mut self, request_id: &str, claim_id: &str, worker_id: &str, now: u64) -> Result<(), StoreError> {
        let req = self.live_request(request_id)?;
        if req.claim.as_ref().is_some_and(|c| c.worker_id != worker_id) {
            return Err(ProtocolError::ClaimInvalid.into());
        }
        transition(req, &Action::Cancel { claim_id: claim_id.into() })?;
        let mut ev = self.event(1, EventKind::RequestReleased, now);
        ev.request_id = Some(request_id.into());
        ev.worker_id = Some(worker_id.into());
        self.commit(vec![JournalOp::Event(ev)])?;
        Ok(())
    }

    pub fn upload(&mut self, meta: &UploadMetadata, worker_id: &str, bytes: &[u8], now: u64) -> Result<UploadResponse, StoreError> {
        if let Some(id) = self.recording_by_claim.get(&meta.claim_id) {
            let rec = &self.recordings[id];
            if rec.worker_id != worker_id {
                return Err(ProtocolError::ClaimInvalid.into());
            }
            return Ok(UploadResponse { recording_id: id.clone(), duplicate: true });
        }
        if bytes.len() > MAX_UPLOAD_BYTES {
            return Err(StoreError::ValidationFailed(vec![format!("upload of {} bytes exceeds the {MAX_UPLOAD_BYTES} byte cap", bytes.len())]));
        }
        let log = EpisodeLog::from_jsonl(bytes).map_err(|e| StoreError::ValidationFailed(vec![e.to_string()]))?;
        let mut violations: Vec<String> = log.validate(MIN_START_GOAL_DISTANCE).iter().map(|v| format!("{v:?}")).collect();
        if log.header.request_id != meta.request_id {
            violations.push(format!("log request_id {} does not match {}", log.header.request_id, meta.request_id));
        }
        if !violations.is_empty() {
            return Err(StoreError::ValidationFailed(violations));
        }
        let req = self.live_request(&meta.request_id)?;
        match &req.claim {
            Some(c) if c.claim_id == meta.claim_id && c.worker_id == worker_id && c.is_live(now) => {}
            _ => return Err(ProtocolError::ClaimInvalid.into()),
        }
        let recording_id = format!("rec-{:08}", self.next_recording);
        transition(req, &Action::Complete { claim_id: meta.claim_id.clone(), recording_id: recording_id.clone(), now_ms: now })?;
        let policy_id = req.policy_id;
        let path = self.dir.join("objects/recordings").join(format!("{recording_id}.jsonl"));
        write_atomic(&self.dir.join("tmp"), &path, bytes)?;
        crash::point("upload.object_written");
        let rec = RecordingMeta {
            recording_id: recording_id.clone(),
            request_id: meta.request_id.clone(),
            claim_id: meta.claim_id.clone(),
            worker_id: worker_id.into(),
            policy_id,
            step_count: log.footer.step_count,
            duration_s: log.footer.duration_s,
            content_hash: hex32(&sha256(bytes)),
            size: bytes.len() as u64,
            uploaded_at_ms: now,
        };
        let mut done = self.event(1, EventKind::RequestCompleted, now);
        done.request_id = Some(meta.request_id.clone());
        done.recording_id = Some(recording_id.clone());
        done.worker_id = Some(worker_id.into());
        let mut up = self.event(2, EventKind::RecordingUploaded, now);
        up.request_id = Some(meta.request_id.clone());
        up.recording_id = Some(recording_id.clone());
        up.worker_id = Some(worker_id.into());
        up.policy_id = policy_id;
        up.duration_s = Some(log.footer.duration_s);
        up.content_hash = Some(rec.content_hash.clone());
        self.commit(vec![JournalOp::Recording(rec), JournalOp::Event(done), JournalOp::Event(up)])?;
        crash::point("upload.committed");
        Ok(UploadResponse { recording_id, duplicate: false })
    }

    pub fn recording(&self, id: &str) -> Result<(RecordingMeta, Vec<u8>), StoreError> {
        let meta = self.recordings.get(id).ok_or_else(|| StoreError::NotFound(format!("recording {id}")))?;
        let bytes = fs::read(self.dir.join("objects/recordings").join(format!("{id}.jsonl")))?;
        Ok((meta.clone(), bytes))
    }

    pub fn recordings(&self) -> &BTreeMap<String, RecordingMeta> {
        &self.recordings
    }

    /// Registers a snapshot under its own id; re-publishing identical content is a no-op.
    pub fn publish_policy(&mut self, bytes: &[u8], now: u64) -> Result<PublishResponse, StoreError> {
        let snap = PolicySnapshot::from_bytes(bytes).map_err(|e| StoreError::ValidationFailed(vec![e.to_string()]))?;
        let hash = snap.hash_hex();
        if let Some(&id) = self.policy_by_hash.get(&hash) {
            return Ok(PublishResponse { policy_id: id, content_hash: hash, existing: true });
        }
        let latest = self.policies.keys().next_back().copied().unwrap_or(0);
        if snap.policy_id <= latest {
            return Err(StoreError::BadRequest(format!("policy id {} is not above the latest id {latest}", snap.policy_id)));
        }
        let path = self.dir.join("objects/policies").join(format!("{}.bin", snap.policy_id));
        write_atomic(&self.dir.join("tmp"), &path, bytes)?;
        let meta = PolicyMeta { policy_id: snap.policy_id, content_hash: hash.clone(), size: bytes.len() as u64, published_at_ms: now };
        let mut ev = self.event(1, EventKind::PolicyPublished, now);
        ev.policy_id = Some(snap.policy_id);
        ev.content_hash = Some(hash.clone());
        self.commit(vec![JournalOp::Policy(meta), JournalOp::Event(ev)])?;
        Ok(PublishResponse { policy_id: snap.policy_id, content_hash: hash, existing: false })
    }

    /// `None` selects the latest policy.
    pub fn policy(&self, id: Option<u64>) -> Result<(PolicyMeta, Vec<u8>), StoreError> {
        let meta = match id {
            Some(id) => self.policies.get(&id),
            None => self.policies.values().next_back(),
        }
        .ok_or_else(|| StoreError::NotFound("policy".into()))?;
        let bytes = fs::read(self.dir.join("objects/policies").join(format!("{}.bin", meta.policy_id)))?;
        Ok((meta.clone(), bytes))
    }

    pub fn latest_policy_id(&self) -> Option<u64> {
        self.policies.keys().next_back().copied()
    }

    /// Events with cursor above `since`, at most `limit`.
    pub fn events_since(&self, since: u64, limit: usize) -> Vec<FleetEvent> {
        let start = since.min(self.events.len() as u64) as usize;
        self.events[start..].iter().take(limit).cloned().collect()
    }

    pub fn events(&self) -> &[FleetEvent] {
        &self.events
    }

    /// Per-worker totals, aggregated from the stored recordings; every account appears.
    pub fn worker_stats(&self) -> Vec<WorkerStats> {
        let mut by: BTreeMap<&str, (u64, f64)> = self.accounts.values().map(|a| (a.worker_id.as_str(), (0, 0.0))).collect();
        for r in self.recordings.values() {
            let e = by.entry(r.worker_id.as_str()).or_default();
            e.0 += 1;
            e.1 += r.duration_s;
        }
        by.into_iter()
            .map(|(w, (n, d))| WorkerStats { worker_id: w.into(), recording_count: n, total_recorded_duration_s: d })
            .collect()
    }

    /// Consistency audit used after crash recovery: every recording object is
    /// referenced and intact, and every completed request has its recording.
    pub fn audit(&self) -> Result<(), String> {
        let replayed = RequestView::replay(&self.events).map_err(|e| e.to_string())?;
        if replayed != self.view {
            return Err("event replay disagrees with request state".into());
        }
        for (id, m) in &self.recordings {
            let bytes = fs::read(self.dir.join("objects/recordings").join(format!("{id}.jsonl"))).map_err(|e| format!("{id}: {e}"))?;
            if hex32(&sha256(&bytes)) != m.content_hash {
                return Err(format!("{id}: content hash mismatch"));
            }
        }
        for e in &self.events {
            if e.kind == EventKind::RequestCompleted {
                let rid = e.recording_id.as_deref().unwrap_or_default();
                if !self.recordings.contains_key(rid) {
                    return Err(format!("completed request {:?} lacks recording {rid}", e.request_id));
                }
            }
        }
        let on_disk = fs::read_dir(self.dir.join("objects/recordings")).map_err(|e| e.to_string())?.count();
        if on_disk != self.recordings.len() {
            return Err(format!("{on_disk} recording objects for {} recordings", self.recordings.len()));
        }
        Ok(())
    }
}
