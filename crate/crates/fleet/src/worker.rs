//! Headless fleet worker: poll, claim, fetch policy, roll out, upload.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fleetnav_core::env::{generate_layout, GenConfig};
use fleetnav_core::episode::Controller;
use fleetnav_core::expert::ExpertPlanner;
use fleetnav_core::policy::PolicySnapshot;
use fleetnav_core::protocol::{Claim, RecordingRequest};
use fleetnav_core::rng::CounterRng;
use fleetnav_core::rollout::{rollout, ActorDriver, ExpertDriver, RolloutMeta};
use fleetnav_core::sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::api::ErrorKind;
use crate::client::{ClientError, FleetClient};
use crate::store::now_ms;

pub const BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const BACKOFF_CAP: Duration = Duration::from_secs(60);
/// Download attempts before a request with a corrupt policy is given back.
const POLICY_FETCH_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerConfig {
    pub server: String,
    pub username: String,
    #[serde(skip_serializing)]
    pub password: String,
    pub sim: SimConfig,
    /// Generator for requests that carry only a seed.
    pub gen: GenConfig,
    pub poll_interval_ms: u64,
    pub slots: usize,
    /// Seed for simulator noise and policy sampling.
    pub seed: u64,
    /// Also run expert-controller requests with the scripted planner.
    pub run_expert_tasks: bool,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            server: "http://127.0.0.1:8080".into(),
            username: String::new(),
            password: String::new(),
            sim: SimConfig::default(),
            gen: GenConfig::default(),
            poll_interval_ms: 500,
            slots: 1,
            seed: 0,
            run_expert_tasks: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    /// Credentials rejected; the worker stops.
    #[error("authentication failed: {0}")]
    FatalAuth(ClientError),
    #[error("invalid worker config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Transient(ClientError),
    #[error("episode failed: {0}")]
    Episode(String),
}

impl From<ClientError> for WorkerError {
    fn from(e: ClientError) -> Self {
        match e.kind() {
            Some(ErrorKind::AuthFailed) => WorkerError::FatalAuth(e),
            _ => WorkerError::Transient(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleReport {
    /// Nothing claimable right now.
    Idle,
    Uploaded { request_id: String, recording_id: String, steps: u32, duplicate: bool },
    /// Another worker won the claim race.
    Lost { request_id: String },
    /// Work was given back (released, or left to expire).
    Abandoned { request_id: String, reason: String },
}

/// Per-slot worker state: a logged-in client, a policy cache, and an RNG stream.
pub struct Worker {
    pub config: WorkerConfig,
    client: FleetClient,
    policies: HashMap<u64, Arc<PolicySnapshot>>,
    rng: CounterRng,
    slot: usize,
}

impl Worker {
    pub fn new(config: WorkerConfig, slot: usize) -> Result<Self, WorkerError> {
        if config.slots == 0 {
            return Err(WorkerError::Config("slots must be at least 1"));
        }
        let client = FleetClient::new(&config.server).map_err(WorkerError::Transient)?;
        let rng = CounterRng::new(config.seed ^ (slot as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Ok(Self { config, client, policies: HashMap::new(), rng, slot })
    }

    pub fn client(&self) -> &FleetClient {
        &self.client
    }

    pub fn login(&mut self) -> Result<(), WorkerError> {
        self.client.login(&self.config.username, &self.config.password)?;
        Ok(())
    }

    /// Re-authenticates on an expired token, then retries `f` once.
    fn with_auth<T>(&mut self, f: impl Fn(&FleetClient) -> Result<T, ClientError>) -> Result<T, WorkerError> {
        match f(&self.client) {
            Err(e) if matches!(e.kind(), Some(ErrorKind::AuthExpired | ErrorKind::Unauthorized)) || matches!(e, ClientError::NotLoggedIn) => {
                self.login()?;
                Ok(f(&self.client)?)
            }
            r => Ok(r?),
        }
    }

    fn runnable(&self, r: &RecordingRequest) -> bool {
        match r.task.controller {
            Controller::Policy => true,
            Controller::Expert => self.config.run_expert_tasks,
            Controller::Teleop => false,
        }
    }

    fn fetch_policy(&mut self, req: &RecordingRequest) -> Result<Arc<PolicySnapshot>, WorkerError> {
        let id = req.policy_id;
        if let Some(p) = id.and_then(|i| self.policies.get(&i)) {
            return Ok(p.clone());
        }
        let mut last = None;
        for _ in 0..POLICY_FETCH_ATTEMPTS {
            match self.with_auth(|c| c.policy(id, req.policy_hash.as_deref())) {
                Ok(d) => {
                    let snap = PolicySnapshot::from_bytes(&d.bytes).map_err(|e| WorkerError::Episode(e.to_string()))?;
                    let snap = Arc::new(snap);
                    self.policies.insert(d.policy_id, snap.clone());
                    return Ok(snap);
                }
                Err(WorkerError::Transient(e @ ClientError::HashMismatch { .. })) => {
                    tracing::warn!(slot = self.slot, error = %e, "policy hash mismatch; refetching");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(WorkerError::Transient(last.expect("loop ran")))
    }

    /// One poll-claim-rollout-upload pass.
    pub fn run_collect_cycle(&mut self) -> Result<CycleReport, WorkerError> {
        let now = now_ms();
        let worker_id = self.client.worker_id.clone().unwrap_or_default();
        let requests = self.with_auth(|c| c.list_requests())?;
        let Some(req) = requests.into_iter().find(|r| r.is_claimable(now) && r.permits(&worker_id) && self.runnable(r)) else {
            return Ok(CycleReport::Idle);
        };
        let claim = match self.with_auth(|c| c.claim(&req.request_id)) {
            Ok(c) => c,
            Err(WorkerError::Transient(e)) if matches!(e.kind(), Some(ErrorKind::Conflict | ErrorKind::NotPermitted | ErrorKind::NotFound)) => {
                return Ok(CycleReport::Lost { request_id: req.request_id });
            }
            Err(e) => return Err(e),
        };
        match self.run_claimed(&req, &claim, &worker_id) {
            Ok(r) => Ok(r),
            Err(e @ WorkerError::FatalAuth(_)) => Err(e),
            Err(e) => {
                // give the request back; if even that fails the lease expires on its own
                if let Err(re) = self.client.release(&claim) {
                    tracing::warn!(slot = self.slot, request_id = %req.request_id, error = %re, "release failed; claim will expire");
                }
                match e {
                    WorkerError::Transient(_) => Err(e),
                    other => Ok(CycleReport::Abandoned { request_id: req.request_id, reason: other.to_string() }),
                }
            }
        }
    }

    fn run_claimed(&mut self, req: &RecordingRequest, claim: &Claim, worker_id: &str) -> Result<CycleReport, WorkerError> {
        let gen = req.task.gen_config.clone().unwrap_or_else(|| self.config.gen.clone());
        let layout = generate_layout(&gen, req.task.layout_seed).map_err(|e| WorkerError::Episode(e.to_string()))?;
        let sim_seed = self.rng.next_u64();
        let meta = RolloutMeta {
            worker_id: worker_id.into(),
            request_id: req.request_id.clone(),
            policy_id: req.policy_id,
            controller: req.task.controller,
            start_time_ms: now_ms(),
            record_true_pose: true,
        };
        let started = Instant::now();
        let (mut log, outcome) = match req.task.controller {
            Controller::Expert => {
                let mut d = ExpertDriver { planner: ExpertPlanner::new(&layout, self.config.sim.robot_radius, 0.1) };
                rollout(&layout, &self.config.sim, sim_seed, &mut d, &meta)
            }
            _ => {
                let snap = self.fetch_policy(req)?;
                let mut rng = self.rng.split(sim_seed);
                let mut d = ActorDriver::stochastic(&snap, &mut rng);
                rollout(&layout, &self.config.sim, sim_seed, &mut d, &meta)
            }
        }
        .map_err(|e| WorkerError::Episode(e.to_string()))?;
        log.footer.wall_duration_s = started.elapsed().as_secs_f64();
        let violations = log.validate(crate::store::MIN_START_GOAL_DISTANCE);
        if !violations.is_empty() {
            return Err(WorkerError::Episode(format!("log failed validation: {violations:?}")));
        }
        let bytes = log.to_jsonl();
        let r = self.upload_until_expiry(claim, bytes)?;
        match r {
            Some(up) => Ok(CycleReport::Uploaded {
                request_id: req.request_id.clone(),
                recording_id: up.recording_id,
                steps: outcome.steps,
                duplicate: up.duplicate,
            }),
            None => Ok(CycleReport::Abandoned { request_id: req.request_id.clone(), reason: "lease expired before upload".into() }),
        }
    }

    /// Retries transient upload failures with backoff until the claim's lease runs out.
    fn upload_until_expiry(&mut self, claim: &Claim, bytes: Vec<u8>) -> Result<Option<crate::api::UploadResponse>, WorkerError> {
        let mut backoff = Backoff::new();
        loop {
            match self.with_auth(|c| c.upload(claim, bytes.clone())) {
                Ok(r) => return Ok(Some(r)),
                Err(WorkerError::Transient(e)) if e.is_transient() => {
                    let wait = backoff.next_delay();
                    if now_ms() + wait.as_millis() as u64 >= claim.expires_at_ms {
                        tracing::warn!(slot = self.slot, request_id = %claim.request_id, error = %e, "upload abandoned at lease expiry; discarding episode");
                        return Ok(None);
                    }
                    tracing::warn!(slot = self.slot, error = %e, delay_ms = wait.as_millis() as u64, "upload failed; retrying");
                    std::thread::sleep(wait);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Exponential backoff from [`BACKOFF_BASE`] doubling to [`BACKOFF_CAP`].
#[derive(Debug, Clone)]
pub struct Backoff {
    next: Duration,
}

impl Backoff {
    pub fn new() -> Self {
        Self { next: BACKOFF_BASE }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(BACKOFF_CAP);
        d
    }

    pub fn reset(&mut self) {
        self.next = BACKOFF_BASE;
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new()
    }
}

/// Sleeps in short increments so a shutdown request is noticed promptly.
fn sleep_unless(stop: &AtomicBool, d: Duration) {
    let end = Instant::now() + d;
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= end {
            break;
        }
        std::thread::sleep((end - now).min(Duration::from_millis(50)));
    }
}

/// Runs one slot until `stop` is set, or, with `once`, until one request is
/// processed or nothing is claimable.
pub fn run_slot(config: WorkerConfig, slot: usize, once: bool, stop: Arc<AtomicBool>) -> Result<Vec<CycleReport>, WorkerError> {
    let mut worker = Worker::new(config, slot)?;
    let mut backoff = Backoff::new();
    let mut reports = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        let result = if worker.client.token().is_none() { worker.login().and_then(|_| worker.run_collect_cycle()) } else { worker.run_collect_cycle() };
        match result {
            Ok(r) => {
                backoff.reset();
                if let CycleReport::Uploaded { request_id, recording_id, steps, .. } = &r {
                    tracing::info!(slot, %request_id, %recording_id, steps, "uploaded recording");
                }
                let idle = r == CycleReport::Idle;
                // a lost race doesn't count as the one cycle
                let done = once && !matches!(r, CycleReport::Lost { .. });
                if !idle || once {
                    reports.push(r);
                }
                if done {
                    break;
                }
                if idle {
                    sleep_unless(&stop, Duration::from_millis(worker.config.poll_interval_ms));
                }
            }
            Err(e @ WorkerError::FatalAuth(_)) | Err(e @ WorkerError::Config(_)) => return Err(e),
            Err(e) => {
                if once {
                    return Err(e);
                }
                let d = backoff.next_delay();
                tracing::warn!(slot, error = %e, delay_ms = d.as_millis() as u64, "cycle failed; backing off");
                sleep_unless(&stop, d);
            }
        }
    }
    Ok(reports)
}

/// Runs `config.slots` independent slot loops and waits for them.
pub fn run_worker(config: WorkerConfig, once: bool, stop: Arc<AtomicBool>) -> Result<Vec<CycleReport>, WorkerError> {
    if config.slots == 0 {
        return Err(WorkerError::Config("slots must be at least 1"));
    }
    let handles: Vec<_> = (0..config.slots)
        .map(|slot| {
            let (c, s) = (config.clone(), stop.clone());
            std::thread::spawn(move || run_slot(c, slot, once, s))
        })
        .collect();
    let mut reports = Vec::new();
    let mut err = None;
    for h in handles {
        match h.join().expect("worker slot panicked") {
            Ok(r) => reports.extend(r),
            Err(e) => {
                stop.store(true, Ordering::Relaxed);
                err.get_or_insert(e);
            }
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok(reports),
    }
}
