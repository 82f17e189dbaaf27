//! Online learner service: posts recording requests, ingests uploads as they
//! arrive on the event stream, trains, and republishes the policy.
//!
//! Checkpoint directory layout:
//!
//! ```text
//! buffer.bin            replay buffer spill
//! learner_state.json    counters, cursor, request bookkeeping
//! weights/<net>.bin     little-endian f32 parameters of each network
//! diagnostics.csv       append-only training diagnostics
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use fleetnav_core::episode::EpisodeLog;
use fleetnav_core::learner::{Publisher, ReplayBuffer, SacDiagnostics};
use fleetnav_core::policy::{Mlp, PolicySnapshot};
use fleetnav_core::protocol::{EventKind, TaskDescriptor};
use fleetnav_core::train::{LayoutSource, TrainConfig, TrainError, Trainer};

use crate::api::{CreateRequest, ErrorKind};
use crate::client::{ClientError, FleetClient};
use crate::store::write_atomic;
use crate::worker::Backoff;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DIAGNOSTICS_HEADER: &str = "update,env_steps,recordings,policy_id,critic1_loss,critic2_loss,actor_loss,alpha,entropy,eval_sr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Simulator, layouts, SAC, and the number of recordings to ingest (`episodes`).
    pub train: TrainConfig,
    /// Requests kept open at once.
    pub outstanding: usize,
    /// Recordings ingested between republishes.
    pub publish_every: usize,
    pub poll_timeout_ms: u64,
    /// Recordings ingested between checkpoints; 0 checkpoints only at the end.
    pub checkpoint_every: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), outstanding: 8, publish_every: 25, poll_timeout_ms: 2_000, checkpoint_every: 100 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OnlineError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("recording {id} is malformed: {message}")]
    BadRecording { id: String, message: String },
}

impl From<std::io::Error> for OnlineError {
    fn from(e: std::io::Error) -> Self {
        OnlineError::Checkpoint(e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub format_version: u32,
    pub cursor: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub log_alpha: f64,
    pub policy_id: u64,
    pub requests_created: usize,
    /// Requests posted by this learner and not yet completed.
    pub outstanding: BTreeSet<String>,
    /// Recordings ingested, in order.
    pub ingested: Vec<String>,
    pub publishes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineReport {
    pub recordings: Vec<String>,
    pub publishes: Vec<u64>,
    pub transitions: usize,
    pub updates: u64,
    pub final_policy: u64,
}

pub struct LearnerService {
    pub config: OnlineConfig,
    client: FleetClient,
    pub trainer: Trainer,
    publisher: Publisher,
    layouts: LayoutSource,
    pub state: LearnerState,
    owned: HashSet<String>,
    checkpoint_dir: Option<PathBuf>,
    last_diag: Option<SacDiagnostics>,
}

fn nets(t: &Trainer) -> [(&'static str, &Mlp); 5] {
    let a = &t.agent;
    [("actor", &a.actor), ("critic1", &a.critic1), ("critic2", &a.critic2), ("target1", &a.target1), ("target2", &a.target2)]
}

fn weights_bytes(m: &Mlp) -> Vec<u8> {
    m.params().flat_map(|v| v.to_le_bytes()).collect()
}

fn load_weights(m: &mut Mlp, bytes: &[u8], name: &str) -> Result<(), OnlineError> {
    if bytes.len() != m.param_count() * 4 {
        return Err(OnlineError::Checkpoint(format!("{name}: {} bytes for {} parameters", bytes.len(), m.param_count())));
    }
    for (p, c) in m.params_mut().zip(bytes.chunks_exact(4)) {
        *p = f32::from_le_bytes(c.try_into().expect("4 bytes"));
    }
    Ok(())
}

impl LearnerService {
    /// `client` must be logged in with the learner role. Resumes from
    /// `checkpoint_dir` when it holds a checkpoint.
    pub fn new(config: OnlineConfig, client: FleetClient, initial: Option<&PolicySnapshot>, checkpoint_dir: Option<PathBuf>) -> Result<Self, OnlineError> {
        let t = &config.train;
        let mut trainer = match initial {
            Some(s) => Trainer::from_snapshot(s, t.sac.clone(), t.reward, t.replay_capacity, t.seed)?,
            None => Trainer::new(&t.sim, t.sac.clone(), t.reward, t.beta, t.replay_capacity, t.seed)?,
        };
        let mut state = LearnerState { format_version: CHECKPOINT_VERSION, ..LearnerState::default() };
        if let Some(dir) = &checkpoint_dir {
            if dir.join("learner_state.json").exists() {
                state = restore(dir, &mut trainer)?;
                tracing::info!(dir = %dir.display(), recordings = state.ingested.len(), "resumed learner checkpoint");
            }
        }
        let layouts = LayoutSource::new(&t.gen, t.layout_seed_base, t.pool_size, t.seed ^ state.requests_created as u64)?;
        let owned = state.outstanding.iter().cloned().collect();
        Ok(Self { config, client, trainer, publisher: Publisher::new(), layouts, state, owned, checkpoint_dir, last_diag: None })
    }

    pub fn client(&self) -> &FleetClient {
        &self.client
    }

    fn publish(&mut self) -> Result<u64, OnlineError> {
        if self.publisher.last().is_none() {
            // continue numbering after whatever the server already holds
            match self.client.policy(None, None) {
                Ok(d) => {
                    let s = PolicySnapshot::from_bytes(&d.bytes).map_err(|e| OnlineError::Checkpoint(e.to_string()))?;
                    self.publisher = Publisher::resume(s);
                }
                Err(e) if e.kind() == Some(ErrorKind::NotFound) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let snap = self.trainer.publish(&mut self.publisher)?;
        let mut backoff = Backoff::new();
        let r = loop {
            match self.client.publish_policy(snap.to_bytes()) {
                Ok(r) => break r,
                Err(e) if e.is_transient() => {
                    let d = backoff.next_delay();
                    tracing::warn!(error = %e, delay_ms = d.as_millis() as u64, "publish failed; retrying");
                    std::thread::sleep(d);
                }
                Err(e) => return Err(e.into()),
            }
        };
        if !r.existing || self.state.publishes.is_empty() {
            self.state.publishes.push(r.policy_id);
            tracing::info!(policy_id = r.policy_id, hash = %r.content_hash, "published policy");
        }
        self.state.policy_id = r.policy_id;
        Ok(r.policy_id)
    }

    fn top_up_requests(&mut self) -> Result<(), OnlineError> {
        let target = self.config.train.episodes;
        while self.state.outstanding.len() < self.config.outstanding.max(1) && self.state.requests_created < target {
            let layout = self.layouts.next_layout()?;
            let task = TaskDescriptor { gen_config: Some(self.config.train.gen.clone()), ..TaskDescriptor::policy_episode(layout.seed) };
            let req = self.client.create_request(&CreateRequest { task, policy_id: Some(self.state.policy_id), permitted_workers: Vec::new() })?;
            self.state.requests_created += 1;
            self.owned.insert(req.request_id.clone());
            self.state.outstanding.insert(req.request_id);
        }
        Ok(())
    }

    fn ingest_recording(&mut self, recording_id: &str) -> Result<(), OnlineError> {
        let bytes = self.client.recording(recording_id)?;
        let log = EpisodeLog::from_jsonl(&bytes).map_err(|e| OnlineError::BadRecording { id: recording_id.into(), message: e.to_string() })?;
        let (n, ret) = self.trainer.ingest(&log)?;
        if let Some(d) = self.trainer.train_pending()? {
            self.last_diag = Some(d);
        }
        self.state.ingested.push(recording_id.into());
        tracing::debug!(recording_id, transitions = n, episode_return = ret, stop_reason = ?log.footer.stop_reason, "ingested");
        Ok(())
    }

    /// Handles one batch of events; returns whether anything was ingested.
    pub fn poll_once(&mut self) -> Result<usize, OnlineError> {
        let r = self.client.events(self.state.cursor, self.config.poll_timeout_ms)?;
        let mut ingested = 0;
        for ev in &r.events {
            self.state.cursor = self.state.cursor.max(ev.cursor);
            if ev.kind != EventKind::RecordingUploaded {
                continue;
            }
            let (Some(req), Some(rec)) = (&ev.request_id, &ev.recording_id) else { continue };
            if !self.owned.contains(req) || self.state.ingested.iter().any(|r| r == rec) {
                continue;
            }
            self.ingest_recording(rec)?;
            self.state.outstanding.remove(req);
            ingested += 1;
            let n = self.state.ingested.len();
            if self.config.publish_every > 0 && n % self.config.publish_every == 0 && n < self.config.train.episodes {
                self.publish()?;
                self.append_diagnostics(None)?;
            }
            if self.config.checkpoint_every > 0 && n % self.config.checkpoint_every == 0 {
                self.checkpoint()?;
            }
        }
        Ok(ingested)
    }

    /// Runs until `config.train.episodes` recordings are ingested or `stop` is set.
    pub fn run(&mut self, stop: &Arc<AtomicBool>) -> Result<OnlineReport, OnlineError> {
        if self.state.publishes.is_empty() {
            self.publish()?;
        }
        let mut backoff = Backoff::new();
        while self.state.ingested.len() < self.config.train.episodes && !stop.load(Ordering::Relaxed) {
            let step = self.top_up_requests().and_then(|_| self.poll_once());
            match step {
                Ok(_) => backoff.reset(),
                Err(OnlineError::Client(e)) if e.is_transient() => {
                    let d = backoff.next_delay();
                    tracing::warn!(error = %e, delay_ms = d.as_millis() as u64, "learner poll failed; retrying");
                    std::thread::sleep(d);
                }
                Err(e) => return Err(e),
            }
        }
        self.append_diagnostics(None)?;
        self.checkpoint()?;
        Ok(OnlineReport {
            recordings: self.state.ingested.clone(),
            publishes: self.state.publishes.clone(),
            transitions: self.trainer.buffer.len(),
            updates: self.trainer.agent.updates(),
            final_policy: self.state.policy_id,
        })
    }

    /// Appends one diagnostics row (no-op without a checkpoint directory).
    pub fn append_diagnostics(&mut self, eval_sr: Option<f64>) -> Result<(), OnlineError> {
        let Some(dir) = &self.checkpoint_dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let path = dir.join("diagnostics.csv");
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            writeln!(f, "{DIAGNOSTICS_HEADER}")?;
        }
        let d = self.last_diag.unwrap_or_default();
        let sr = eval_sr.map_or(String::new(), |v| format!("{v:.1}"));
        writeln!(
            f,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.trainer.agent.updates(),
            self.trainer.env_steps(),
            self.state.ingested.len(),
            self.state.policy_id,
            d.critic1_loss,
            d.critic2_loss,
            d.actor_loss,
            self.trainer.agent.alpha(),
            d.entropy,
            sr
        )?;
        Ok(())
    }

    pub fn checkpoint(&mut self) -> Result<(), OnlineError> {
        let Some(dir) = self.checkpoint_dir.clone() else { return Ok(()) };
        self.state.env_steps = self.trainer.env_steps();
        self.state.updates = self.trainer.agent.updates();
        self.state.log_alpha = self.trainer.agent.log_alpha;
        save(&dir, &self.trainer, &self.state)
    }
}

/// Writes a checkpoint; the state file goes last so a partial write is ignored on resume.
pub fn save(dir: &Path, trainer: &Trainer, state: &LearnerState) -> Result<(), OnlineError> {
    let tmp = dir.join("tmp");
    fs::create_dir_all(dir.join("weights"))?;
    fs::create_dir_all(&tmp)?;
    write_atomic(&tmp, &dir.join("buffer.bin"), &trainer.buffer.to_bytes())?;
    for (name, m) in nets(trainer) {
        write_atomic(&tmp, &dir.join("weights").join(format!("{name}.bin")), &weights_bytes(m))?;
    }
    let json = serde_json::to_vec_pretty(state).map_err(|e| OnlineError::Checkpoint(e.to_string()))?;
    write_atomic(&tmp, &dir.join("learner_state.json"), &json)?;
    Ok(())
}

/// Loads a checkpoint into `trainer`, whose network shapes must match.
pub fn restore(dir: &Path, trainer: &mut Trainer) -> Result<LearnerState, OnlineError> {
    let state: LearnerState =
        serde_json::from_slice(&fs::read(dir.join("learner_state.json"))?).map_err(|e| OnlineError::Checkpoint(e.to_string()))?;
    if state.format_version != CHECKPOINT_VERSION {
        return Err(OnlineError::Checkpoint(format!("unsupported checkpoint version {}", state.format_version)));
    }
    let buffer = ReplayBuffer::from_bytes(&fs::read(dir.join("buffer.bin"))?).map_err(|e| OnlineError::Checkpoint(e.to_string()))?;
    if buffer.obs_dim() != trainer.buffer.obs_dim() || buffer.act_dim() != trainer.buffer.act_dim() {
        return Err(OnlineError::Checkpoint("buffer dimensions differ from the configured networks".into()));
    }
    trainer.buffer = buffer;
    let a = &mut trainer.agent;
    for (name, m) in [("actor", &mut a.actor), ("critic1", &mut a.critic1), ("critic2", &mut a.critic2), ("target1", &mut a.target1), ("target2", &mut a.target2)] {
        load_weights(m, &fs::read(dir.join("weights").join(format!("{name}.bin")))?, name)?;
    }
    a.log_alpha = state.log_alpha;
    a.set_updates(state.updates);
    trainer.set_env_steps(state.env_steps);
    Ok(state)
}
