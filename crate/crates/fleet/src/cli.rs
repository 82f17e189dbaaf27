//! `fleetnav` subcommands.

use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fleetnav_core::env::{GenConfig, LayoutSpec};
use fleetnav_core::eval::{render_table, run_suite, run_suite_with, MetricsReport, TableRow};
use fleetnav_core::expert::ExpertPlanner;
use fleetnav_core::learner::BcConfig;
use fleetnav_core::policy::PolicySnapshot;
use fleetnav_core::rollout::{ExpertDriver, UnicycleDriver};
use fleetnav_core::sim::SimConfig;
use fleetnav_core::train::{
    ablation_layout_count, bc_train, collect_demonstrations, layout_pool, median_sr_by_pool, non_decreasing_within, pretrain, suites,
    EpisodeStats, TrainConfig,
};

use crate::api::Role;
use crate::client::FleetClient;
use crate::config::{self, ConfigError, RunManifest};
use crate::online::{self, LearnerService, LearnerState, OnlineConfig, CHECKPOINT_VERSION};
use crate::server::{self, AppState, ServerConfig, ServerHandle};
use crate::store::StoreConfig;
use crate::worker::{run_worker, WorkerConfig};

/// Layout seeds the evaluation suites draw from, disjoint from training seeds.
pub const EVAL_SEED_BASE: u64 = 9_000_000;

#[derive(Debug, Parser)]
#[command(name = "fleetnav", version, about = "Fleet-based point-goal navigation: simulation, training, and fleet services")]
pub struct Cli {
    /// JSON file with settings for the subcommand.
    #[arg(long, global = true, env = "FLEETNAV_CONFIG")]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `fleetnav=debug`.
    #[arg(long, global = true, env = "FLEETNAV_LOG", default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate layouts and write them as JSON.
    GenEnv(GenEnvArgs),
    /// Run the fleet server.
    Serve(ServeArgs),
    /// Run a headless fleet worker.
    Worker(WorkerArgs),
    /// Train in-process in simulation.
    Pretrain(PretrainArgs),
    /// Run server, learner, and workers together.
    TrainOnline(OnlineArgs),
    /// Evaluate a policy on a layout suite.
    Eval(EvalArgs),
    /// Layout-count ablation.
    Ablate(AblateArgs),
    /// Behavior cloning from scripted-expert demonstrations.
    BcTrain(BcArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v).map_err(rt)?)?;
    Ok(())
}

fn read_password(path: &Path) -> Result<String, CliError> {
    let s = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(s.trim_end_matches(['\r', '\n']).to_string())
}

fn eval_suite(name: &str, layouts: usize, seed: u64) -> Result<Vec<LayoutSpec>, CliError> {
    suites::layouts(&config::suite(name)?, layouts, seed).map_err(rt)
}

// ---------------------------------------------------------------- gen-env

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenEnvSettings {
    pub suite: String,
    /// Overrides `suite` when set.
    pub gen: Option<GenConfig>,
    pub seed: u64,
    pub count: usize,
    pub out: PathBuf,
}

impl Default for GenEnvSettings {
    fn default() -> Self {
        Self { suite: "pretraining".into(), gen: None, seed: 0, count: 10, out: "runs/gen-env".into() }
    }
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    #[arg(long, env = "FLEETNAV_SUITE")]
    pub suite: Option<String>,
    #[arg(long, env = "FLEETNAV_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "FLEETNAV_COUNT")]
    pub count: Option<usize>,
    #[arg(long, env = "FLEETNAV_OUT")]
    pub out: Option<PathBuf>,
}

fn gen_env(cfg_file: Option<&Path>, a: GenEnvArgs) -> Result<(), CliError> {
    let mut s: GenEnvSettings = config::load(cfg_file)?;
    if let Some(v) = a.suite {
        s.suite = v;
        s.gen = None;
    }
    s.seed = a.seed.unwrap_or(s.seed);
    s.count = a.count.unwrap_or(s.count);
    s.out = a.out.unwrap_or(s.out);
    RunManifest::new("gen-env", &s, vec![s.seed], &s.out).write()?;
    let gen = match &s.gen {
        Some(g) => g.clone(),
        None => config::suite(&s.suite)?,
    };
    let layouts = layout_pool(&gen, s.seed, s.count).map_err(rt)?;
    write_json(&s.out.join("layouts.json"), &layouts)?;
    tracing::info!(count = layouts.len(), out = %s.out.display(), "wrote layouts");
    Ok(())
}

// ---------------------------------------------------------------- serve

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountSpec {
    pub username: String,
    pub role: Role,
    pub pass_file: PathBuf,
}

impl std::str::FromStr for AccountSpec {
    type Err = String;
    /// `NAME:ROLE:PASS_FILE`
    fn from_str(s: &str) -> Result<Self, String> {
        let mut it = s.splitn(3, ':');
        let (Some(u), Some(r), Some(p)) = (it.next(), it.next(), it.next()) else {
            return Err("expected NAME:ROLE:PASS_FILE".into());
        };
        let role = match r {
            "worker" => Role::Worker,
            "learner" => Role::Learner,
            _ => return Err(format!("unknown role {r:?}")),
        };
        Ok(Self { username: u.into(), role, pass_file: p.into() })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSettings {
    pub listen: String,
    pub data_dir: PathBuf,
    pub store: StoreConfig,
    pub sim: SimConfig,
    pub gen: GenConfig,
    pub accounts: Vec<AccountSpec>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: "runs/server".into(),
            store: StoreConfig::default(),
            sim: SimConfig::default(),
            gen: GenConfig::default(),
            accounts: Vec::new(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FLEETNAV_LISTEN")]
    pub listen: Option<String>,
    #[arg(long, env = "FLEETNAV_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "FLEETNAV_LEASE_MS")]
    pub lease_ms: Option<u64>,
    /// Account to create if missing, as NAME:ROLE:PASS_FILE (repeatable).
    #[arg(long = "account")]
    pub accounts: Vec<AccountSpec>,
}

fn serve(cfg_file: Option<&Path>, a: ServeArgs) -> Result<(), CliError> {
    let mut s: ServeSettings = config::load(cfg_file)?;
    s.listen = a.listen.unwrap_or(s.listen);
    s.data_dir = a.data_dir.unwrap_or(s.data_dir);
    if let Some(l) = a.lease_ms {
        s.store.lease_ms = l;
    }
    s.accounts.extend(a.accounts);
    RunManifest::new("serve", &s, vec![], &s.data_dir).write()?;
    let addr: SocketAddr = s.listen.parse().map_err(|e| CliError::Runtime(format!("listen address {:?}: {e}", s.listen)))?;
    let state = AppState::open(ServerConfig { data_dir: s.data_dir.clone(), store: s.store, sim: s.sim.clone(), gen: s.gen.clone(), teleop_tick_ms: None })
        .map_err(rt)?;
    for acc in &s.accounts {
        let pw = read_password(&acc.pass_file)?;
        state.store().add_account(&acc.username, &pw, acc.role).map_err(rt)?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(addr = %listener.local_addr()?, data_dir = %s.data_dir.display(), "serving");
        server::serve(listener, state, shutdown_signal()).await
    })?;
    tracing::info!("server stopped");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = ctrl_c.await;
    }
}

// ---------------------------------------------------------------- worker

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long, env = "FLEETNAV_SERVER")]
    pub server: Option<String>,
    #[arg(long, env = "FLEETNAV_USER")]
    pub user: Option<String>,
    #[arg(long, env = "FLEETNAV_PASS_FILE")]
    pub pass_file: Option<PathBuf>,
    #[arg(long, env = "FLEETNAV_SLOTS")]
    pub slots: Option<usize>,
    /// JSON simulator config.
    #[arg(long, env = "FLEETNAV_SIM_CONFIG")]
    pub sim_config: Option<PathBuf>,
    #[arg(long, env = "FLEETNAV_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "FLEETNAV_POLL_INTERVAL_MS")]
    pub poll_interval_ms: Option<u64>,
    /// Run a single cycle and exit.
    #[arg(long)]
    pub once: bool,
    /// Shut down when standard input closes (used by a supervising process).
    #[arg(long, hide = true)]
    pub stop_on_stdin_eof: bool,
}

fn worker(cfg_file: Option<&Path>, a: WorkerArgs) -> Result<(), CliError> {
    let mut c: WorkerConfig = config::load(cfg_file)?;
    c.server = a.server.unwrap_or(c.server);
    c.username = a.user.unwrap_or(c.username);
    if let Some(p) = &a.pass_file {
        c.password = read_password(p)?;
    }
    c.slots = a.slots.unwrap_or(c.slots);
    c.seed = a.seed.unwrap_or(c.seed);
    c.poll_interval_ms = a.poll_interval_ms.unwrap_or(c.poll_interval_ms);
    if let Some(p) = &a.sim_config {
        c.sim = config::read_json(p)?;
    }
    if c.username.is_empty() {
        return Err(CliError::Runtime("a --user is required".into()));
    }
    if c.slots == 0 {
        return Err(CliError::Runtime("--slots must be at least 1".into()));
    }
    let stop = Arc::new(AtomicBool::new(false));
    if a.stop_on_stdin_eof {
        let s = stop.clone();
        std::thread::spawn(move || {
            let mut buf = [0u8; 64];
            let mut stdin = std::io::stdin();
            while matches!(stdin.read(&mut buf), Ok(n) if n > 0) {}
            s.store(true, Ordering::Relaxed);
        });
    }
    let reports = run_worker(c, a.once, stop).map_err(rt)?;
    tracing::info!(cycles = reports.len(), "worker stopped");
    Ok(())
}

// ---------------------------------------------------------------- pretrain

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub suite: String,
    pub layouts: usize,
    pub trials: usize,
    pub suite_seed: u64,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { suite: "blocked-line".into(), layouts: 20, trials: 10, suite_seed: EVAL_SEED_BASE, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSettings {
    pub train: TrainConfig,
    pub out: PathBuf,
    /// Held-out evaluation after training.
    pub eval: Option<EvalSpec>,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self { train: TrainConfig { gen: suites::pretraining(), ..TrainConfig::default() }, out: "runs/pretrain".into(), eval: None }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, env = "FLEETNAV_EPISODES")]
    pub episodes: Option<usize>,
    #[arg(long, env = "FLEETNAV_SEED")]
    pub seed: Option<u64>,
    /// Train on a fixed pool of this many layouts.
    #[arg(long, env = "FLEETNAV_POOL_SIZE")]
    pub pool_size: Option<usize>,
    #[arg(long, env = "FLEETNAV_SUITE")]
    pub suite: Option<String>,
    #[arg(long, env = "FLEETNAV_OUT")]
    pub out: Option<PathBuf>,
    /// Evaluate on this suite afterwards.
    #[arg(long)]
    pub eval_suite: Option<String>,
}

pub const METRICS_HEADER: &str = "episode,layout_seed,stop_reason,steps,return,env_steps,updates,critic1_loss,actor_loss,alpha,entropy";

fn metrics_row(s: &EpisodeStats) -> String {
    let d = s.diagnostics.unwrap_or_default();
    let reason = serde_json::to_value(s.stop_reason).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    format!(
        "{},{},{},{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6}",
        s.episode, s.layout_seed, reason, s.steps, s.episode_return, s.env_steps, s.updates, d.critic1_loss, d.actor_loss, d.alpha, d.entropy
    )
}

fn evaluate(snapshot: &PolicySnapshot, spec: &EvalSpec, sim: &SimConfig, method: &str, out: &Path) -> Result<MetricsReport, CliError> {
    let layouts = eval_suite(&spec.suite, spec.layouts, spec.suite_seed)?;
    let report = run_suite(snapshot, &layouts, spec.trials, sim, spec.seed).map_err(rt)?;
    write_report(out, method, &report)?;
    Ok(report)
}

fn write_report(out: &Path, method: &str, report: &MetricsReport) -> Result<(), CliError> {
    write_json(&out.join("report.json"), report)?;
    std::fs::write(out.join("report.txt"), render_table(&[TableRow::from_report(method, report)]))?;
    tracing::info!(method, sr = report.sr, gd = report.gd, cr = report.cr, "evaluation");
    Ok(())
}

fn pretrain_cmd(cfg_file: Option<&Path>, a: PretrainArgs) -> Result<(), CliError> {
    let mut s: PretrainSettings = config::load(cfg_file)?;
    s.train.episodes = a.episodes.unwrap_or(s.train.episodes);
    s.train.seed = a.seed.unwrap_or(s.train.seed);
    if a.pool_size.is_some() {
        s.train.pool_size = a.pool_size;
    }
    if let Some(n) = &a.suite {
        s.train.gen = config::suite(n)?;
    }
    s.out = a.out.unwrap_or(s.out);
    if let Some(n) = a.eval_suite {
        s.eval = Some(EvalSpec { suite: n, ..s.eval.unwrap_or_default() });
    }
    RunManifest::new("pretrain", &s, vec![s.train.seed], &s.out).write()?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(s.out.join("metrics.csv"))?);
    writeln!(csv, "{METRICS_HEADER}")?;
    let mut io_err = None;
    let started = Instant::now();
    let trainer = pretrain(&s.train, |st, _| {
        if let Err(e) = writeln!(csv, "{}", metrics_row(st)) {
            io_err.get_or_insert(e);
        }
        if (st.episode + 1) % 100 == 0 {
            tracing::info!(episode = st.episode + 1, env_steps = st.env_steps, updates = st.updates, "pretraining");
        }
    })
    .map_err(rt)?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    csv.flush()?;
    let snap = trainer.snapshot(1).map_err(rt)?;
    std::fs::write(s.out.join("policy.bin"), snap.to_bytes())?;
    let state = LearnerState {
        format_version: CHECKPOINT_VERSION,
        env_steps: trainer.env_steps(),
        updates: trainer.agent.updates(),
        log_alpha: trainer.agent.log_alpha,
        policy_id: 1,
        ..LearnerState::default()
    };
    online::save(&s.out.join("checkpoint"), &trainer, &state).map_err(rt)?;
    tracing::info!(episodes = s.train.episodes, secs = started.elapsed().as_secs_f64(), hash = %snap.hash_hex(), "pretraining finished");
    if let Some(spec) = &s.eval {
        evaluate(&snap, spec, &s.train.sim, "pretrained", &s.out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- train-online

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineSettings {
    pub online: OnlineConfig,
    pub workers: usize,
    pub distributed: bool,
    pub out: PathBuf,
    /// Snapshot to start from instead of a fresh actor.
    pub init_policy: Option<PathBuf>,
    pub worker_seed: u64,
    pub poll_interval_ms: u64,
    pub eval: Option<EvalSpec>,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        Self {
            online: OnlineConfig { train: TrainConfig { gen: suites::pretraining(), ..TrainConfig::default() }, ..OnlineConfig::default() },
            workers: 4,
            distributed: false,
            out: "runs/train-online".into(),
            init_policy: None,
            worker_seed: 0,
            poll_interval_ms: 100,
            eval: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    /// Run each worker as a separate process talking to the server over loopback.
    #[arg(long)]
    pub distributed: bool,
    #[arg(long, env = "FLEETNAV_EPISODES")]
    pub episodes: Option<usize>,
    #[arg(long, env = "FLEETNAV_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, env = "FLEETNAV_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "FLEETNAV_PUBLISH_EVERY")]
    pub publish_every: Option<usize>,
    #[arg(long, env = "FLEETNAV_INIT_POLICY")]
    pub init_policy: Option<PathBuf>,
    #[arg(long, env = "FLEETNAV_OUT")]
    pub out: Option<PathBuf>,
}

/// Summary written to `online_report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineSummary {
    pub recordings: Vec<String>,
    pub publishes: Vec<u64>,
    pub transitions: usize,
    pub updates: u64,
    pub final_policy: u64,
    pub completed_requests: usize,
    pub store_audit: Result<(), String>,
    pub server_url: String,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub eval: Option<MetricsReport>,
}

fn random_password() -> String {
    use rand::Rng;
    let bytes: [u8; 16] = rand::thread_rng().gen();
    hex::encode(bytes)
}

struct WorkerProcs {
    children: Vec<Child>,
}

impl WorkerProcs {
    /// Closes each child's stdin and waits up to `grace` before killing stragglers.
    fn shutdown(&mut self, grace: Duration) {
        for c in &mut self.children {
            drop(c.stdin.take());
        }
        let deadline = Instant::now() + grace;
        for c in &mut self.children {
            loop {
                match c.try_wait() {
                    Ok(Some(status)) => {
                        if !status.success() {
                            tracing::warn!(pid = c.id(), %status, "worker process exited with failure");
                        }
                        break;
                    }
                    Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(20)),
                    _ => {
                        tracing::warn!(pid = c.id(), "worker did not stop in time; killing");
                        let _ = c.kill();
                        let _ = c.wait();
                        break;
                    }
                }
            }
        }
        self.children.clear();
    }
}

impl Drop for WorkerProcs {
    fn drop(&mut self) {
        self.shutdown(Duration::from_secs(5));
    }
}

fn train_online(cfg_file: Option<&Path>, a: OnlineArgs) -> Result<(), CliError> {
    let mut s: OnlineSettings = config::load(cfg_file)?;
    s.distributed |= a.distributed;
    s.online.train.episodes = a.episodes.unwrap_or(s.online.train.episodes);
    s.workers = a.workers.unwrap_or(s.workers);
    s.online.train.seed = a.seed.unwrap_or(s.online.train.seed);
    s.online.publish_every = a.publish_every.unwrap_or(s.online.publish_every);
    if a.init_policy.is_some() {
        s.init_policy = a.init_policy;
    }
    s.out = a.out.unwrap_or(s.out);
    if s.workers == 0 {
        return Err(CliError::Runtime("--workers must be at least 1".into()));
    }
    RunManifest::new("train-online", &s, vec![s.online.train.seed, s.worker_seed], &s.out).write()?;
    let initial = match &s.init_policy {
        Some(p) => Some(PolicySnapshot::from_bytes(&std::fs::read(p)?).map_err(rt)?),
        None => None,
    };

    let data_dir = s.out.join("server");
    let server = ServerHandle::spawn(
        ServerConfig { data_dir: data_dir.clone(), store: StoreConfig::default(), sim: s.online.train.sim.clone(), gen: s.online.train.gen.clone(), teleop_tick_ms: None },
        "127.0.0.1:0".parse().expect("loopback address"),
    )
    .map_err(rt)?;
    let url = server.url();
    let learner_pw = random_password();
    let mut worker_pws = Vec::new();
    {
        let mut st = server.state.store();
        st.add_account("learner", &learner_pw, Role::Learner).map_err(rt)?;
        for i in 0..s.workers {
            let pw = random_password();
            st.add_account(&format!("worker-{i}"), &pw, Role::Worker).map_err(rt)?;
            worker_pws.push(pw);
        }
    }
    tracing::info!(url = %url, workers = s.workers, distributed = s.distributed, "fleet server up");

    let stop = Arc::new(AtomicBool::new(false));
    let mut procs = WorkerProcs { children: Vec::new() };
    let mut threads = Vec::new();
    let worker_cfg = |i: usize| WorkerConfig {
        server: url.clone(),
        username: format!("worker-{i}"),
        password: worker_pws[i].clone(),
        sim: s.online.train.sim.clone(),
        gen: s.online.train.gen.clone(),
        poll_interval_ms: s.poll_interval_ms,
        slots: 1,
        seed: s.worker_seed.wrapping_add(i as u64 * 7919),
        run_expert_tasks: true,
    };
    if s.distributed {
        let secrets = s.out.join("secrets");
        std::fs::create_dir_all(&secrets)?;
        let sim_path = s.out.join("sim.json");
        write_json(&sim_path, &s.online.train.sim)?;
        let exe = std::env::current_exe()?;
        for i in 0..s.workers {
            let c = worker_cfg(i);
            let pass = secrets.join(format!("worker-{i}.pass"));
            std::fs::write(&pass, &c.password)?;
            let log = std::fs::File::create(s.out.join(format!("worker-{i}.log")))?;
            let child = Process::new(&exe)
                .args(["worker", "--server", &url, "--user", &c.username, "--slots", "1", "--stop-on-stdin-eof"])
                .arg("--pass-file")
                .arg(&pass)
                .arg("--sim-config")
                .arg(&sim_path)
                .args(["--seed", &c.seed.to_string(), "--poll-interval-ms", &c.poll_interval_ms.to_string()])
                .env_remove("FLEETNAV_CONFIG")
                .stdin(Stdio::piped())
                .stdout(Stdio::null())
                .stderr(log)
                .spawn()?;
            tracing::info!(pid = child.id(), worker = %c.username, "spawned worker process");
            procs.children.push(child);
        }
    } else {
        for i in 0..s.workers {
            let (c, st) = (worker_cfg(i), stop.clone());
            threads.push(std::thread::spawn(move || run_worker(c, false, st)));
        }
    }

    let mut client = FleetClient::new(&url).map_err(rt)?;
    client.login("learner", &learner_pw).map_err(rt)?;
    let ckpt = s.out.join("learner");
    let result = LearnerService::new(s.online.clone(), client, initial.as_ref(), Some(ckpt.clone())).and_then(|mut svc| svc.run(&stop).map(|r| (r, svc)));

    stop.store(true, Ordering::Relaxed);
    procs.shutdown(Duration::from_secs(5));
    for t in threads {
        if let Ok(Err(e)) = t.join() {
            tracing::warn!(error = %e, "worker thread failed");
        }
    }
    let (report, mut svc) = result.map_err(rt)?;

    let (completed, audit) = {
        let st = server.state.store();
        let completed = st.events().iter().filter(|e| e.kind == fleetnav_core::protocol::EventKind::RequestCompleted).count();
        (completed, st.audit())
    };
    let mut eval = None;
    if let Some(spec) = &s.eval {
        let snap = svc.trainer.snapshot(report.final_policy).map_err(rt)?;
        let r = evaluate(&snap, spec, &s.online.train.sim, "online", &s.out)?;
        svc.append_diagnostics(Some(r.sr)).map_err(rt)?;
        eval = Some(r);
    }
    let summary = OnlineSummary {
        recordings: report.recordings,
        publishes: report.publishes,
        transitions: report.transitions,
        updates: report.updates,
        final_policy: report.final_policy,
        completed_requests: completed,
        store_audit: audit,
        server_url: url,
        data_dir,
        checkpoint_dir: ckpt,
        eval,
    };
    write_json(&s.out.join("online_report.json"), &summary)?;
    tracing::info!(recordings = summary.recordings.len(), publishes = summary.publishes.len(), "online training finished");
    server.stop();
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Snapshot file, or `unicycle` / `expert` for the built-in controllers.
    pub policy: String,
    pub eval: EvalSpec,
    pub sim: SimConfig,
    pub out: PathBuf,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { policy: "unicycle".into(), eval: EvalSpec::default(), sim: SimConfig::default(), out: "runs/eval".into() }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "FLEETNAV_POLICY")]
    pub policy: Option<String>,
    #[arg(long, env = "FLEETNAV_SUITE")]
    pub suite: Option<String>,
    #[arg(long, env = "FLEETNAV_TRIALS")]
    pub trials: Option<usize>,
    #[arg(long, env = "FLEETNAV_LAYOUTS")]
    pub layouts: Option<usize>,
    #[arg(long, env = "FLEETNAV_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "FLEETNAV_OUT")]
    pub out: Option<PathBuf>,
}

fn eval_cmd(cfg_file: Option<&Path>, a: EvalArgs) -> Result<(), CliError> {
    let mut s: EvalSettings = config::load(cfg_file)?;
    s.policy = a.policy.unwrap_or(s.policy);
    s.eval.suite = a.suite.unwrap_or(s.eval.suite);
    s.eval.trials = a.trials.unwrap_or(s.eval.trials);
    s.eval.layouts = a.layouts.unwrap_or(s.eval.layouts);
    s.eval.seed = a.seed.unwrap_or(s.eval.seed);
    s.out = a.out.unwrap_or(s.out);
    RunManifest::new("eval", &s, vec![s.eval.seed, s.eval.suite_seed], &s.out).write()?;
    let layouts = eval_suite(&s.eval.suite, s.eval.layouts, s.eval.suite_seed)?;
    let (method, report) = match s.policy.as_str() {
        "unicycle" => ("unicycle", run_suite_with(&layouts, s.eval.trials, &s.sim, s.eval.seed, |_| UnicycleDriver).map_err(rt)?.0),
        "expert" => {
            let r = run_suite_with(&layouts, s.eval.trials, &s.sim, s.eval.seed, |l| ExpertDriver { planner: ExpertPlanner::new(l, s.sim.robot_radius, 0.1) });
            ("expert", r.map_err(rt)?.0)
        }
        path => {
            let snap = PolicySnapshot::from_bytes(&std::fs::read(path)?).map_err(rt)?;
            ("policy", run_suite(&snap, &layouts, s.eval.trials, &s.sim, s.eval.seed).map_err(rt)?)
        }
    };
    write_report(&s.out, method, &report)?;
    print!("{}", render_table(&[TableRow::from_report(method, &report)]));
    Ok(())
}

// ---------------------------------------------------------------- ablate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateSettings {
    pub pools: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    /// Allowed SR drop between consecutive pool sizes in the trend check.
    pub slack: f64,
    pub out: PathBuf,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            pools: vec![1, 6, 72],
            seeds: vec![1, 2, 3],
            train: TrainConfig { gen: suites::pretraining(), ..TrainConfig::default() },
            eval: EvalSpec { suite: "pretraining".into(), suite_seed: 7_000_000, ..EvalSpec::default() },
            slack: 5.0,
            out: "runs/ablate".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Comma-separated ascending pool sizes.
    #[arg(long, value_delimiter = ',')]
    pub pools: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, env = "FLEETNAV_EPISODES")]
    pub episodes: Option<usize>,
    #[arg(long, env = "FLEETNAV_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<fleetnav_core::train::AblationRow>,
    pub median_sr: Vec<(usize, f64)>,
    pub non_decreasing_within_slack: bool,
}

fn ablate(cfg_file: Option<&Path>, a: AblateArgs) -> Result<(), CliError> {
    let mut s: AblateSettings = config::load(cfg_file)?;
    s.pools = a.pools.unwrap_or(s.pools);
    s.seeds = a.seeds.unwrap_or(s.seeds);
    s.train.episodes = a.episodes.unwrap_or(s.train.episodes);
    s.out = a.out.unwrap_or(s.out);
    RunManifest::new("ablate", &s, s.seeds.clone(), &s.out).write()?;
    let suite = eval_suite(&s.eval.suite, s.eval.layouts, s.eval.suite_seed)?;
    let mut csv = std::fs::File::create(s.out.join("ablation.csv"))?;
    writeln!(csv, "pool_size,seed,sr,gd,cr")?;
    let rows = ablation_layout_count(&s.pools, &s.train, &s.seeds, &suite, s.eval.trials, s.eval.seed, |r| {
        let _ = writeln!(csv, "{},{},{:.1},{:.3},{:.1}", r.pool_size, r.seed, r.report.sr, r.report.gd, r.report.cr);
        tracing::info!(pool = r.pool_size, seed = r.seed, sr = r.report.sr, "ablation run");
    })
    .map_err(rt)?;
    let median_sr = median_sr_by_pool(&rows);
    let ok = non_decreasing_within(&median_sr.iter().map(|m| m.1).collect::<Vec<_>>(), s.slack);
    let table: Vec<TableRow> = median_sr.iter().map(|(p, sr)| TableRow { method: format!("{p} layouts (median SR)"), sr: *sr, gd: 0.0, cr: 0.0 }).collect();
    std::fs::write(s.out.join("ablation.txt"), render_table(&table))?;
    write_json(&s.out.join("ablation.json"), &AblationSummary { rows, median_sr, non_decreasing_within_slack: ok })?;
    Ok(())
}

// ---------------------------------------------------------------- bc-train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BcSettings {
    pub demos: usize,
    pub bc: BcConfig,
    pub sim: SimConfig,
    pub gen: GenConfig,
    /// Demonstrations are collected on layouts from this seed base.
    pub layout_seed_base: u64,
    pub layouts: usize,
    pub seed: u64,
    pub eval_suites: Vec<String>,
    pub eval: EvalSpec,
    pub out: PathBuf,
}

impl Default for BcSettings {
    fn default() -> Self {
        Self {
            demos: 200,
            bc: BcConfig::default(),
            sim: SimConfig::default(),
            gen: suites::pretraining(),
            layout_seed_base: 5_000_000,
            layouts: 50,
            seed: 0,
            eval_suites: vec!["empty-room".into(), "light-clutter".into(), "blocked-line".into()],
            eval: EvalSpec::default(),
            out: "runs/bc-train".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct BcArgs {
    #[arg(long, env = "FLEETNAV_DEMOS")]
    pub demos: Option<usize>,
    #[arg(long, env = "FLEETNAV_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "FLEETNAV_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "FLEETNAV_OUT")]
    pub out: Option<PathBuf>,
}

fn bc_cmd(cfg_file: Option<&Path>, a: BcArgs) -> Result<(), CliError> {
    let mut s: BcSettings = config::load(cfg_file)?;
    s.demos = a.demos.unwrap_or(s.demos);
    s.bc.epochs = a.epochs.unwrap_or(s.bc.epochs);
    s.seed = a.seed.unwrap_or(s.seed);
    s.out = a.out.unwrap_or(s.out);
    RunManifest::new("bc-train", &s, vec![s.seed], &s.out).write()?;
    let layouts = layout_pool(&s.gen, s.layout_seed_base, s.layouts).map_err(rt)?;
    let demos = collect_demonstrations(&layouts, &s.sim, s.demos, s.seed).map_err(rt)?;
    let (snap, losses) = bc_train(&demos, &s.bc, s.seed).map_err(rt)?;
    std::fs::write(s.out.join("policy.bin"), snap.to_bytes())?;
    let mut f = std::fs::File::create(s.out.join("losses.csv"))?;
    writeln!(f, "epoch,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{i},{l:.6}")?;
    }
    let mut rows = Vec::new();
    for name in &s.eval_suites {
        let layouts = eval_suite(name, s.eval.layouts, s.eval.suite_seed)?;
        let r = run_suite(&snap, &layouts, s.eval.trials, &s.sim, s.eval.seed).map_err(rt)?;
        tracing::info!(suite = %name, sr = r.sr, cr = r.cr, "bc evaluation");
        write_json(&s.out.join(format!("report-{name}.json")), &r)?;
        rows.push(TableRow::from_report(&format!("BC / {name}"), &r));
    }
    std::fs::write(s.out.join("report.txt"), render_table(&rows))?;
    Ok(())
}

/// Runs a parsed command line; errors are runtime failures.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenEnv(a) => gen_env(cfg, a),
        Command::Serve(a) => serve(cfg, a),
        Command::Worker(a) => worker(cfg, a),
        Command::Pretrain(a) => pretrain_cmd(cfg, a),
        Command::TrainOnline(a) => train_online(cfg, a),
        Command::Eval(a) => eval_cmd(cfg, a),
        Command::Ablate(a) => ablate(cfg, a),
        Command::BcTrain(a) => bc_cmd(cfg, a),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    config::init_logging(&cli.log);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            eprintln!("error: {e}");
            1
        }
    }
}
