//! Kill-restart injections against the `serve` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::*;
use fleetnav::api::CreateRequest;
use fleetnav::client::{ClientError, FleetClient};
use fleetnav::store::{Store, StoreConfig};
use fleetnav_core::protocol::{Claim, EventKind};

pub const INJECTIONS: usize = 50;
const STAGES: [&str; 3] = ["journal.torn", "upload.object_written", "upload.committed"];

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn_server(dir: &Path, port: u16, crash_at: Option<String>) -> Child {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fleetnav"));
    cmd.args(["--log", "warn", "serve", "--listen", &format!("127.0.0.1:{port}"), "--data-dir"])
        .arg(dir.join("data"))
        .arg("--account")
        .arg(format!("learner:learner:{}", dir.join("pw").display()))
        .arg("--account")
        .arg(format!("w0:worker:{}", dir.join("pw").display()))
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    match crash_at {
        Some(c) => cmd.env("FLEETNAV_CRASH_AT", c),
        None => cmd.env_remove("FLEETNAV_CRASH_AT"),
    };
    cmd.spawn().unwrap()
}

/// Waits for `/healthz`, or for the child to exit (a crash during startup).
fn wait_ready(child: &mut Child, url: &str) -> bool {
    let probe = FleetClient::new(url).unwrap();
    let t = Instant::now();
    while t.elapsed() < Duration::from_secs(20) {
        if child.try_wait().unwrap().is_some() {
            return false;
        }
        if probe.health() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    panic!("server did not come up");
}

#[derive(Default)]
struct Ledger {
    /// Uploads the server acknowledged: request -> recording.
    acked: BTreeMap<String, String>,
    created: Vec<String>,
    /// An upload that may or may not have landed.
    inflight: Option<(Claim, Vec<u8>)>,
}

fn login(url: &str, user: &str) -> Result<FleetClient, ClientError> {
    let mut c = FleetClient::new(url)?;
    c.login(user, PASSWORD)?;
    Ok(c)
}

/// Create-claim-upload rounds until the server goes away.
fn workload(url: &str, ledger: &Mutex<Ledger>, rounds: usize, seed: u64) -> Result<(), ClientError> {
    let learner = login(url, "learner")?;
    let worker = login(url, "w0")?;
    if learner.policy(None, None).is_err() {
        learner.publish_policy(snapshot(1, 1).to_bytes())?;
    }
    for i in 0..rounds {
        let req = learner.create_request(&CreateRequest { task: task(seed * 1000 + i as u64 % 1000), policy_id: None, permitted_workers: vec![] })?;
        ledger.lock().unwrap().created.push(req.request_id.clone());
        let claim = worker.claim(&req.request_id)?;
        let bytes = episode_for(&req, "w0").to_jsonl();
        ledger.lock().unwrap().inflight = Some((claim.clone(), bytes.clone()));
        let up = worker.upload(&claim, bytes)?;
        let mut l = ledger.lock().unwrap();
        l.inflight = None;
        l.acked.insert(req.request_id.clone(), up.recording_id);
    }
    Ok(())
}

fn check_store(dir: &Path, ledger: &Ledger) {
    let store = Store::open(dir.join("data"), StoreConfig::default()).unwrap();
    store.audit().unwrap();
    let events = store.events();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.cursor, i as u64 + 1, "cursors are contiguous");
    }
    let completed: BTreeMap<String, String> = events
        .iter()
        .filter(|e| e.kind == EventKind::RequestCompleted)
        .map(|e| (e.request_id.clone().unwrap(), e.recording_id.clone().unwrap()))
        .collect();
    assert_eq!(completed.len(), events.iter().filter(|e| e.kind == EventKind::RequestCompleted).count(), "a request completes once");
    assert_eq!(completed.len(), store.recordings().len(), "one recording per completed request");
    for (req, rec) in &ledger.acked {
        assert_eq!(completed.get(req), Some(rec), "acknowledged upload {req} survived");
        assert!(store.request(req).is_none());
    }
    for req in &ledger.created {
        assert!(store.request(req).is_some() || completed.contains_key(req), "acknowledged request {req} survived");
    }
}

/// Outcome of a run of injections.
#[derive(Debug)]
pub struct CrashSummary {
    pub injections: usize,
    pub by_stage: BTreeMap<String, usize>,
    pub acknowledged_uploads: usize,
}

/// Runs `INJECTIONS` crash-restart cycles; panics on the first inconsistency.
pub fn run_injections() -> CrashSummary {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("pw"), PASSWORD).unwrap();
    let ledger = Arc::new(Mutex::new(Ledger::default()));
    let mut crashes = 0;
    let mut by_stage = BTreeMap::<String, usize>::new();

    for i in 0..INJECTIONS {
        let port = free_port();
        let url = format!("http://127.0.0.1:{port}");
        // every fourth run is an external SIGKILL mid-workload
        let external = i % 4 == 3;
        let stage = STAGES[i % 4 % 3];
        let crash_at = (!external).then(|| format!("{stage}:{}", 1 + i % 3));
        let mut child = spawn_server(dir, port, crash_at);
        if wait_ready(&mut child, &url) {
            let (u, l) = (url.clone(), ledger.clone());
            let rounds = if external { usize::MAX } else { 8 };
            let h = std::thread::spawn(move || workload(&u, &l, rounds, i as u64));
            if external {
                std::thread::sleep(Duration::from_millis(40 + 37 * (i as u64 % 5)));
                child.kill().unwrap();
            }
            let r = h.join().unwrap();
            assert!(r.is_err(), "run {i}: workload finished without the injected crash");
        }
        let status = child.wait().unwrap();
        assert!(!status.success(), "run {i}: server exited cleanly");
        crashes += 1;
        *by_stage.entry(if external { "sigkill".into() } else { stage.to_string() }).or_default() += 1;

        check_store(dir, &ledger.lock().unwrap());

        // recovery: restart cleanly and finish the interrupted upload
        let mut child = spawn_server(dir, port, None);
        assert!(wait_ready(&mut child, &url));
        let inflight = ledger.lock().unwrap().inflight.take();
        if let Some((claim, bytes)) = inflight {
            let w = login(&url, "w0").unwrap();
            let up = w.upload(&claim, bytes).unwrap();
            ledger.lock().unwrap().acked.insert(claim.request_id.clone(), up.recording_id);
        }
        child.kill().unwrap();
        child.wait().unwrap();
        check_store(dir, &ledger.lock().unwrap());
    }
    let acknowledged_uploads = ledger.lock().unwrap().acked.len();
    CrashSummary { injections: crashes, by_stage, acknowledged_uploads }
}
