mod common;

use std::time::{Duration, Instant};

use common::*;
use fleetnav::api::*;
use fleetnav::client::{ClientError, FleetClient};
use fleetnav_core::episode::Controller;
use fleetnav_core::protocol::{EventKind, RequestState, TaskDescriptor};
use fleetnav_core::sim::{SimConfig, StopReason};
use fleetnav_core::train::suites;

fn kind(r: Result<impl std::fmt::Debug, ClientError>) -> (u16, ErrorKind) {
    match r {
        Err(ClientError::Api { status, body }) => (status, body.error),
        other => panic!("expected an API error, got {other:?}"),
    }
}

#[test]
fn auth_errors_are_distinct() {
    let fleet = Fleet::start_with(1, |c| c.store.token_ttl_ms = 300);
    let mut c = FleetClient::new(&fleet.server.url()).unwrap();
    assert_eq!(kind(c.login("w0", "nope")), (401, ErrorKind::AuthFailed));
    assert!(matches!(c.list_requests(), Err(ClientError::NotLoggedIn)));
    let raw = reqwest::blocking::get(format!("{}/v1/requests", fleet.server.url())).unwrap();
    assert_eq!(raw.status(), 401);
    let body: ErrorBody = raw.json().unwrap();
    assert_eq!(body.error, ErrorKind::Unauthorized);
    c.login("w0", PASSWORD).unwrap();
    assert!(c.list_requests().is_ok());
    std::thread::sleep(Duration::from_millis(400));
    assert_eq!(kind(c.list_requests()), (401, ErrorKind::AuthExpired));
}

#[test]
fn roles_gate_learner_endpoints() {
    let fleet = Fleet::start(1);
    let reqs = fleet.seed_requests(1);
    let w = fleet.client("w0");
    let create = CreateRequest { task: task(5), policy_id: None, permitted_workers: vec![] };
    assert_eq!(kind(w.create_request(&create)), (403, ErrorKind::Forbidden));
    assert_eq!(kind(w.publish_policy(snapshot(9, 9).to_bytes())), (403, ErrorKind::Forbidden));
    let claim = w.claim(&reqs[0].request_id).unwrap();
    let up = w.upload(&claim, episode_for(&reqs[0], "w0").to_jsonl()).unwrap();
    assert_eq!(kind(w.recording(&up.recording_id)), (403, ErrorKind::Forbidden));
    let bytes = fleet.client("learner").recording(&up.recording_id).unwrap();
    assert_eq!(bytes, episode_for(&reqs[0], "w0").to_jsonl());
}

#[test]
fn claim_upload_lifecycle_over_http() {
    let fleet = Fleet::start(2);
    let reqs = fleet.seed_requests(2);
    let (w0, w1) = (fleet.client("w0"), fleet.client("w1"));
    assert_eq!(w0.list_requests().unwrap().len(), 2);
    let claim = w0.claim(&reqs[0].request_id).unwrap();
    assert_eq!(kind(w1.claim(&reqs[0].request_id)), (409, ErrorKind::Conflict));
    let renewed = w0.renew(&claim).unwrap();
    assert!(renewed.expires_at_ms >= claim.expires_at_ms);

    // wrong request in the log
    let wrong = episode_for(&reqs[1], "w0").to_jsonl();
    match w0.upload(&claim, wrong) {
        Err(ClientError::Api { status: 422, body }) => {
            assert_eq!(body.error, ErrorKind::ValidationFailed);
            assert!(!body.violations.is_empty());
        }
        other => panic!("{other:?}"),
    }
    let log = episode_for(&reqs[0], "w0").to_jsonl();
    let up = w0.upload(&claim, log.clone()).unwrap();
    assert!(!up.duplicate);
    let dup = w0.upload(&claim, log).unwrap();
    assert!(dup.duplicate);
    assert_eq!(dup.recording_id, up.recording_id);
    let left: Vec<_> = w1.list_requests().unwrap().into_iter().map(|r| r.request_id).collect();
    assert_eq!(left, vec![reqs[1].request_id.clone()]);

    let stats = w1.stats().unwrap();
    let row = stats.workers.iter().find(|s| s.worker_id == "w0").unwrap();
    assert_eq!(row.recording_count, 1);
    assert!(stats.workers.iter().any(|s| s.worker_id == "w1" && s.recording_count == 0));
}

#[test]
fn release_reopens_over_http() {
    let fleet = Fleet::start(2);
    let reqs = fleet.seed_requests(1);
    let (w0, w1) = (fleet.client("w0"), fleet.client("w1"));
    let claim = w0.claim(&reqs[0].request_id).unwrap();
    assert_eq!(kind(w1.release(&claim)).1, ErrorKind::ClaimInvalid);
    w0.release(&claim).unwrap();
    let r = &w1.list_requests().unwrap()[0];
    assert_eq!(r.state, RequestState::Open);
    w1.claim(&r.request_id).unwrap();
}

#[test]
fn oversized_upload_is_a_validation_failure() {
    let fleet = Fleet::start(1);
    let reqs = fleet.seed_requests(1);
    let w = fleet.client("w0");
    let claim = w.claim(&reqs[0].request_id).unwrap();
    let big = vec![b'x'; MAX_UPLOAD_BYTES + 1];
    assert_eq!(kind(w.upload(&claim, big)), (422, ErrorKind::ValidationFailed));
    // the claim is still usable
    w.upload(&claim, episode_for(&reqs[0], "w0").to_jsonl()).unwrap();
}

#[test]
fn schema_errors_name_the_field() {
    let fleet = Fleet::start(0);
    let learner = fleet.client("learner");
    let resp = reqwest::blocking::Client::new()
        .post(format!("{}/v1/requests", fleet.server.url()))
        .bearer_auth(learner.token().unwrap())
        .body(r#"{"format_version":1,"task":{"episode_count":1}}"#)
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: ErrorBody = resp.json().unwrap();
    assert_eq!(body.error, ErrorKind::BadRequest);
    assert!(body.message.contains("task.layout_seed"), "{}", body.message);
}

#[test]
fn policies_download_with_verified_hash() {
    let fleet = Fleet::start(1);
    let learner = fleet.client("learner");
    let w = fleet.client("w0");
    assert_eq!(kind(w.policy(None, None)).1, ErrorKind::NotFound);
    let p1 = learner.publish_policy(snapshot(1, 1).to_bytes()).unwrap();
    let p2 = learner.publish_policy(snapshot(2, 2).to_bytes()).unwrap();
    assert!(p2.policy_id > p1.policy_id);
    let again = learner.publish_policy(snapshot(2, 2).to_bytes()).unwrap();
    assert!(again.existing);
    let latest = w.policy(None, None).unwrap();
    assert_eq!((latest.policy_id, latest.content_hash.clone()), (2, p2.content_hash.clone()));
    let first = w.policy(Some(1), Some(&p1.content_hash)).unwrap();
    assert_eq!(first.bytes, snapshot(1, 1).to_bytes());
    assert!(matches!(w.policy(Some(1), Some(&p2.content_hash)), Err(ClientError::HashMismatch { .. })));
}

#[test]
fn events_long_poll_wakes_on_new_events() {
    let fleet = Fleet::start(0);
    let learner = fleet.client("learner");
    learner.publish_policy(snapshot(1, 1).to_bytes()).unwrap();
    let cursor = learner.events(0, 0).unwrap().last_cursor;

    // times out empty
    let t = Instant::now();
    let r = learner.events(cursor, 300).unwrap();
    assert!(r.events.is_empty());
    assert!(t.elapsed() >= Duration::from_millis(250));

    let poller = learner.clone();
    let h = std::thread::spawn(move || {
        let t = Instant::now();
        (poller.events(cursor, 10_000).unwrap(), t.elapsed())
    });
    std::thread::sleep(Duration::from_millis(200));
    learner.create_request(&CreateRequest { task: task(3), policy_id: None, permitted_workers: vec![] }).unwrap();
    let (r, waited) = h.join().unwrap();
    assert!(waited < Duration::from_secs(5), "{waited:?}");
    assert_eq!(r.events.len(), 1);
    assert_eq!(r.events[0].kind, EventKind::RequestCreated);
    assert_eq!(r.events[0].cursor, cursor + 1);
}

// ---------------------------------------------------------------- teleop

mod ws {
    use super::*;
    use futures::{SinkExt, StreamExt};
    use tokio_tungstenite::tungstenite::Message;

    pub type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

    pub fn teleop_fleet() -> Fleet {
        Fleet::start_with(2, |c| {
            c.sim = SimConfig::default().noiseless();
            c.teleop_tick_ms = Some(5);
        })
    }

    pub fn teleop_request(fleet: &Fleet) -> RecordingRequest {
        let task = TaskDescriptor { controller: Controller::Teleop, gen_config: Some(suites::empty_room()), ..TaskDescriptor::policy_episode(11) };
        fleet.client("learner").create_request(&CreateRequest { task, policy_id: None, permitted_workers: vec![] }).unwrap()
    }

    pub async fn connect(fleet: &Fleet, claim_id: &str, token: &str) -> Result<Socket, tokio_tungstenite::tungstenite::Error> {
        let url = format!("ws://{}/v1/teleop/{claim_id}?token={token}", fleet.server.addr);
        tokio_tungstenite::connect_async(url).await.map(|(s, _)| s)
    }

    pub async fn next_state(s: &mut Socket) -> Option<serde_json::Value> {
        loop {
            match tokio::time::timeout(Duration::from_secs(10), s.next()).await.ok()?? {
                Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
                Ok(Message::Close(_)) | Err(_) => return None,
                Ok(_) => continue,
            }
        }
    }

    pub async fn send(s: &mut Socket, v: &impl serde::Serialize) {
        s.send(Message::Text(String::from_utf8(fleetnav::wire::encode(v)).unwrap().into())).await.unwrap();
    }

    pub use fleetnav_core::protocol::RecordingRequest;
}

use ws::*;

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap().block_on(f)
}

#[test]
fn teleop_drive_review_and_upload() {
    let fleet = teleop_fleet();
    let req = teleop_request(&fleet);
    let w = fleet.client("w0");
    // headless workers never take teleop tasks, but a human's claim does
    let claim = w.claim(&req.request_id).unwrap();
    let token = w.token().unwrap().to_string();
    block_on(async {
        let mut s = connect(&fleet, &claim.claim_id, &token).await.unwrap();
        // one session per claim
        assert!(connect(&fleet, &claim.claim_id, &token).await.is_err());
        let first = next_state(&mut s).await.unwrap();
        let session_id = first["session_id"].as_str().unwrap().to_string();
        let mut seq = 0;
        let mut last_step = 0;
        let end = loop {
            seq += 1;
            send(&mut s, &TeleopFrame { session_id: session_id.clone(), seq, tau_l: 1.0, tau_r: 1.0, buttons: TeleopButtons::default() }).await;
            let f: StateFrame = serde_json::from_value(next_state(&mut s).await.unwrap()).unwrap();
            assert!(f.step >= last_step, "frames arrive in step order");
            last_step = f.step;
            if f.status != EpisodeStatus::Running {
                break f;
            }
        };
        assert_eq!(end.status, EpisodeStatus::AwaitingReview);
        assert_eq!(end.stop_reason, Some(StopReason::GoalReached));
        send(&mut s, &TeleopReview { session_id, upload: true }).await;
        let done = next_state(&mut s).await.unwrap();
        assert_eq!(done["status"], "uploaded");
        assert!(done["recording_id"].is_string());
    });
    let learner = fleet.client("learner");
    let events = learner.events(0, 0).unwrap().events;
    let up = events.iter().find(|e| e.kind == EventKind::RecordingUploaded).unwrap();
    let bytes = learner.recording(up.recording_id.as_ref().unwrap()).unwrap();
    let log = fleetnav_core::episode::EpisodeLog::from_jsonl(&bytes).unwrap();
    assert_eq!(log.header.controller, Controller::Teleop);
    assert_eq!(log.footer.stop_reason, StopReason::GoalReached);
}

#[test]
fn teleop_cancel_reopens_the_request() {
    let fleet = teleop_fleet();
    let req = teleop_request(&fleet);
    let w = fleet.client("w0");
    let claim = w.claim(&req.request_id).unwrap();
    let token = w.token().unwrap().to_string();
    block_on(async {
        let mut s = connect(&fleet, &claim.claim_id, &token).await.unwrap();
        let first = next_state(&mut s).await.unwrap();
        let session_id = first["session_id"].as_str().unwrap().to_string();
        let buttons = TeleopButtons { stop: false, cancel: true };
        send(&mut s, &TeleopFrame { session_id, seq: 1, tau_l: 0.0, tau_r: 0.0, buttons }).await;
        let mut last = None;
        while let Some(v) = next_state(&mut s).await {
            last = Some(v);
        }
        let last = last.unwrap();
        assert_eq!(last["status"], "discarded");
        assert_eq!(last["stop_reason"], "user_cancel");
    });
    let r = fleet.client("w1").list_requests().unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].state, RequestState::Open);
    assert!(fleet.server.state.store().recordings().is_empty());
}

#[test]
fn teleop_requires_the_claim_holder() {
    let fleet = teleop_fleet();
    let req = teleop_request(&fleet);
    let claim = fleet.client("w0").claim(&req.request_id).unwrap();
    let other = fleet.client("w1");
    block_on(async {
        assert!(connect(&fleet, &claim.claim_id, other.token().unwrap()).await.is_err());
        assert!(connect(&fleet, "clm-nope", other.token().unwrap()).await.is_err());
    });
}

#[test]
fn teleop_drop_cancels_after_grace() {
    let fleet = teleop_fleet();
    let req = teleop_request(&fleet);
    let w = fleet.client("w0");
    let claim = w.claim(&req.request_id).unwrap();
    let token = w.token().unwrap().to_string();
    block_on(async {
        let mut s = connect(&fleet, &claim.claim_id, &token).await.unwrap();
        next_state(&mut s).await.unwrap();
        drop(s);
    });
    std::thread::sleep(Duration::from_secs(3));
    assert_eq!(fleet.server.state.store().request(&req.request_id).unwrap().state, RequestState::Claimed, "paused, not yet cancelled");
    std::thread::sleep(Duration::from_secs(9));
    assert_eq!(fleet.server.state.store().request(&req.request_id).unwrap().state, RequestState::Open);
}
