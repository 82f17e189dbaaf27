//! HTTP front end of the fleet server.
//!
//! Every mutation goes through one mutex around [`Store`], which is the single
//! arbitration point for claims.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::watch;

use fleetnav_core::env::{generate_layout, GenConfig};
use fleetnav_core::episode::Controller;
use fleetnav_core::protocol::{ProtocolError, RequestState};
use fleetnav_core::rollout::RolloutMeta;
use fleetnav_core::sim::SimConfig;

use crate::api::*;
use crate::auth::{AuthError, TokenClaims};
use crate::store::{now_ms, Store, StoreConfig, StoreError};
use crate::teleop::{SessionEnd, TeleopSession, RECONNECT_GRACE_MS};
use crate::wire;

pub const MAX_EVENT_BATCH: usize = 1000;
pub const MAX_POLL_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub store: StoreConfig,
    /// Simulator and generator used for teleoperation sessions.
    pub sim: SimConfig,
    pub gen: GenConfig,
    /// Wall-clock period of a teleoperation tick; the simulator step when absent.
    pub teleop_tick_ms: Option<u64>,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), store: StoreConfig::default(), sim: SimConfig::default(), gen: GenConfig::default(), teleop_tick_ms: None }
    }
}

pub struct AppState {
    store: Mutex<Store>,
    cursor: watch::Sender<u64>,
    config: ServerConfig,
    teleop: Mutex<HashMap<String, Arc<tokio::sync::Mutex<TeleopSession>>>>,
}

impl AppState {
    pub fn open(config: ServerConfig) -> Result<Arc<Self>, StoreError> {
        let store = Store::open(&config.data_dir, config.store)?;
        let (cursor, _) = watch::channel(store.last_cursor());
        Ok(Arc::new(Self { store: Mutex::new(store), cursor, config, teleop: Mutex::new(HashMap::new()) }))
    }

    pub fn store(&self) -> MutexGuard<'_, Store> {
        // a panic while holding the lock leaves the journal authoritative; keep serving
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut Store) -> Result<T, StoreError>) -> Result<T, ApiError> {
        let mut s = self.store();
        let out = f(&mut s);
        self.cursor.send_replace(s.last_cursor());
        Ok(out?)
    }
}

#[derive(Debug)]
pub struct ApiError(pub StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self(e)
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        Self(e.into())
    }
}

fn error_response(status: StatusCode, kind: ErrorKind, message: String, violations: Vec<String>) -> Response {
    (status, Json(ErrorBody { error: kind, message, violations })).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let msg = self.0.to_string();
        let (status, kind, violations) = match self.0 {
            StoreError::Auth(AuthError::AuthFailed) => (StatusCode::UNAUTHORIZED, ErrorKind::AuthFailed, vec![]),
            StoreError::Auth(AuthError::AuthExpired) => (StatusCode::UNAUTHORIZED, ErrorKind::AuthExpired, vec![]),
            StoreError::Auth(AuthError::InvalidToken) => (StatusCode::UNAUTHORIZED, ErrorKind::Unauthorized, vec![]),
            StoreError::Protocol(ProtocolError::Conflict) => (StatusCode::CONFLICT, ErrorKind::Conflict, vec![]),
            StoreError::Protocol(ProtocolError::NotPermitted) => (StatusCode::FORBIDDEN, ErrorKind::NotPermitted, vec![]),
            StoreError::Protocol(ProtocolError::ClaimInvalid) => (StatusCode::CONFLICT, ErrorKind::ClaimInvalid, vec![]),
            StoreError::Protocol(ProtocolError::InvalidTransition { .. }) => (StatusCode::CONFLICT, ErrorKind::Conflict, vec![]),
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, ErrorKind::NotFound, vec![]),
            StoreError::ValidationFailed(v) => (StatusCode::UNPROCESSABLE_ENTITY, ErrorKind::ValidationFailed, v),
            StoreError::Forbidden(_) => (StatusCode::FORBIDDEN, ErrorKind::Forbidden, vec![]),
            StoreError::BadRequest(_) => (StatusCode::BAD_REQUEST, ErrorKind::BadRequest, vec![]),
            StoreError::Storage(_) | StoreError::Corrupt { .. } => {
                tracing::error!(error = %msg, "storage failure");
                (StatusCode::INTERNAL_SERVER_ERROR, ErrorKind::StorageFailed, vec![])
            }
        };
        error_response(status, kind, msg, violations)
    }
}

/// Authenticated caller, from `Authorization: Bearer <token>` (or `?token=` on
/// WebSocket upgrades, which browsers cannot decorate with headers).
pub struct Caller(pub TokenClaims);

impl FromRequestParts<Arc<AppState>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let header_token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::to_owned);
        let token = header_token.or_else(|| {
            parts.uri.query().and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("token=").map(str::to_owned)))
        });
        let token = token.ok_or(AuthError::InvalidToken)?;
        Ok(Caller(state.store().authenticate(&token, now_ms())?))
    }
}

impl Caller {
    fn require_learner(&self) -> Result<(), ApiError> {
        if self.0.role != Role::Learner {
            return Err(StoreError::Forbidden("learner role required").into());
        }
        Ok(())
    }
}

/// JSON body decoded through the wire codec, so schema errors carry field paths.
pub struct WireJson<T>(pub T);

impl<T: serde::de::DeserializeOwned, S: Send + Sync> axum::extract::FromRequest<S> for WireJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = axum::body::Bytes::from_request(req, state)
            .await
            .map_err(|e| StoreError::BadRequest(e.to_string()))?;
        wire::decode(&bytes).map(WireJson).map_err(|e| StoreError::BadRequest(e.to_string()).into())
    }
}

fn wire_json<T: serde::Serialize>(v: &T) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], wire::encode(v)).into_response()
}

async fn login(State(st): State<Arc<AppState>>, WireJson(req): WireJson<LoginRequest>) -> Result<Response, ApiError> {
    let r = st.store().login(&req.username, &req.password, now_ms())?;
    Ok(wire_json(&r))
}

async fn list_requests(State(st): State<Arc<AppState>>, caller: Caller) -> Result<Response, ApiError> {
    let requests = st.store().list_requests(&caller.0.worker_id);
    Ok(wire_json(&RequestList { requests }))
}

async fn create_request(State(st): State<Arc<AppState>>, caller: Caller, WireJson(req): WireJson<CreateRequest>) -> Result<Response, ApiError> {
    caller.require_learner()?;
    let r = st.mutate(|s| s.create_request(req, now_ms()))?;
    Ok((StatusCode::CREATED, wire_json(&r)).into_response())
}

async fn claim(State(st): State<Arc<AppState>>, caller: Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let claim = st.mutate(|s| s.claim(&id, &caller.0.worker_id, now_ms()))?;
    Ok(wire_json(&ClaimResponse { claim }))
}

async fn renew(State(st): State<Arc<AppState>>, caller: Caller, Path(id): Path<String>, WireJson(body): WireJson<ReleaseRequest>) -> Result<Response, ApiError> {
    let claim = st.mutate(|s| s.renew(&id, &body.claim_id, &caller.0.worker_id, now_ms()))?;
    Ok(wire_json(&ClaimResponse { claim }))
}

async fn release(State(st): State<Arc<AppState>>, caller: Caller, Path(id): Path<String>, WireJson(body): WireJson<ReleaseRequest>) -> Result<Response, ApiError> {
    st.mutate(|s| s.release(&id, &body.claim_id, &caller.0.worker_id, now_ms()))?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn upload(State(st): State<Arc<AppState>>, caller: Caller, mut form: Multipart) -> Result<Response, ApiError> {
    let bad = |m: String| ApiError(StoreError::BadRequest(m));
    let mut meta: Option<UploadMetadata> = None;
    let mut episode: Option<Vec<u8>> = None;
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        match field.name() {
            Some("metadata") => {
                let b = field.bytes().await.map_err(|e| bad(e.to_string()))?;
                meta = Some(wire::decode(&b).map_err(|e| bad(e.to_string()))?);
            }
            Some("episode") => {
                let b = field.bytes().await.map_err(|e| {
                    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                        ApiError(StoreError::ValidationFailed(vec![format!("episode exceeds {MAX_UPLOAD_BYTES} bytes")]))
                    } else {
                        bad(e.to_string())
                    }
                })?;
                episode = Some(b.to_vec());
            }
            _ => {}
        }
    }
    let meta = meta.ok_or_else(|| bad("missing metadata part".into()))?;
    let episode = episode.ok_or_else(|| bad("missing episode part".into()))?;
    let st2 = st.clone();
    let worker = caller.0.worker_id.clone();
    let r = tokio::task::spawn_blocking(move || st2.mutate(|s| s.upload(&meta, &worker, &episode, now_ms())))
        .await
        .map_err(|e| bad(e.to_string()))??;
    let status = if r.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, wire_json(&r)).into_response())
}

async fn get_recording(State(st): State<Arc<AppState>>, caller: Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    caller.require_learner()?;
    let (meta, bytes) = st.store().recording(&id)?;
    let mut h = HeaderMap::new();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    h.insert(CONTENT_HASH_HEADER, HeaderValue::from_str(&meta.content_hash).expect("hex is a valid header"));
    Ok((h, bytes).into_response())
}

async fn publish_policy(State(st): State<Arc<AppState>>, caller: Caller, body: axum::body::Bytes) -> Result<Response, ApiError> {
    caller.require_learner()?;
    let r = st.mutate(|s| s.publish_policy(&body, now_ms()))?;
    let status = if r.existing { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, wire_json(&r)).into_response())
}

async fn get_policy(State(st): State<Arc<AppState>>, _caller: Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = match id.as_str() {
        "latest" => None,
        s => Some(s.parse::<u64>().map_err(|_| StoreError::NotFound(format!("policy {s}")))?),
    };
    let (meta, bytes) = st.store().policy(id)?;
    let mut h = HeaderMap::new();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    h.insert(CONTENT_HASH_HEADER, HeaderValue::from_str(&meta.content_hash).expect("hex is a valid header"));
    h.insert(POLICY_ID_HEADER, HeaderValue::from(meta.policy_id));
    Ok((h, bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    #[serde(default)]
    timeout_ms: u64,
}

async fn events(State(st): State<Arc<AppState>>, _caller: Caller, Query(q): Query<EventsQuery>) -> Result<Response, ApiError> {
    let mut rx = st.cursor.subscribe();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.timeout_ms.min(MAX_POLL_TIMEOUT_MS));
    loop {
        let (events, last_cursor) = {
            let s = st.store();
            (s.events_since(q.since, MAX_EVENT_BATCH), s.last_cursor())
        };
        if !events.is_empty() || tokio::time::Instant::now() >= deadline {
            return Ok(wire_json(&EventsResponse { events, last_cursor }));
        }
        rx.mark_unchanged();
        if tokio::time::timeout_at(deadline, rx.changed()).await.is_err() {
            let last_cursor = st.store().last_cursor();
            return Ok(wire_json(&EventsResponse { events: Vec::new(), last_cursor }));
        }
    }
}

async fn stats(State(st): State<Arc<AppState>>, _caller: Caller) -> Result<Response, ApiError> {
    Ok(wire_json(&StatsResponse { workers: st.store().worker_stats() }))
}

async fn health() -> &'static str {
    "ok"
}

async fn teleop(State(st): State<Arc<AppState>>, caller: Caller, Path(claim_id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    // the caller must hold a live claim with this id
    let (request_id, task) = {
        let s = st.store();
        let now = now_ms();
        let r = s
            .requests()
            .values()
            .find(|r| r.claim.as_ref().is_some_and(|c| c.claim_id == claim_id))
            .ok_or_else(|| StoreError::NotFound(format!("claim {claim_id}")))?;
        let c = r.claim.as_ref().expect("matched on claim");
        if c.worker_id != caller.0.worker_id || !c.is_live(now) || r.state != RequestState::Claimed {
            return Err(StoreError::Protocol(ProtocolError::ClaimInvalid).into());
        }
        (r.request_id.clone(), r.task.clone())
    };
    let existing = st.teleop.lock().unwrap_or_else(|e| e.into_inner()).get(&claim_id).cloned();
    let session = match existing {
        Some(s) => s,
        None => {
            let gen = task.gen_config.clone().unwrap_or_else(|| st.config.gen.clone());
            let layout = generate_layout(&gen, task.layout_seed).map_err(|e| StoreError::BadRequest(e.to_string()))?;
            let meta = RolloutMeta {
                worker_id: caller.0.worker_id.clone(),
                request_id: request_id.clone(),
                policy_id: None,
                controller: Controller::Teleop,
                start_time_ms: now_ms(),
                record_true_pose: true,
            };
            let session_id = format!("tls-{claim_id}");
            let sess = TeleopSession::start(session_id, claim_id.clone(), &layout, &st.config.sim, task.layout_seed, meta, now_ms())
                .map_err(|e| StoreError::BadRequest(e.to_string()))?;
            let sess = Arc::new(tokio::sync::Mutex::new(sess));
            st.teleop.lock().unwrap_or_else(|e| e.into_inner()).insert(claim_id.clone(), sess.clone());
            sess
        }
    };
    // held for the life of the connection, so a second socket sees a conflict
    let guard = session.clone().try_lock_owned().map_err(|_| StoreError::Protocol(ProtocolError::Conflict))?;
    let worker = caller.0.worker_id.clone();
    Ok(ws.on_upgrade(move |socket| run_teleop(st, socket, session, guard, request_id, claim_id, worker)))
}

async fn send_json<T: serde::Serialize>(socket: &mut WebSocket, v: &T) -> bool {
    let text = String::from_utf8(wire::encode(v)).expect("json is utf-8");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn finish_session(st: &Arc<AppState>, claim_id: &str, request_id: &str, worker: &str, end: SessionEnd, upload: bool) -> Option<String> {
    st.teleop.lock().unwrap_or_else(|e| e.into_inner()).remove(claim_id);
    let st = st.clone();
    let (claim_id, request_id, worker) = (claim_id.to_owned(), request_id.to_owned(), worker.to_owned());
    tokio::task::spawn_blocking(move || match end {
        SessionEnd::Review(log) if upload => {
            let meta = UploadMetadata { claim_id: claim_id.clone(), request_id: request_id.clone() };
            match st.mutate(|s| s.upload(&meta, &worker, &log.to_jsonl(), now_ms())) {
                Ok(r) => Some(r.recording_id),
                Err(e) => {
                    tracing::warn!(error = ?e.0, "teleop upload rejected; reopening request");
                    let _ = st.mutate(|s| s.release(&request_id, &claim_id, &worker, now_ms()));
                    None
                }
            }
        }
        _ => {
            let _ = st.mutate(|s| s.release(&request_id, &claim_id, &worker, now_ms()));
            None
        }
    })
    .await
    .ok()
    .flatten()
}

async fn run_teleop(
    st: Arc<AppState>,
    mut socket: WebSocket,
    session: Arc<tokio::sync::Mutex<TeleopSession>>,
    mut sess: tokio::sync::OwnedMutexGuard<TeleopSession>,
    request_id: String,
    claim_id: String,
    worker: String,
) {
    let tick_ms = st.config.teleop_tick_ms.unwrap_or((st.config.sim.dt * 1000.0).round() as u64).max(1);
    let mut ticker = tokio::time::interval(Duration::from_millis(tick_ms));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    // review phase: the episode ended and the client must decide
    let mut pending: Option<SessionEnd> = None;
    loop {
        tokio::select! {
            msg = socket.recv() => {
                let Some(Ok(msg)) = msg else { break };
                let text = match msg {
                    Message::Text(t) => t.to_string(),
                    Message::Close(_) => break,
                    _ => continue,
                };
                match wire::decode::<TeleopClientMessage>(text.as_bytes()) {
                    Ok(TeleopClientMessage::Frame(f)) => {
                        sess.on_frame(&f, now_ms());
                    }
                    Ok(TeleopClientMessage::Review(r)) if r.session_id == sess.session_id => {
                        if let Some(end) = pending.take() {
                            let rec = finish_session(&st, &claim_id, &request_id, &worker, end, r.upload).await;
                            let status = if rec.is_some() { EpisodeStatus::Uploaded } else { EpisodeStatus::Discarded };
                            let _ = send_json(&mut socket, &serde_json::json!({
                                "session_id": sess.session_id, "status": status, "recording_id": rec,
                            })).await;
                            let _ = socket.send(Message::Close(None)).await;
                            return;
                        }
                    }
                    _ => {}
                }
            }
            _ = ticker.tick(), if sess.is_running() => {
                match sess.tick(now_ms()) {
                    Ok(frame) => {
                        if !send_json(&mut socket, &frame).await {
                            break;
                        }
                        match sess.take_end() {
                            Some(SessionEnd::Cancelled) => {
                                finish_session(&st, &claim_id, &request_id, &worker, SessionEnd::Cancelled, false).await;
                                let _ = socket.send(Message::Close(None)).await;
                                return;
                            }
                            Some(end) => pending = Some(end),
                            None => {}
                        }
                    }
                    Err(e) => {
                        tracing::error!(error = %e, "teleop simulation failed");
                        sess.abandon();
                        finish_session(&st, &claim_id, &request_id, &worker, SessionEnd::Cancelled, false).await;
                        return;
                    }
                }
            }
        }
    }
    // connection dropped: pause, then cancel unless the client reconnects
    let pending_review = pending.is_some();
    drop(sess);
    let grace = Duration::from_millis(RECONNECT_GRACE_MS);
    let st2 = st.clone();
    tokio::spawn(async move {
        tokio::time::sleep(grace).await;
        let mut s = session.lock().await;
        let still_registered = st2.teleop.lock().unwrap_or_else(|e| e.into_inner()).contains_key(&claim_id);
        if still_registered && (s.is_running() || pending_review) {
            s.abandon();
            tracing::info!(claim_id = %claim_id, "teleop session dropped; cancelling");
            finish_session(&st2, &claim_id, &request_id, &worker, SessionEnd::Cancelled, false).await;
        }
    });
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/auth/login", post(login))
        .route("/v1/requests", get(list_requests).post(create_request))
        .route("/v1/requests/{id}/claim", post(claim))
        .route("/v1/requests/{id}/renew", post(renew))
        .route("/v1/requests/{id}/release", post(release))
        .route("/v1/recordings", post(upload))
        .route("/v1/recordings/{id}", get(get_recording))
        .route("/v1/policies", post(publish_policy))
        .route("/v1/policies/{id}", get(get_policy))
        .route("/v1/events", get(events))
        .route("/v1/stats/workers", get(stats))
        .route("/v1/teleop/{claim_id}", get(teleop))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES + (1 << 20)))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread, for tests and in-process orchestration.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn spawn(config: ServerConfig, addr: SocketAddr) -> Result<Self, StoreError> {
        let state = AppState::open(config)?;
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let st = state.clone();
        let thread = std::thread::Builder::new().name("fleet-server".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(listener, st, async move {
                    let _ = rx.await;
                })
                .await
            })
        })?;
        Ok(Self { addr, state, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}
