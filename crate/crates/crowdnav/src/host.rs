//! The session host: owns the registry, launches workers, reaps expired
//! sessions and serves the realtime channel.
//!
//! | route       | answer |
//! |-------------|--------|
//! | `/session`  | 200 ready, 202 pending, 429 full (with `Retry-After`), 400 bad request |
//! | `/realtime` | websocket for `session_id` |
//! | `/status`   | registry census; `?all=1` lists finished sessions too |
//! | `/summary`  | metrics of a finished session |
//! | `/scene`    | map and scenario of a session, for rendering |

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use crowdnav_core::metrics::EndReason;
use crowdnav_core::session::{
    CloseReason, HostStatus, LaunchRequest, Millis, RequestOutcome, SessionPhase, SessionRecord, SessionRegistry,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Notify;
use tracing::{info, warn};

use crate::assets::AssetStore;
use crate::config::{HostSettings, Pacing};
use crate::protocol::{ClientMsg, ServerMsg};
use crate::telemetry::{recover_dir, DataLayout};
use crate::worker::{self, apply_overrides, Launch, WorkerHandle, WorkerOutcome, WorkerParams};

/// Wire form of a `/session` answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionReply {
    Ready {
        session_id: String,
        host_id: String,
        /// Path of the websocket, relative to whoever answered.
        realtime: String,
    },
    Pending {
        session_id: String,
        host_id: String,
    },
    Full {
        retry_after_s: u64,
    },
    Rejected {
        error: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusReply {
    #[serde(flatten)]
    pub status: HostStatus,
    /// Worker tasks still alive, whatever the registry says.
    pub live_workers: usize,
    pub pacing: Pacing,
}

pub struct HostState {
    settings: HostSettings,
    store: AssetStore,
    layout: DataLayout,
    registry: Mutex<SessionRegistry>,
    workers: Mutex<HashMap<String, WorkerHandle>>,
    launch: Notify,
    epoch: Instant,
}

impl HostState {
    /// Milliseconds on a monotonic clock that starts with the host.
    pub fn now(&self) -> Millis {
        self.epoch.elapsed().as_millis() as Millis
    }

    pub fn settings(&self) -> &HostSettings {
        &self.settings
    }

    pub fn layout(&self) -> &DataLayout {
        &self.layout
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, SessionRegistry> {
        self.registry.lock().expect("registry lock")
    }

    fn workers(&self) -> std::sync::MutexGuard<'_, HashMap<String, WorkerHandle>> {
        self.workers.lock().expect("workers lock")
    }

    pub fn status(&self, all: bool) -> StatusReply {
        let status = self.registry().status_with(all);
        StatusReply {
            status,
            live_workers: self.workers().len(),
            pacing: self.settings.pacing,
        }
    }

    /// Simulated seconds a session of this scenario may run.
    fn sim_limit(&self, scenario_limit: f64) -> f64 {
        self.settings.time_limit.min(scenario_limit)
    }

    fn deadline_limit(&self, scenario_limit: f64) -> f64 {
        let base = self.sim_limit(scenario_limit);
        match self.settings.pacing {
            Pacing::Realtime => base,
            Pacing::Lockstep => base * self.settings.lockstep_deadline_factor,
        }
    }
}

/// Builds the shared state: validates settings, loads assets and turns
/// orphaned logs from an earlier run into partial summaries.
pub fn prepare(settings: HostSettings) -> anyhow::Result<Arc<HostState>> {
    settings.validate()?;
    let mut store = AssetStore::builtin();
    if let Some(dir) = &settings.asset_dir {
        store.load_dir(dir)?;
    }
    let layout = DataLayout::new(&settings.data_dir);
    let recovered = recover_dir(&layout)?;
    if !recovered.is_empty() {
        warn!(count = recovered.len(), "recovered logs without summaries");
    }
    let registry = SessionRegistry::new(settings.registry_config())?;
    Ok(Arc::new(HostState {
        settings,
        store,
        layout,
        registry: Mutex::new(registry),
        workers: Mutex::new(HashMap::new()),
        launch: Notify::new(),
        epoch: Instant::now(),
    }))
}

pub fn router(state: Arc<HostState>) -> Router {
    Router::new()
        .route("/session", get(session))
        .route("/status", get(status))
        .route("/realtime", get(realtime))
        .route("/summary", get(summary))
        .route("/scene", get(scene))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then stops every worker, waits for
/// their logs to close and returns.
pub async fn serve(
    state: Arc<HostState>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let launcher = tokio::spawn(launcher(state.clone()));
    let reaper = tokio::spawn(reaper(state.clone()));
    let addr = listener.local_addr()?;
    info!(host = %state.settings.host_id, %addr, "host listening");

    let (stopped_tx, stopped_rx) = tokio::sync::oneshot::channel::<()>();
    let st = state.clone();
    let server = axum::serve(listener, router(state.clone())).with_graceful_shutdown(async move {
        shutdown.await;
        drain(&st).await;
        let _ = stopped_tx.send(());
    });
    server.await?;
    let _ = stopped_rx.await;
    launcher.abort();
    reaper.abort();
    Ok(())
}

/// Stops all sessions and waits up to five seconds for them to finish.
async fn drain(state: &Arc<HostState>) {
    let now = state.now();
    {
        let mut reg = state.registry();
        let queued: Vec<String> = reg
            .records()
            .filter(|r| matches!(r.state, SessionPhase::Queued))
            .map(|r| r.session_id.clone())
            .collect();
        for id in queued {
            let _ = reg.close(&id, CloseReason::Shutdown, now);
        }
    }
    for w in state.workers().values() {
        w.stop(EndReason::Closed);
    }
    let give_up = Instant::now() + Duration::from_secs(5);
    while !state.workers().is_empty() && Instant::now() < give_up {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn reply(code: StatusCode, body: SessionReply) -> Response {
    let retry = match &body {
        SessionReply::Full { retry_after_s } => Some(*retry_after_s),
        _ => None,
    };
    let mut res = (code, Json(body)).into_response();
    if let Some(s) = retry {
        res.headers_mut().insert(header::RETRY_AFTER, s.into());
    }
    res
}

fn rejected(error: impl ToString) -> Response {
    reply(StatusCode::BAD_REQUEST, SessionReply::Rejected { error: error.to_string() })
}

async fn session(State(state): State<Arc<HostState>>, Query(params): Query<Vec<(String, String)>>) -> Response {
    let req = match LaunchRequest::from_params(params.iter().map(|(k, v)| (k.as_str(), v.as_str()))) {
        Ok(r) => r,
        Err(e) => return rejected(e),
    };
    let Some(scenario) = state.store.scenario(&req.scenario_id) else {
        return rejected(format!("unknown scenario {:?}", req.scenario_id));
    };
    if !req.overrides.is_empty() {
        let s = apply_overrides(scenario, &req.overrides);
        if let Err(v) = state.store.validate(&s, &state.settings.nav) {
            let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
            return rejected(msgs.join("; "));
        }
    }
    let limit = state.deadline_limit(scenario.time_limit);
    let now = state.now();
    let outcome = state.registry().request_with_limit(req, now, limit);
    let host_id = state.settings.host_id.clone();
    match outcome {
        RequestOutcome::Attach { session_id, ready: true } => reply(
            StatusCode::OK,
            SessionReply::Ready {
                realtime: format!("/realtime?session_id={session_id}"),
                session_id,
                host_id,
            },
        ),
        RequestOutcome::Attach { session_id, ready: false } => {
            reply(StatusCode::ACCEPTED, SessionReply::Pending { session_id, host_id })
        }
        RequestOutcome::Pending { session_id } => {
            state.launch.notify_one();
            reply(StatusCode::ACCEPTED, SessionReply::Pending { session_id, host_id })
        }
        RequestOutcome::Capacity { retry_after_s } => {
            reply(StatusCode::TOO_MANY_REQUESTS, SessionReply::Full { retry_after_s })
        }
    }
}

#[derive(Debug, Deserialize)]
struct StatusQuery {
    #[serde(default)]
    all: Option<String>,
}

async fn status(State(state): State<Arc<HostState>>, Query(q): Query<StatusQuery>) -> Json<StatusReply> {
    let all = q.all.is_some_and(|v| v != "0" && v != "false");
    Json(state.status(all))
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session_id: Option<String>,
    #[serde(default)]
    scenario: Option<String>,
}

fn not_found(what: impl ToString) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": what.to_string() }))).into_response()
}

async fn summary(State(state): State<Arc<HostState>>, Query(q): Query<SessionQuery>) -> Response {
    let Some(id) = q.session_id else {
        return rejected("session_id is required");
    };
    if state.registry().get(&id).is_none() && !state.layout.summary_path(&id).exists() {
        return not_found(format!("no session {id:?}"));
    }
    match tokio::fs::read(state.layout.summary_path(&id)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(_) => not_found(format!("session {id:?} has no summary yet")),
    }
}

async fn scene(State(state): State<Arc<HostState>>, Query(q): Query<SessionQuery>) -> Response {
    let scenario = match (&q.session_id, &q.scenario) {
        (Some(id), _) => {
            let rec = state.registry().get(id).cloned();
            let Some(rec) = rec else {
                return not_found(format!("no session {id:?}"));
            };
            let Some(s) = state.store.scenario(&rec.request.scenario_id) else {
                return not_found("scenario gone");
            };
            apply_overrides(s, &rec.request.overrides)
        }
        (None, Some(sid)) => match state.store.scenario(sid) {
            Some(s) => s.clone(),
            None => return not_found(format!("unknown scenario {sid:?}")),
        },
        (None, None) => return rejected("session_id or scenario is required"),
    };
    let map = state.store.map_file(&scenario.map);
    Json(json!({ "scenario": scenario, "map": map })).into_response()
}

async fn realtime(
    State(state): State<Arc<HostState>>,
    Query(q): Query<SessionQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let Some(id) = q.session_id else {
        return rejected("session_id is required");
    };
    let handle = state.workers().get(&id).cloned();
    match handle {
        Some(h) => ws.on_upgrade(move |socket| pump(socket, h)),
        None => not_found(format!("session {id:?} is not running")),
    }
}

/// Relays between one websocket and a worker until either side ends.
async fn pump(mut socket: WebSocket, handle: WorkerHandle) {
    use tokio::sync::broadcast::error::RecvError;
    let (first, mut rx) = handle.subscribe();
    let ended = matches!(first, ServerMsg::End { .. });
    if socket.send(Message::Text(first.to_text().into())).await.is_err() || ended {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) => {
                    let end = matches!(m, ServerMsg::End { .. });
                    if socket.send(Message::Text(m.to_text().into())).await.is_err() {
                        return;
                    }
                    if end {
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                }
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match ClientMsg::parse(&text) {
                    Some(ClientMsg::Keys { down }) => handle.send_keys(down),
                    Some(ClientMsg::Ping { id }) => {
                        if socket.send(Message::Text(ServerMsg::Pong { id }.to_text().into())).await.is_err() {
                            return;
                        }
                    }
                    Some(ClientMsg::Unknown) | None => {}
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Takes queued sessions while a launch lane is free. World building runs
/// on the blocking pool so requests stay responsive.
async fn launcher(state: Arc<HostState>) {
    loop {
        let next = state.registry().next_launch();
        match next {
            Some(rec) => {
                tokio::spawn(launch_one(state.clone(), rec));
            }
            None => {
                // lanes full or queue empty; either a request or a finished
                // launch will wake us, and the timeout covers missed wakeups
                let _ = tokio::time::timeout(Duration::from_millis(250), state.launch.notified()).await;
            }
        }
    }
}

async fn launch_one(state: Arc<HostState>, rec: SessionRecord) {
    let id = rec.session_id.clone();
    let st = state.clone();
    let r = rec.clone();
    let prepared = tokio::task::spawn_blocking(move || -> anyhow::Result<(Launch, f64)> {
        let base = st
            .store
            .scenario(&r.request.scenario_id)
            .ok_or_else(|| anyhow::anyhow!("unknown scenario {:?}", r.request.scenario_id))?;
        let scenario = apply_overrides(base, &r.request.overrides);
        let grid = st.store.grid(&scenario.map).expect("scenario map exists");
        let s = &st.settings;
        let limit = st.sim_limit(scenario.time_limit);
        st.layout.create()?;
        let launch = Launch::prepare(
            &st.layout,
            &r.session_id,
            &r.user_id,
            &r.host_id,
            r.request.trial,
            &scenario,
            grid,
            s.world,
            s.nav,
            s.tasks,
            limit,
            s.decimation,
        )?;
        Ok((launch, limit))
    })
    .await;
    let now = state.now();
    let launch = match prepared {
        Ok(Ok((l, _))) => l,
        Ok(Err(e)) => {
            warn!(session = %id, error = %e, "launch failed");
            let _ = state.registry().fail_launch(&id, e.to_string(), now);
            state.launch.notify_one();
            return;
        }
        Err(e) => {
            let _ = state.registry().fail_launch(&id, e.to_string(), now);
            state.launch.notify_one();
            return;
        }
    };
    let params = WorkerParams {
        pacing: state.settings.pacing,
        snapshot_every: state.settings.snapshot_every,
    };
    // register the worker before the record turns running, so anyone who
    // sees "ready" can connect
    let mut reg = state.registry();
    if reg.mark_running(&id).is_err() {
        // expired or closed while launching: end it straight away
        drop(reg);
        let summary = launch.sink.finish(EndReason::Expired, 0, 0.0);
        let _ = crate::telemetry::write_summary(&state.layout, &summary);
        state.launch.notify_one();
        return;
    }
    let (handle, join) = worker::spawn(id.clone(), launch, params, state.layout.clone());
    state.workers().insert(id.clone(), handle);
    drop(reg);
    state.launch.notify_one();
    info!(session = %id, "session running");
    tokio::spawn(finisher(state, id, join));
}

async fn finisher(state: Arc<HostState>, id: String, join: tokio::task::JoinHandle<WorkerOutcome>) {
    let outcome = join.await;
    let now = state.now();
    let mut reg = state.registry();
    state.workers().remove(&id);
    let live = reg.get(&id).is_some_and(|r| !r.state.is_terminal());
    match outcome {
        Ok(o) => {
            info!(session = %id, reason = ?o.reason, "session ended");
            if live {
                let r = match (&o.io_error, o.reason) {
                    (Some(e), _) => reg.close(&id, CloseReason::IoFailure(e.clone()), now),
                    (None, EndReason::Expired) => reg.expire(&id, now),
                    (None, EndReason::Completed) => reg.close(&id, CloseReason::Completed, now),
                    (None, _) => reg.close(&id, CloseReason::Shutdown, now),
                };
                if let Err(e) = r {
                    warn!(session = %id, error = %e, "could not settle session");
                }
            }
        }
        Err(e) => {
            warn!(session = %id, error = %e, "worker died");
            if live {
                let _ = reg.close(&id, CloseReason::IoFailure(e.to_string()), now);
            }
        }
    }
}

/// Expires sessions whose deadline passed. Wakes at the soonest deadline
/// or after one reap period, whichever comes first.
async fn reaper(state: Arc<HostState>) {
    let period = state.settings.reap_period_ms;
    loop {
        let now = state.now();
        let soonest = state
            .registry()
            .records()
            .filter(|r| !r.state.is_terminal())
            .map(|r| r.deadline)
            .min();
        let wait = soonest.map_or(period, |d| d.saturating_sub(now).min(period));
        tokio::time::sleep(Duration::from_millis(wait.max(1))).await;
        let now = state.now();
        let due = state.registry().reap_expired(now);
        if due.is_empty() {
            continue;
        }
        let workers = state.workers();
        for id in due {
            info!(session = %id, "deadline passed");
            if let Some(w) = workers.get(&id) {
                w.stop(EndReason::Expired);
            }
        }
    }
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
