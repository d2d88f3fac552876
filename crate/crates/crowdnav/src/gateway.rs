//! Front door for a pool of hosts. Each user is bound to one host for the
//! sticky window; new users go round robin over healthy hosts. Requests
//! are relayed unchanged apart from the `user_id` query parameter, which
//! is filled in from the cookie when the client did not send one.

use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::ws::{Message as AxMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router as AxRouter};
use crowdnav_core::routing::{PoolStatus, RouteError, Router};
use crowdnav_core::session::Millis;
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message as TMessage;
use tracing::{info, warn};

use crate::config::GatewaySettings;

pub const USER_COOKIE: &str = "crowdnav_uid";

pub struct GatewayState {
    settings: GatewaySettings,
    router: Mutex<Router>,
    http: reqwest::Client,
    epoch: Instant,
}

impl GatewayState {
    pub fn new(settings: GatewaySettings) -> anyhow::Result<Arc<Self>> {
        anyhow::ensure!(!settings.hosts.is_empty(), "gateway needs at least one host");
        let router = Router::new(
            settings.hosts.iter().map(|h| (h.id.clone(), h.url.trim_end_matches('/').to_owned())).collect(),
            settings.sticky_window * 1000,
        );
        let http = reqwest::Client::builder().build()?;
        Ok(Arc::new(Self {
            settings,
            router: Mutex::new(router),
            http,
            epoch: Instant::now(),
        }))
    }

    pub fn now(&self) -> Millis {
        self.epoch.elapsed().as_millis() as Millis
    }

    fn router(&self) -> std::sync::MutexGuard<'_, Router> {
        self.router.lock().expect("router lock")
    }

    pub fn status(&self) -> PoolStatus {
        let now = self.now();
        self.router().status(now)
    }

    /// Host base URL for `user_id`, binding them if needed.
    pub fn route(&self, user_id: &str) -> Result<(String, String), RouteError> {
        let now = self.now();
        let mut r = self.router();
        let a = r.assign(user_id, now)?;
        let h = r.host(a.host);
        Ok((h.host_id.clone(), h.endpoint.clone()))
    }
}

pub fn router(state: Arc<GatewayState>) -> AxRouter {
    AxRouter::new()
        .route("/gateway/status", get(pool_status))
        .route("/realtime", get(ws_relay))
        .fallback(http_relay)
        .with_state(state)
}

pub async fn serve(
    state: Arc<GatewayState>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let prober = tokio::spawn(health_loop(state.clone()));
    info!(addr = %listener.local_addr()?, hosts = state.settings.hosts.len(), "gateway listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    prober.abort();
    Ok(())
}

async fn pool_status(State(state): State<Arc<GatewayState>>) -> Json<PoolStatus> {
    Json(state.status())
}

/// Same rules the host applies, so ids read from cookies are safe to
/// forward and to use in file names.
pub fn valid_user_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= crowdnav_core::session::MAX_USER_ID_LEN
        && !s.starts_with('.')
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b))
}

fn query_user(uri: &Uri) -> Option<String> {
    let q = uri.query()?;
    serde_urlencoded::from_str::<Vec<(String, String)>>(q)
        .ok()?
        .into_iter()
        .find_map(|(k, v)| (k == "user_id").then_some(v))
}

fn cookie_user(headers: &HeaderMap) -> Option<String> {
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|kv| kv.trim().split_once('='))
        .find(|(k, _)| *k == USER_COOKIE)
        .map(|(_, v)| v.to_owned())
        .filter(|v| valid_user_id(v))
}

struct Who {
    user_id: String,
    /// Cookie to hand back when the id was minted here.
    set_cookie: Option<HeaderValue>,
    /// Query to forward, with `user_id` present.
    query: String,
}

fn identify(uri: &Uri, headers: &HeaderMap) -> Who {
    let raw = uri.query().unwrap_or("").to_owned();
    if let Some(u) = query_user(uri) {
        return Who {
            user_id: u,
            set_cookie: None,
            query: raw,
        };
    }
    let (user_id, set_cookie) = match cookie_user(headers) {
        Some(u) => (u, None),
        None => {
            let u = format!("anon-{:016x}", rand::random::<u64>());
            let c = HeaderValue::from_str(&format!("{USER_COOKIE}={u}; Path=/; Max-Age=31536000; SameSite=Lax"))
                .expect("cookie is ascii");
            (u, Some(c))
        }
    };
    let sep = if raw.is_empty() { "" } else { "&" };
    let query = format!("{raw}{sep}user_id={user_id}");
    Who {
        user_id,
        set_cookie,
        query,
    }
}

fn route_error(e: RouteError) -> Response {
    let body = Json(json!({ "error": e.to_string() }));
    (StatusCode::SERVICE_UNAVAILABLE, body).into_response()
}

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "host",
    "content-length",
];

fn hop_by_hop(name: &HeaderName) -> bool {
    HOP_BY_HOP.contains(&name.as_str())
}

async fn http_relay(State(state): State<Arc<GatewayState>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let who = identify(&parts.uri, &parts.headers);
    let (_, base) = match state.route(&who.user_id) {
        Ok(x) => x,
        Err(e) => return route_error(e),
    };
    let url = format!("{base}{}?{}", parts.uri.path(), who.query);
    let body = match axum::body::to_bytes(body, 1 << 20).await {
        Ok(b) => b,
        Err(_) => return StatusCode::PAYLOAD_TOO_LARGE.into_response(),
    };
    let method = reqwest::Method::from_bytes(parts.method.as_str().as_bytes()).unwrap_or(reqwest::Method::GET);
    let mut out = state.http.request(method, &url);
    for (k, v) in &parts.headers {
        if !hop_by_hop(k) {
            out = out.header(k.as_str(), v.as_bytes());
        }
    }
    if parts.method != Method::GET && parts.method != Method::HEAD {
        out = out.body(body);
    }
    let upstream = match out.send().await {
        Ok(r) => r,
        Err(e) => {
            warn!(%url, error = %e, "relay failed");
            return (StatusCode::BAD_GATEWAY, Json(json!({ "error": "host unreachable" }))).into_response();
        }
    };
    let status = StatusCode::from_u16(upstream.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    let mut headers = HeaderMap::new();
    for (k, v) in upstream.headers() {
        if let (Ok(k), Ok(v)) = (HeaderName::from_bytes(k.as_str().as_bytes()), HeaderValue::from_bytes(v.as_bytes())) {
            if !hop_by_hop(&k) {
                headers.append(k, v);
            }
        }
    }
    let bytes: Bytes = upstream.bytes().await.unwrap_or_default();
    let mut res = (status, headers, Body::from(bytes)).into_response();
    if let Some(c) = who.set_cookie {
        res.headers_mut().append(header::SET_COOKIE, c);
    }
    res
}

async fn ws_relay(State(state): State<Arc<GatewayState>>, req: Request) -> Response {
    let (mut parts, _) = req.into_parts();
    let who = identify(&parts.uri, &parts.headers);
    let (_, base) = match state.route(&who.user_id) {
        Ok(x) => x,
        Err(e) => return route_error(e),
    };
    let ws_base = base.replacen("http://", "ws://", 1).replacen("https://", "wss://", 1);
    let url = format!("{ws_base}/realtime?{}", who.query);
    // connect first so a refused upstream turns into a plain HTTP answer
    let upstream = match tokio_tungstenite::connect_async(&url).await {
        Ok((s, _)) => s,
        Err(tokio_tungstenite::tungstenite::Error::Http(r)) => {
            let status = StatusCode::from_u16(r.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
            let body = r.body().clone().unwrap_or_default();
            return (status, [(header::CONTENT_TYPE, "application/json")], body).into_response();
        }
        Err(e) => {
            warn!(%url, error = %e, "websocket relay failed");
            return (StatusCode::BAD_GATEWAY, Json(json!({ "error": "host unreachable" }))).into_response();
        }
    };
    use axum::extract::FromRequestParts;
    let ws = match WebSocketUpgrade::from_request_parts(&mut parts, &state).await {
        Ok(ws) => ws,
        Err(e) => return e.into_response(),
    };
    let mut res = ws.on_upgrade(move |client| splice(client, upstream));
    if let Some(c) = who.set_cookie {
        res.headers_mut().append(header::SET_COOKIE, c);
    }
    res
}

type Upstream = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

/// Copies frames both ways until either side closes.
async fn splice(client: WebSocket, upstream: Upstream) {
    let (mut c_tx, mut c_rx) = client.split();
    let (mut u_tx, mut u_rx) = upstream.split();
    let down = async {
        while let Some(Ok(m)) = u_rx.next().await {
            let m = match m {
                TMessage::Text(t) => AxMessage::Text(t.as_str().into()),
                TMessage::Binary(b) => AxMessage::Binary(b),
                TMessage::Ping(p) => AxMessage::Ping(p),
                TMessage::Pong(p) => AxMessage::Pong(p),
                TMessage::Close(_) => break,
                TMessage::Frame(_) => continue,
            };
            if c_tx.send(m).await.is_err() {
                break;
            }
        }
        let _ = c_tx.send(AxMessage::Close(None)).await;
    };
    let up = async {
        while let Some(Ok(m)) = c_rx.next().await {
            let m = match m {
                AxMessage::Text(t) => TMessage::Text(t.as_str().into()),
                AxMessage::Binary(b) => TMessage::Binary(b),
                AxMessage::Ping(p) => TMessage::Ping(p),
                AxMessage::Pong(p) => TMessage::Pong(p),
                AxMessage::Close(_) => break,
            };
            if u_tx.send(m).await.is_err() {
                break;
            }
        }
        let _ = u_tx.send(TMessage::Close(None)).await;
    };
    tokio::select! {
        _ = down => {}
        _ = up => {}
    }
}

/// Probes every host's `/status` each period and drops expired bindings.
async fn health_loop(state: Arc<GatewayState>) {
    let period = Duration::from_millis(state.settings.health_period_ms);
    let timeout = Duration::from_millis(state.settings.probe_timeout_ms);
    let mut tick = tokio::time::interval(period);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        let targets: Vec<(usize, String)> = state
            .router()
            .hosts()
            .iter()
            .enumerate()
            .map(|(i, h)| (i, format!("{}/status", h.endpoint)))
            .collect();
        let probes = targets.into_iter().map(|(i, url)| {
            let http = state.http.clone();
            async move {
                let ok = matches!(
                    http.get(&url).timeout(timeout).send().await,
                    Ok(r) if r.status().is_success()
                );
                (i, ok)
            }
        });
        let results = futures_util::future::join_all(probes).await;
        let now = state.now();
        let mut r = state.router();
        for (i, ok) in results {
            if r.record_probe(i, ok) {
                let h = r.host(i);
                info!(host = %h.host_id, health = ?h.health, "host health changed");
            }
        }
        r.purge(now);
    }
}
