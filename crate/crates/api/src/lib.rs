//! HTTP/JSON API of the home security gateway.
//!
//! Every route except `POST /auth/login` and `POST /auth/verify` needs an
//! `Authorization: Bearer <token>` header. Times in responses are ISO-8601 UTC.
//!
//! | route | |
//! |---|---|
//! | `POST /auth/login` `{username, password}` | `{login_id}`; the key goes out by email spool |
//! | `POST /auth/verify` `{login_id, key}` | `{token, expires_at}` |
//! | `POST /auth/logout` | revokes the caller's token |
//! | `GET /status` | arm state, sensors, open alerts, recent detections |
//! | `GET /events`, `GET /detections` | log history; `kind, sensor_id, since, until, limit, offset` |
//! | `POST /arm` `{state}` | arm transition record |
//! | `GET /snapshots/<ref>` | camera frame bytes |
//! | `GET /stream` | server-sent events for SensorEvent, Alert and Detection entries |
//! | `POST /sim/trigger` `{sensor_id, magnitude}` | only when started in simulation mode |

mod error;
mod handlers;
mod stream;
mod wire;

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::connect_info::Connected;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::serve::IncomingStream;
use axum::Router;
use homesec_core::nids::packet::{ACK, PSH};
use homesec_core::nids::{PacketSummary, Proto};
use homesec_core::Gateway;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};

pub use error::ApiError;
pub use stream::STREAM_BUFFER;

#[derive(Debug, Clone, Copy, Default)]
pub struct ApiOptions {
    /// Enables `POST /sim/trigger`.
    pub sim: bool,
}

#[derive(Clone)]
pub struct AppState {
    gw: Arc<Gateway>,
    opts: ApiOptions,
    feed: broadcast::Sender<homesec_core::store::LogEntry>,
    closing: watch::Receiver<bool>,
}

/// The authenticated caller, available to handlers behind the token gate.
#[derive(Debug, Clone)]
pub struct Caller {
    pub username: String,
    pub token: String,
}

/// Both ends of the TCP connection a request arrived on.
#[derive(Debug, Clone, Copy)]
pub struct Peer {
    pub remote: SocketAddr,
    pub local: SocketAddr,
}

impl Connected<IncomingStream<'_, TcpListener>> for Peer {
    fn connect_info(stream: IncomingStream<'_, TcpListener>) -> Self {
        let remote = *stream.remote_addr();
        let local = stream.io().local_addr().unwrap_or(remote);
        Peer { remote, local }
    }
}

pub fn router(gw: Arc<Gateway>, opts: ApiOptions) -> Router {
    let (tx, rx) = watch::channel(false);
    // Keep the sender alive so open streams never see a shutdown.
    std::mem::forget(tx);
    build(gw, opts, rx)
}

fn build(gw: Arc<Gateway>, opts: ApiOptions, closing: watch::Receiver<bool>) -> Router {
    let (feed, _) = broadcast::channel(2 * STREAM_BUFFER);
    let tx = feed.clone();
    gw.store().subscribe(Arc::new(move |entry| {
        if stream::is_streamed(entry.kind) {
            // No receivers is fine.
            let _ = tx.send(entry.clone());
        }
    }));
    let state = AppState {
        gw,
        opts,
        feed,
        closing,
    };
    Router::new()
        .route("/auth/login", post(handlers::login))
        .route("/auth/verify", post(handlers::verify))
        .route("/auth/logout", post(handlers::logout))
        .route("/status", get(handlers::status))
        .route("/events", get(handlers::events))
        .route("/detections", get(handlers::detections))
        .route("/arm", post(handlers::arm))
        .route("/snapshots/{*reference}", get(handlers::snapshot))
        .route("/stream", get(stream::stream))
        .route("/sim/trigger", post(handlers::sim_trigger))
        .fallback(handlers::not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(middleware::from_fn_with_state(state.clone(), nids_feed))
        .with_state(state)
}

fn is_public(path: &str) -> bool {
    path == "/auth/login" || path == "/auth/verify"
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

async fn require_token(State(st): State<AppState>, mut req: Request, next: Next) -> Result<Response, ApiError> {
    if is_public(req.uri().path()) {
        return Ok(next.run(req).await);
    }
    let token = bearer(req.headers()).ok_or(ApiError::Unauthorized)?.to_string();
    let now = st.gw.clock().now_ms();
    let username = st
        .gw
        .auth()
        .validate_token(&token, now)
        .map_err(|_| ApiError::Unauthorized)?;
    req.extensions_mut().insert(Caller { username, token });
    Ok(next.run(req).await)
}

fn v4(ip: IpAddr) -> Option<Ipv4Addr> {
    match ip {
        IpAddr::V4(a) => Some(a),
        IpAddr::V6(a) => a.to_ipv4_mapped(),
    }
}

/// Every request becomes one synthesized packet on the live detector.
async fn nids_feed(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(peer) = req.extensions().get::<axum::extract::ConnectInfo<Peer>>().map(|c| c.0) {
        if let (Some(src), Some(dst)) = (v4(peer.remote.ip()), v4(peer.local.ip())) {
            let header_bytes: usize = req.headers().iter().map(|(k, v)| k.as_str().len() + v.len() + 4).sum();
            let body_bytes = req
                .headers()
                .get(header::CONTENT_LENGTH)
                .and_then(|v| v.to_str().ok()?.parse::<usize>().ok())
                .unwrap_or(0);
            let packet = PacketSummary {
                ts_us: st.gw.clock().now_ms() * 1_000,
                src_ip: src,
                src_port: peer.remote.port(),
                dst_ip: dst,
                dst_port: peer.local.port(),
                proto: Proto::Tcp,
                length: (header_bytes + body_bytes + req.uri().to_string().len()).min(u32::MAX as usize) as u32,
                tcp_flags: PSH | ACK,
            };
            let gw = st.gw.clone();
            tokio::task::spawn_blocking(move || {
                if let Err(e) = gw.observe_packet(&packet) {
                    log::error!("nids: {e}");
                }
            });
        }
    }
    next.run(req).await
}

/// Serves until `shutdown` resolves, closing the detector window once a
/// second. Open event streams end when shutdown starts.
pub async fn serve(
    listener: TcpListener,
    gw: Arc<Gateway>,
    opts: ApiOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (close_tx, close_rx) = watch::channel(false);
    let app = build(gw.clone(), opts, close_rx);
    let ticker = tokio::spawn({
        let gw = gw.clone();
        async move {
            let mut every = tokio::time::interval(Duration::from_secs(1));
            loop {
                every.tick().await;
                let gw = gw.clone();
                let res = tokio::task::spawn_blocking(move || gw.tick()).await;
                if let Ok(Err(e)) = res {
                    log::error!("nids tick: {e}");
                }
            }
        }
    });
    let shutdown = async move {
        shutdown.await;
        let _ = close_tx.send(true);
    };
    let res = axum::serve(listener, app.into_make_service_with_connect_info::<Peer>())
        .with_graceful_shutdown(shutdown)
        .await;
    ticker.abort();
    res
}
