use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::{Extension, Json};
use homesec_core::controller::ArmState;
use homesec_core::store::EntryKind;
use homesec_core::time_fmt::iso8601_ms;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::wire::{
    entry_json, iso_times, ArmRequest, HistoryQuery, LoginRequest, LoginResponse, TriggerRequest, VerifyRequest,
    VerifyResponse,
};
use crate::{AppState, Caller};

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker panicked: {e}")))?
}

pub async fn login(
    State(st): State<AppState>,
    payload: Result<Json<LoginRequest>, JsonRejection>,
) -> ApiResult<Json<LoginResponse>> {
    let req = body(payload)?;
    let gw = st.gw.clone();
    // The password check runs the KDF; keep it off the async workers.
    let challenge = blocking(move || {
        let now = gw.clock().now_ms();
        Ok(gw.auth().begin_login(&req.username, &req.password, now)?)
    })
    .await?;
    Ok(Json(LoginResponse {
        login_id: challenge.login_id,
    }))
}

pub async fn verify(
    State(st): State<AppState>,
    payload: Result<Json<VerifyRequest>, JsonRejection>,
) -> ApiResult<Json<VerifyResponse>> {
    let req = body(payload)?;
    let now = st.gw.clock().now_ms();
    let token = st.gw.auth().verify_key(&req.login_id, &req.key, now)?;
    Ok(Json(VerifyResponse {
        expires_at: iso8601_ms(token.expires_at()),
        token: token.value,
    }))
}

pub async fn logout(State(st): State<AppState>, Extension(caller): Extension<Caller>) -> ApiResult<Json<Value>> {
    let now = st.gw.clock().now_ms();
    let revoked = st.gw.auth().logout(&caller.token, now)?;
    Ok(Json(json!({ "revoked": revoked })))
}

pub async fn status(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let report = st.gw.controller().snapshot_status();
    serde_json::to_value(report)
        .map(Json)
        .map_err(|e| ApiError::Internal(e.to_string()))
}

pub async fn events(State(st): State<AppState>, q: Result<Query<HistoryQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let filter = query(q)?.to_filter()?;
    history(&st, filter)
}

pub async fn detections(
    State(st): State<AppState>,
    q: Result<Query<HistoryQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let mut filter = query(q)?.to_filter()?;
    match filter.kind {
        None | Some(EntryKind::Detection) => filter.kind = Some(EntryKind::Detection),
        Some(other) => return Err(ApiError::BadRequest(format!("/detections cannot list {other}"))),
    }
    history(&st, filter)
}

fn history(st: &AppState, filter: homesec_core::store::QueryFilter) -> ApiResult<Json<Value>> {
    let entries = st.gw.store().query(&filter)?;
    Ok(Json(json!({
        "entries": entries.iter().map(entry_json).collect::<Vec<_>>(),
    })))
}

pub async fn arm(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    payload: Result<Json<ArmRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let to: ArmState = req.state.parse().map_err(ApiError::BadRequest)?;
    let transition = st.gw.controller().set_arm(to, &caller.token, st.gw.auth())?;
    serde_json::to_value(transition)
        .map(Json)
        .map_err(|e| ApiError::Internal(e.to_string()))
}

pub async fn snapshot(State(st): State<AppState>, Path(reference): Path<String>) -> ApiResult<impl IntoResponse> {
    let bytes = st.gw.store().get_snapshot(&reference)?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-pixmap")], bytes))
}

pub async fn sim_trigger(
    State(st): State<AppState>,
    payload: Result<Json<TriggerRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    if !st.opts.sim {
        return Err(ApiError::NotFound);
    }
    let req = body(payload)?;
    let gw = st.gw.clone();
    let t = blocking(move || Ok(gw.trigger(&req.sensor_id, req.magnitude)?)).await?;
    let event = serde_json::to_value(&t.event).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({
        "event": iso_times(event),
        "alert_id": t.alert.map(|a| a.decision.alert_id),
    })))
}

pub async fn not_found() -> ApiError {
    ApiError::NotFound
}
