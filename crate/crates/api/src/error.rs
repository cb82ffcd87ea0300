use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use homesec_core::auth::AuthError;
use homesec_core::controller::ControllerError;
use homesec_core::gateway::GatewayError;
use homesec_core::sensor::SensorError;
use homesec_core::store::StoreError;
use serde_json::json;
use thiserror::Error;

/// Every failure an endpoint can report. The body is always
/// `{"error": <code>, "message": <text>}`.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("missing or invalid token")]
    Unauthorized,
    #[error("authentication failed")]
    AuthFailed,
    #[error("account locked")]
    Locked,
    #[error("key rejected")]
    KeyRejected(&'static str),
    #[error("{0}")]
    BadRequest(String),
    #[error("not found")]
    NotFound,
    #[error("{0}")]
    Conflict(String),
    #[error("storage unavailable")]
    Unavailable,
    #[error("internal error")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthorized | ApiError::AuthFailed | ApiError::KeyRejected(_) => StatusCode::UNAUTHORIZED,
            ApiError::Locked => StatusCode::LOCKED,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Unauthorized => "unauthorized",
            ApiError::AuthFailed => "auth_failed",
            ApiError::Locked => "account_locked",
            ApiError::KeyRejected(code) => code,
            ApiError::BadRequest(_) => "bad_request",
            ApiError::NotFound => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Unavailable => "unavailable",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(detail) = &self {
            log::error!("{detail}");
        }
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::AuthFailed => ApiError::AuthFailed,
            AuthError::AccountLocked { .. } => ApiError::Locked,
            AuthError::KeyMismatch { .. } => ApiError::KeyRejected("key_mismatch"),
            AuthError::KeyExhausted => ApiError::KeyRejected("key_exhausted"),
            AuthError::KeyExpired => ApiError::KeyRejected("key_expired"),
            AuthError::UnknownLogin => ApiError::KeyRejected("unknown_login"),
            AuthError::InvalidToken => ApiError::Unauthorized,
            AuthError::UsernameTaken | AuthError::WeakPassword(_) => ApiError::BadRequest(e.to_string()),
            AuthError::Store(_) => ApiError::Unavailable,
            AuthError::Delivery(_) | AuthError::UserDb(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidFilter(msg) => ApiError::BadRequest(msg),
            StoreError::UnknownSnapshot(_) => ApiError::NotFound,
            _ => ApiError::Unavailable,
        }
    }
}

impl From<ControllerError> for ApiError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::StoreUnavailable(_) => ApiError::Unavailable,
            ControllerError::Unauthorized => ApiError::Unauthorized,
            ControllerError::UnknownSensor(_) | ControllerError::NotAnAttack => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Sensor(SensorError::NonMonotonicTime { .. }) => ApiError::Conflict(e.to_string()),
            GatewayError::Sensor(SensorError::Snapshot(s)) | GatewayError::Store(s) => s.into(),
            GatewayError::Sensor(s) => ApiError::BadRequest(s.to_string()),
            GatewayError::Controller(c) => c.into(),
            GatewayError::Auth(a) => a.into(),
            other => ApiError::Internal(other.to_string()),
        }
    }
}
