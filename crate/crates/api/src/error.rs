use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use spms_service::ServiceError;

/// The error body every endpoint returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(rename = "status")]
    pub http_status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { http_status: status.as_u16(), code: code.to_owned(), message: message.into() }
    }

    pub fn unauthorized() -> Self {
        Self::from(ServiceError::Unauthorized)
    }

    pub fn bad_body(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", message)
    }

    pub fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "no such route")
    }
}

/// One status per service error code.
pub fn status_of(err: &ServiceError) -> StatusCode {
    match err.code() {
        "unauthorized" | "invalid_credentials" => StatusCode::UNAUTHORIZED,
        "not_owner" => StatusCode::FORBIDDEN,
        "unknown_lot" | "unknown_slot" | "unknown_reservation" | "unknown_session" | "unknown_bill" => {
            StatusCode::NOT_FOUND
        }
        "duplicate_email" | "lot_exists" | "slot_unavailable" | "no_slot_free" | "illegal_transition"
        | "session_closed" | "code_already_used" => StatusCode::CONFLICT,
        "internal" => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<ServiceError> for ApiError {
    fn from(err: ServiceError) -> Self {
        Self::new(status_of(&err), err.code(), err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
