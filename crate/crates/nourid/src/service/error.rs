use axum::Json;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use nourid_core::workflow::WorkflowError;
use serde_json::{Value, json};

use crate::accounts::AccountError;
use crate::store::StoreError;

/// Error body: `{code, message, details}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), details: Value::Null }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing, invalid or expired session")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        tracing::error!(%message, "internal error");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        let (status, code, details) = match &e {
            WorkflowError::InvalidTransition { state, event } => {
                (S::CONFLICT, "invalid_transition", json!({ "state": state, "event": event }))
            }
            WorkflowError::EvidenceMissing(what) => (S::UNPROCESSABLE_ENTITY, "evidence_missing", json!({ "evidence": what })),
            WorkflowError::EmptySelection => (S::UNPROCESSABLE_ENTITY, "empty_selection", Value::Null),
            WorkflowError::NotOwner(p) => (S::UNPROCESSABLE_ENTITY, "not_owner", json!({ "parcel_id": p })),
            WorkflowError::ValidationIncomplete => (S::UNPROCESSABLE_ENTITY, "validation_incomplete", Value::Null),
            WorkflowError::ReasonRequired => (S::UNPROCESSABLE_ENTITY, "reason_required", Value::Null),
            WorkflowError::VersionConflict { expected, actual } => {
                (S::CONFLICT, "version_conflict", json!({ "expected": expected, "actual": actual }))
            }
            WorkflowError::NotFound(id) => (S::NOT_FOUND, "not_found", json!({ "request_id": id })),
            WorkflowError::DuplicateRequest { cin, parcel_id } => {
                (S::CONFLICT, "duplicate_request", json!({ "cin": cin, "parcel_id": parcel_id }))
            }
            WorkflowError::Audit(_) => return ApiError::internal(message),
        };
        ApiError { status, code, message, details }
    }
}

impl From<AccountError> for ApiError {
    fn from(e: AccountError) -> Self {
        use StatusCode as S;
        let (status, code) = match e {
            AccountError::DuplicateEmail => (S::CONFLICT, "duplicate_email"),
            AccountError::WeakPassword => (S::UNPROCESSABLE_ENTITY, "weak_password"),
            AccountError::InvalidEmail => (S::UNPROCESSABLE_ENTITY, "invalid_email"),
            AccountError::InvalidCredentials => (S::UNAUTHORIZED, "invalid_credentials"),
            AccountError::Hashing(m) => return ApiError::internal(m),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::internal(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}
