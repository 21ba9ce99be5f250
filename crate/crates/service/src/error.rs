//! API errors and their JSON form:
//! `{"error": {"code": "NotQueried", "message": "..."}}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("point {0} is outside the series")]
    UnknownPoint(usize),
    #[error("point {index} was not queried: {reason}")]
    NotQueried { index: usize, reason: &'static str },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(i64),
    #[error("no labels submitted since the last round")]
    NoLabels,
    #[error("range: {0}")]
    Range(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::SessionNotFound(_) => "SessionNotFound",
            ApiError::SessionExists(_) => "SessionExists",
            ApiError::Dataset(_) => "DatasetError",
            ApiError::InvalidRequest(_) => "InvalidRequest",
            ApiError::UnknownPoint(_) => "UnknownPoint",
            ApiError::NotQueried { .. } => "NotQueried",
            ApiError::InvalidLabel(_) => "InvalidLabel",
            ApiError::NoLabels => "NoLabels",
            ApiError::Range(_) => "RangeError",
            ApiError::Storage(_) => "StorageError",
            ApiError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ApiError::SessionExists(_) | ApiError::NotQueried { .. } | ApiError::NoLabels => StatusCode::CONFLICT,
            ApiError::Dataset(_)
            | ApiError::InvalidRequest(_)
            | ApiError::UnknownPoint(_)
            | ApiError::InvalidLabel(_)
            | ApiError::Range(_) => StatusCode::BAD_REQUEST,
            ApiError::Storage(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Storage(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}
