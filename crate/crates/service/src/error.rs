use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use worldmotion::Error;

/// An HTTP error with a JSON body `{ "error": { status, kind, message } }`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn not_found(what: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: what.into(),
        }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            kind: "schema",
            message: message.into(),
        }
    }

    pub fn conflict(expected: u64, current: u64) -> Self {
        ApiError {
            status: StatusCode::CONFLICT,
            kind: "version_conflict",
            message: format!("expected session version {expected}, current is {current}"),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: message.into(),
        }
    }
}

/// Pipeline failures are all caused by the request's inputs (paths,
/// keypoints, clip choices), so they map to 422 with the error's kind.
impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Validation(_) => "validation",
            Error::Degenerate(_) => "degenerate",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        };
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {
                "status": self.status.as_u16(),
                "kind": self.kind,
                "message": self.message,
            }
        });
        (self.status, Json(body)).into_response()
    }
}
