use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use kex::archive::ArchiveError;
use kex::dictionary::DictionaryError;
use kex::mapping::MappingError;
use kex::pipeline::PipelineError;
use kex::validation::ValidationError;

/// Error returned by every handler. Stale versions map to 409, unknown ids to
/// 404 and failures reported by a core module to 422 with the module named.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("expected version {expected}, current version is {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("{module}: {message}")]
    Module { module: &'static str, message: String },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::Module { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Fail with 409 when the client sent a version that is not current.
    pub fn check_version(expected: Option<u64>, current: u64) -> Result<(), ApiError> {
        match expected {
            Some(expected) if expected != current => Err(ApiError::Conflict { expected, current }),
            _ => Ok(()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match &self {
            ApiError::NotFound(what) => json!({"error": "notFound", "message": self.to_string(), "id": what}),
            ApiError::Conflict { expected, current } => json!({
                "error": "conflict",
                "message": self.to_string(),
                "expectedVersion": expected,
                "currentVersion": current,
            }),
            ApiError::Module { module, message } => {
                json!({"error": "unprocessable", "module": module, "message": message})
            }
            ApiError::BadRequest(m) => json!({"error": "badRequest", "message": m}),
            ApiError::Internal(m) => json!({"error": "internal", "message": m}),
        };
        if matches!(self, ApiError::Internal(_)) {
            tracing::error!("{self}");
        }
        (self.status(), Json(body)).into_response()
    }
}

impl From<MappingError> for ApiError {
    fn from(e: MappingError) -> Self {
        ApiError::Module { module: "mapping", message: e.to_string() }
    }
}

impl From<DictionaryError> for ApiError {
    fn from(e: DictionaryError) -> Self {
        match e {
            DictionaryError::Io(e) => ApiError::Internal(e.to_string()),
            e => ApiError::Module { module: "dictionary", message: e.to_string() },
        }
    }
}

impl From<ArchiveError> for ApiError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::NotFound(id) => ApiError::NotFound(format!("record {id}")),
            ArchiveError::Io(e) => ApiError::Internal(e.to_string()),
            e => ApiError::Module { module: "archive", message: e.to_string() },
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Archive(e) => e.into(),
            PipelineError::Io(e) => ApiError::Internal(e.to_string()),
            e => ApiError::Module { module: "pipeline", message: e.to_string() },
        }
    }
}

impl From<ValidationError> for ApiError {
    fn from(e: ValidationError) -> Self {
        ApiError::Module { module: "validation", message: e.to_string() }
    }
}
