use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use trconsent_core::lifecycle::LifecycleError;
use trconsent_core::EngineError;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "missing or unknown bearer token")
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "not permitted for this principal")
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use LifecycleError as L;
        let status = match &e {
            EngineError::UnknownPatient(_) | EngineError::Lifecycle(L::UnknownPolicy(_) | L::UnknownRequest(_)) => {
                StatusCode::NOT_FOUND
            }
            EngineError::Lifecycle(
                L::DuplicateRequest(_)
                | L::DuplicateDecision(_)
                | L::NotAwaitingDecision(_)
                | L::IllegalTransition { .. },
            ) => StatusCode::CONFLICT,
            e if e.is_client_error() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}
