use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use structpolicy::restructure::LlmTranscript;
use structpolicy::session::SessionError;

/// Body of every error response: `{"error": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub rule: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<Vec<LlmTranscript>>,
    /// Structured details, e.g. the test counter for the submit gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, rule: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { rule: rule.into(), message: message.into(), transcripts: None, detail: None } }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown-id", format!("unknown {what} `{id}`"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::EmptyDataset => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::UnknownId(_) => StatusCode::NOT_FOUND,
            SessionError::Restructure(_) => StatusCode::BAD_GATEWAY,
            SessionError::SubmitGate { .. } | SessionError::Locked => StatusCode::CONFLICT,
            SessionError::Mode(_) | SessionError::Schema(_) | SessionError::NoPolicy => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut err = ApiError::new(status, e.rule(), e.to_string());
        match e {
            SessionError::Restructure(f) => {
                err.body.detail = Some(serde_json::json!({ "errors": f.errors }));
                err.body.transcripts = Some(f.transcripts);
            }
            SessionError::SubmitGate { tests, required } => {
                err.body.detail = Some(serde_json::json!({ "tests": tests, "required": required }));
            }
            _ => {}
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorEnvelope { error: self.body })).into_response()
    }
}

/// `Json` whose rejections render as the error envelope.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(ApiError::bad_request(r.body_text())),
        }
    }
}
