//! Mapping from engine failures to HTTP status codes and error bodies.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rag_core::chain::ChainError;
use rag_core::collection::CollectionError;
use rag_core::embed::EmbedError;
use rag_core::engine::EngineCallError;
use rag_core::llm::LlmError;
use rag_core::retrieve::RetrieveError;
use rag_core::vectorstore::StoreError;
use serde::{Deserialize, Serialize};
use tracing::warn;

/// Wire form: `{"error": {"code", "stage", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub stage: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            stage,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", "request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "route", message)
    }

    pub fn internal(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", stage, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            warn!(code = self.code, stage = self.stage, "{}", self.message);
        }
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                stage: self.stage.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn provider(stage: &'static str, message: String) -> ApiError {
    ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", stage, message)
}

fn store(stage: &'static str, e: &StoreError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", stage, e.to_string())
}

fn embed(stage: &'static str, e: &EmbedError, message: String) -> ApiError {
    match e {
        EmbedError::Provider { .. } | EmbedError::InvalidVector(_) => provider(stage, message),
        EmbedError::EmptyInput { .. } => ApiError::new(StatusCode::BAD_REQUEST, "bad_request", stage, message),
        EmbedError::Config(_) => ApiError::internal(stage, message),
    }
}

impl From<CollectionError> for ApiError {
    fn from(e: CollectionError) -> Self {
        let message = e.to_string();
        match &e {
            CollectionError::Load(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "loader_error", "load", message),
            CollectionError::Split(_) => ApiError::internal("split", message),
            CollectionError::Embed(inner) => embed("embed", inner, message),
            CollectionError::Store(inner) => store("store", inner),
        }
    }
}

impl From<ChainError> for ApiError {
    fn from(e: ChainError) -> Self {
        let message = e.to_string();
        if e.is_empty_store() {
            return ApiError::new(StatusCode::CONFLICT, "empty_store", "retrieve", message);
        }
        if e.is_budget_exhausted() {
            return ApiError::new(StatusCode::INSUFFICIENT_STORAGE, "budget_exhausted", "assemble", message);
        }
        match &e {
            ChainError::Retrieve(r) => match r {
                RetrieveError::BlankQuestion | RetrieveError::InvalidConfig(_) | RetrieveError::Store(StoreError::InvalidK) => {
                    ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "retrieve", message)
                }
                RetrieveError::Embed(inner) => embed("retrieve", inner, message),
                RetrieveError::Store(inner) => store("retrieve", inner),
            },
            ChainError::Assemble(_) => ApiError::internal("assemble", message),
            ChainError::Render(_) => ApiError::internal("render", message),
            ChainError::Chat(LlmError::InvalidRequest(_)) => ApiError::internal("chat", message),
            ChainError::Chat(_) => provider("chat", message),
        }
    }
}

impl From<EngineCallError> for ApiError {
    fn from(e: EngineCallError) -> Self {
        match e {
            EngineCallError::UnknownCollection(name) => ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_collection",
                "route",
                format!("unknown collection {name:?}"),
            ),
            EngineCallError::Ingest(e) => e.into(),
            EngineCallError::Chain(e) => e.into(),
        }
    }
}
