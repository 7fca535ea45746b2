//! HTTP API over a [`rag_core::Engine`].
//!
//! Routes:
//!
//! - `GET /v1/health`
//! - `POST /v1/collections/{name}/ingest`
//! - `POST /v1/collections/{name}/query`
//!
//! Bodies are JSON. Errors are `{"error": {"code", "stage", "message"}}`.
//! Engine calls are blocking and run on the blocking thread pool.

mod error;
pub mod wire;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, Uri};
use axum::routing::{get, post};
use axum::{Json, Router};
use rag_core::collection::QueryOptions;
use rag_core::config::ServiceConfig;
use rag_core::Engine;
use serde::de::DeserializeOwned;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tracing::info;

pub use error::{ApiError, ErrorBody, ErrorDetail};
use wire::{HealthResponse, IngestRequest, IngestResponse, QueryRequest, QueryResponse};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid CORS origin {0:?}")]
    InvalidOrigin(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
}

/// Builds the router. `cors_origins` may contain `"*"` to allow any origin;
/// when empty no cross-origin headers are sent.
pub fn router(engine: Arc<Engine>, cors_origins: &[String]) -> Result<Router, ServiceError> {
    let app = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/collections/{name}/ingest", post(ingest))
        .route("/v1/collections/{name}/query", post(query))
        .fallback(not_found)
        .with_state(engine);
    Ok(match cors(cors_origins)? {
        Some(layer) => app.layer(layer),
        None => app,
    })
}

fn cors(origins: &[String]) -> Result<Option<CorsLayer>, ServiceError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::InvalidOrigin(o.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(values)
    };
    Ok(Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([axum::http::header::CONTENT_TYPE]),
    ))
}

/// Binds the configured address.
pub async fn bind(cfg: &ServiceConfig) -> Result<TcpListener, ServiceError> {
    let addr = format!("{}:{}", cfg.bind, cfg.port);
    TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

/// Serves `app` on `listener` until `shutdown` completes.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    info!(?addr, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("request", format!("worker failed: {e}")))?
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        collections: engine.stats(),
    })
}

async fn ingest(
    State(engine): State<Arc<Engine>>,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<Json<IngestResponse>, ApiError> {
    engine.collection(&name)?;
    let req: IngestRequest = parse(&body)?;
    let (source, extra) = req.into_source().map_err(ApiError::bad_request)?;
    let report = blocking(move || Ok(engine.ingest_with_metadata(&name, &source, &extra)?)).await?;
    Ok(Json(IngestResponse::from(&report)))
}

async fn query(
    State(engine): State<Arc<Engine>>,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<Json<QueryResponse>, ApiError> {
    engine.collection(&name)?;
    let req: QueryRequest = parse(&body)?;
    if let Some(c) = req.collection.as_deref() {
        if c != name {
            return Err(ApiError::bad_request(format!(
                "body names collection {c:?} but the path names {name:?}"
            )));
        }
    }
    let opts = QueryOptions {
        k: req.k,
        multi_query: req.multi_query,
    };
    let answer = blocking(move || Ok(engine.query(&name, &req.question, &req.history, opts)?)).await?;
    Ok(Json(QueryResponse::from(&answer)))
}

async fn not_found(uri: Uri) -> ApiError {
    ApiError::not_found(format!("no route for {}", uri.path()))
}

