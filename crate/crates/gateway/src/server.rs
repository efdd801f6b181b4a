//! axum adapter: turns HTTP requests into [`ApiRequest`]s for a handler.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::Value as Json;
use tokio::sync::oneshot;

use confetty_core::api::{endpoint, parse_auth_headers, ApiError, ApiRequest, Method};
use confetty_core::service::Gateway;

/// Request handler shared by the gateway and the authority service.
pub type Handler = Arc<dyn Fn(ApiRequest) -> Result<Json, ApiError> + Send + Sync>;

pub const BODY_LIMIT: usize = 64 << 20;

pub fn gateway_handler(gateway: Arc<Gateway>) -> Handler {
    Arc::new(move |req| gateway.handle(&req))
}

fn error_response(err: &ApiError) -> Response {
    let status = StatusCode::from_u16(err.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, axum::Json(err)).into_response()
}

async fn dispatch(
    State(handler): State<Handler>,
    method: axum::http::Method,
    uri: Uri,
    Query(query): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let path = uri.path().to_owned();
    let method = match method {
        axum::http::Method::GET => Method::Get,
        axum::http::Method::POST => Method::Post,
        other => {
            let mut err = ApiError::bad_request(format!("method {other} is not supported"));
            err.status = 405;
            return error_response(&err);
        }
    };
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_owned);
    let result = match parse_auth_headers(header, &endpoint(method.as_str(), &path), &body) {
        Ok(auth) => {
            let req = ApiRequest {
                method,
                path: path.clone(),
                query,
                body: body.to_vec(),
                auth,
            };
            tokio::task::spawn_blocking(move || handler(req))
                .await
                .unwrap_or_else(|e| Err(ApiError::internal(e)))
        }
        Err(e) => Err(e),
    };
    // Only the route and outcome are logged, never bodies or keys.
    match result {
        Ok(value) => {
            tracing::info!(method = method.as_str(), %path, status = 200);
            axum::Json(value).into_response()
        }
        Err(err) => {
            tracing::info!(method = method.as_str(), %path, status = err.status, code = %err.code);
            error_response(&err)
        }
    }
}

pub fn router(handler: Handler) -> Router {
    Router::new()
        .fallback(dispatch)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(handler)
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

/// Serves on the calling thread until the process ends. `on_bound` sees the
/// actual address, which matters when listening on port 0.
pub fn serve_blocking(handler: Handler, listen: &str, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(handler)).await
    })
}

/// A server running on a background thread, stopped on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn spawn(handler: Handler, listen: &str) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(listen)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name(format!("http-{addr}"))
        .spawn(move || {
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                axum::serve(listener, router(handler))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
