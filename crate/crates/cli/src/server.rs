use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use segrel_core::genplan::{GenerativeService, MockService};

use crate::Outcome;

pub fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Binds `addr` and prints the resolved URL on stdout so that callers using
/// port 0 can discover it.
pub async fn bind(addr: &str) -> Result<(tokio::net::TcpListener, SocketAddr)> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    println!("listening on http://{local}");
    use std::io::Write;
    std::io::stdout().flush()?;
    Ok((listener, local))
}

struct MockState {
    service: MockService,
    /// Requests still to be answered with 503.
    fail_first: AtomicUsize,
}

type Reply<T> = Result<Json<T>, (StatusCode, String)>;

fn status_for(e: &segrel_core::Error) -> StatusCode {
    if e.is_validation() {
        StatusCode::BAD_REQUEST
    } else {
        StatusCode::INTERNAL_SERVER_ERROR
    }
}

fn handle<Q, R>(state: &MockState, req: Q, op: impl FnOnce(&MockService, &Q) -> segrel_core::Result<R>) -> Reply<R> {
    let pending = state.fail_first.load(Ordering::SeqCst);
    if pending > 0 && state.fail_first.compare_exchange(pending, pending - 1, Ordering::SeqCst, Ordering::SeqCst).is_ok() {
        return Err((StatusCode::SERVICE_UNAVAILABLE, "warming up".into()));
    }
    op(&state.service, &req).map(Json).map_err(|e| (status_for(&e), e.to_string()))
}

fn route<Q, R>(op: fn(&MockService, &Q) -> segrel_core::Result<R>) -> axum::routing::MethodRouter<Arc<MockState>>
where
    Q: DeserializeOwned + Send + 'static,
    R: Serialize + Send + 'static,
{
    post(move |State(state): State<Arc<MockState>>, Json(req): Json<Q>| async move {
        tokio::task::spawn_blocking(move || handle(&state, req, op))
            .await
            .unwrap_or_else(|e| Err((StatusCode::INTERNAL_SERVER_ERROR, e.to_string())))
    })
}

pub fn mock_router(service: MockService, fail_first: usize) -> Router {
    let state = Arc::new(MockState { service, fail_first: AtomicUsize::new(fail_first) });
    Router::new()
        .route("/inpaint", route(|s, r| s.inpaint(r)))
        .route("/refine", route(|s, r| s.refine(r)))
        .route("/extract_mask", route(|s, r| s.extract_mask(r)))
        .route("/generate", route(|s, r| s.generate(r)))
        .route("/caption", route(|s, r| s.caption(r)))
        .with_state(state)
}

pub fn serve_mock(addr: &str, identity: bool, fail_first: usize) -> Result<Outcome> {
    let service = if identity { MockService::identity() } else { MockService::default() };
    runtime()?.block_on(async {
        let (listener, _) = bind(addr).await?;
        axum::serve(listener, mock_router(service, fail_first)).await?;
        Ok(Outcome::Complete)
    })
}
