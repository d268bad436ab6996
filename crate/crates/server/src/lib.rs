//! Serves a shared [`SessionRegistry`] over HTTP/JSON and over the
//! newline-delimited step protocol (stdio or TCP).

use std::sync::Arc;

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use perfest_core::api::{apply_overrides, FitRequest, FitResponse, Health, OpenSessionRequest, SessionView};
use perfest_core::{fit, handle_line, Error, ErrorResponse, SessionRegistry, StepRequest, StepResponse};
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, ToSocketAddrs};

pub type SharedRegistry = Arc<SessionRegistry>;

/// Engine error carried to an HTTP response.
pub struct ApiError {
    model: Option<String>,
    error: Error,
}

impl ApiError {
    fn new(model: Option<&str>, error: Error) -> Self {
        Self { model: model.map(str::to_string), error }
    }
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::UnknownSession(_) => StatusCode::NOT_FOUND,
        Error::DuplicateModel(_) | Error::SessionFinished(_) => StatusCode::CONFLICT,
        e if e.is_validation() => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse::new(self.model, &self.error);
        (status_for(&self.error), Json(body)).into_response()
    }
}

/// JSON body whose rejections use the same error object as engine failures.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(r) => Err(ApiError::new(None, Error::Parse { line: 1, message: r.body_text() })),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs CPU-bound engine work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("engine task panicked")
}

async fn health(State(reg): State<SharedRegistry>) -> Json<Health> {
    Json(Health { status: "ok".into(), sessions: reg.models().len() })
}

async fn list_sessions(State(reg): State<SharedRegistry>) -> Json<Vec<String>> {
    Json(reg.models())
}

async fn open_session(
    State(reg): State<SharedRegistry>,
    Body(req): Body<OpenSessionRequest>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let model = req.model.clone();
    let err = |e| ApiError::new(Some(&model), e);
    let config = apply_overrides(reg.default_config(), &req.overrides).map_err(err)?;
    reg.open(&model, Some(config)).map_err(err)?;
    let view = reg.snapshot(&model).map_err(err)?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&view))))
}

async fn step(State(reg): State<SharedRegistry>, Body(req): Body<StepRequest>) -> ApiResult<StepResponse> {
    let StepRequest { model, epoch, val_acc, val_loss } = req;
    blocking(move || match reg.step_or_open(&model, epoch, val_acc, val_loss) {
        Ok(d) => Ok(Json(StepResponse::new(model, &d))),
        Err(e) => Err(ApiError::new(Some(&model), e)),
    })
    .await
}

async fn get_session(State(reg): State<SharedRegistry>, Path(model): Path<String>) -> ApiResult<SessionView> {
    match reg.snapshot(&model) {
        Ok(s) => Ok(Json(SessionView::from(&s))),
        Err(e) => Err(ApiError::new(Some(&model), e)),
    }
}

async fn close_session(State(reg): State<SharedRegistry>, Path(model): Path<String>) -> ApiResult<SessionView> {
    match reg.close(&model) {
        Ok(s) => Ok(Json(SessionView::from(&s))),
        Err(e) => Err(ApiError::new(Some(&model), e)),
    }
}

async fn fit_points(State(reg): State<SharedRegistry>, Body(req): Body<FitRequest>) -> ApiResult<FitResponse> {
    let config = apply_overrides(reg.default_config(), &req.overrides).map_err(|e| ApiError::new(None, e))?;
    blocking(move || match fit(&req.points, &config.param_box, &config.fit) {
        Ok(r) => Ok(Json(FitResponse::from(&r))),
        Err(e) => Err(ApiError::new(None, e)),
    })
    .await
}

pub fn router(registry: SharedRegistry) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(open_session))
        .route("/sessions/{model}", get(get_session).delete(close_session))
        .route("/step", post(step))
        .route("/fit", post(fit_points))
        .with_state(registry)
}

pub async fn serve_http(listener: TcpListener, registry: SharedRegistry) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving http");
    axum::serve(listener, router(registry)).await
}

/// Answers protocol lines from `reader` on `writer` until end of input.
/// Blank lines are skipped.
pub async fn serve_lines<R, W>(registry: SharedRegistry, reader: R, mut writer: W) -> std::io::Result<()>
where
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut lines = reader.lines();
    let mut line_no = 0;
    while let Some(line) = lines.next_line().await? {
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let reg = registry.clone();
        let mut response = blocking(move || handle_line(&reg, line_no, &line)).await;
        response.push('\n');
        writer.write_all(response.as_bytes()).await?;
        writer.flush().await?;
    }
    Ok(())
}

pub async fn serve_stdio(registry: SharedRegistry) -> std::io::Result<()> {
    serve_lines(registry, BufReader::new(tokio::io::stdin()), tokio::io::stdout()).await
}

/// Accepts protocol connections forever; each connection is served on its own task.
pub async fn serve_tcp(listener: TcpListener, registry: SharedRegistry) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving line protocol over tcp");
    loop {
        let (stream, peer) = listener.accept().await?;
        let reg = registry.clone();
        tokio::spawn(async move {
            let (read, write) = stream.into_split();
            if let Err(e) = serve_lines(reg, BufReader::new(read), write).await {
                tracing::warn!(%peer, error = %e, "connection closed with error");
            }
        });
    }
}

pub async fn bind(addr: impl ToSocketAddrs) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}
