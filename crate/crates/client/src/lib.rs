//! Thin async client for the perfest HTTP service.

use perfest_core::api::{FitRequest, FitResponse, Health, OpenSessionRequest, Overrides, SessionView};
use perfest_core::{ErrorResponse, StepRequest, StepResponse};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with an error object.
    #[error("{status}: {} ({})", .body.message, .body.error)]
    Api { status: StatusCode, body: ErrorResponse },
    #[error("unexpected {status} response: {text}")]
    Unexpected { status: StatusCode, text: String },
}

impl ClientError {
    /// True when the request itself was rejected (4xx), as opposed to a
    /// transport or server failure.
    pub fn is_rejection(&self) -> bool {
        match self {
            ClientError::Api { status, .. } | ClientError::Unexpected { status, .. } => status.is_client_error(),
            ClientError::Transport(_) => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    async fn send<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let text = resp.text().await?;
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|_| ClientError::Unexpected { status, text });
        }
        match serde_json::from_str::<ErrorResponse>(&text) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Unexpected { status, text }),
        }
    }

    pub async fn health(&self) -> Result<Health> {
        self.send::<(), _>(Method::GET, "/health", None).await
    }

    pub async fn open_session(&self, model: &str, overrides: Overrides) -> Result<SessionView> {
        let body = OpenSessionRequest { model: model.to_string(), overrides };
        self.send(Method::POST, "/sessions", Some(&body)).await
    }

    pub async fn step(&self, model: &str, epoch: f64, val_acc: f64, val_loss: f64) -> Result<StepResponse> {
        let body = StepRequest { model: model.to_string(), epoch, val_acc, val_loss };
        self.send(Method::POST, "/step", Some(&body)).await
    }

    pub async fn sessions(&self) -> Result<Vec<String>> {
        self.send::<(), _>(Method::GET, "/sessions", None).await
    }

    pub async fn session(&self, model: &str) -> Result<SessionView> {
        self.send::<(), _>(Method::GET, &format!("/sessions/{}", encode(model)), None).await
    }

    pub async fn close_session(&self, model: &str) -> Result<SessionView> {
        self.send::<(), _>(Method::DELETE, &format!("/sessions/{}", encode(model)), None).await
    }

    pub async fn fit(&self, points: Vec<(f64, f64)>, overrides: Overrides) -> Result<FitResponse> {
        self.send(Method::POST, "/fit", Some(&FitRequest { points, overrides })).await
    }
}

/// Percent-encodes a model id for use as a path segment.
fn encode(segment: &str) -> String {
    let mut out = String::with_capacity(segment.len());
    for b in segment.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn encodes_path_segments() {
        assert_eq!(super::encode("model-0001"), "model-0001");
        assert_eq!(super::encode("a b/c"), "a%20b%2Fc");
    }
}
