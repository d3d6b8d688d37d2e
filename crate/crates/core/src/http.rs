//! Minimal blocking HTTP transport used by the model-server client and the
//! remote embedding provider. Tests swap in in-process transports.

use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// The request never produced an HTTP response.
#[derive(Debug, Clone, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, TransportError>;
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

/// `ureq`-backed transport. Non-2xx statuses come back as responses, not errors.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(600))
    }
}

fn read(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<HttpResponse, TransportError> {
    let mut resp = resp.map_err(|e| TransportError(e.to_string()))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| TransportError(e.to_string()))?;
    Ok(HttpResponse { status, body })
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, TransportError> {
        read(
            self.agent
                .post(url)
                .header("content-type", "application/json")
                .send(body),
        )
    }

    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        read(self.agent.get(url).call())
    }
}

/// Joins a base URL and a path without doubling slashes.
pub fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}

/// Records every request and answers from a handler closure.
pub struct RecordingTransport<F> {
    handler: F,
    requests: Mutex<Vec<(String, String)>>,
}

impl<F> RecordingTransport<F>
where
    F: Fn(&str, &str) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    pub fn new(handler: F) -> Self {
        Self {
            handler,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<(String, String)> {
        self.requests.lock().expect("lock").clone()
    }
}

impl<F> HttpTransport for RecordingTransport<F>
where
    F: Fn(&str, &str) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, TransportError> {
        self.requests
            .lock()
            .expect("lock")
            .push((url.to_string(), body.to_string()));
        (self.handler)(url, body)
    }

    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        self.requests
            .lock()
            .expect("lock")
            .push((url.to_string(), String::new()));
        (self.handler)(url, "")
    }
}
