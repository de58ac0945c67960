//! HTTP image-edit backend.
//!
//! Sends `multipart/form-data` with `image`, `mask`, `prompt` and `n` fields
//! (plus any backend parameters) and expects `{"data": [{"b64_json": ...}]}`
//! or `{"data": [{"url": ...}]}` back.

use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{multipart, Client};
use reqwest::StatusCode;
use serde::Deserialize;

use super::{BackendError, EditInput, GenerationBackend};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "SKINAUG_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/images/edits";

#[derive(Debug, Deserialize)]
struct EditResponse {
    data: Vec<EditDatum>,
}

#[derive(Debug, Deserialize)]
struct EditDatum {
    b64_json: Option<String>,
    url: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    api_key: String,
    client: Client,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        Ok(RemoteBackend {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            client,
        })
    }

    /// Read the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        RemoteBackend::new(endpoint, key)
    }

    fn form(&self, input: &EditInput<'_>) -> Result<multipart::Form, BackendError> {
        let png = |bytes: &[u8], name: &str| {
            multipart::Part::bytes(bytes.to_vec())
                .file_name(name.to_string())
                .mime_str("image/png")
                .map_err(|e| BackendError::Transient(e.to_string()))
        };
        let req = input.request;
        let mut form = multipart::Form::new()
            .part("image", png(input.image_png, "image.png")?)
            .part("mask", png(input.mask_png, "mask.png")?)
            .text("prompt", req.prompt.clone())
            .text("n", req.n_candidates.to_string());
        let mut has_format = false;
        for (key, value) in &req.backend_params {
            has_format |= key == "response_format";
            let text = match value {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            form = form.text(key.clone(), text);
        }
        if !has_format {
            form = form.text("response_format", "b64_json");
        }
        Ok(form)
    }

    fn fetch_url(&self, url: &str) -> Result<Vec<u8>, BackendError> {
        let resp = self
            .client
            .get(url)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(BackendError::Transient(format!("image download returned {}", resp.status())));
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| BackendError::Transient(e.to_string()))
    }
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    resp.headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

/// Map a non-success status and body to a backend error.
fn classify(status: StatusCode, body: &str, retry_after: Option<Duration>) -> BackendError {
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => BackendError::Auth(format!("{status}: {body}")),
        StatusCode::TOO_MANY_REQUESTS => BackendError::RateLimited { retry_after },
        s if s.is_server_error() || s == StatusCode::REQUEST_TIMEOUT => {
            BackendError::Transient(format!("{status}: {body}"))
        }
        _ if body.contains("content_policy") || body.contains("safety") => {
            BackendError::ContentRejected(body.to_string())
        }
        _ => BackendError::ContentRejected(format!("{status}: {body}")),
    }
}

impl GenerationBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn edit(&self, input: &EditInput<'_>) -> Result<Vec<Vec<u8>>, BackendError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .multipart(self.form(input)?)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let after = retry_after(&resp);
            let body = resp.text().unwrap_or_default();
            return Err(classify(status, &body, after));
        }
        let parsed: EditResponse = resp
            .json()
            .map_err(|e| BackendError::Transient(format!("malformed response: {e}")))?;
        parsed
            .data
            .into_iter()
            .map(|d| match (d.b64_json, d.url) {
                (Some(b64), _) => base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| BackendError::Transient(format!("bad base64 payload: {e}"))),
                (None, Some(url)) => self.fetch_url(&url),
                (None, None) => Err(BackendError::Transient("response item without image".into())),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classification() {
        assert!(matches!(classify(StatusCode::UNAUTHORIZED, "", None), BackendError::Auth(_)));
        assert_eq!(
            classify(StatusCode::TOO_MANY_REQUESTS, "", Some(Duration::from_secs(3))),
            BackendError::RateLimited {
                retry_after: Some(Duration::from_secs(3))
            }
        );
        assert!(matches!(classify(StatusCode::BAD_GATEWAY, "", None), BackendError::Transient(_)));
        assert!(matches!(
            classify(StatusCode::BAD_REQUEST, r#"{"error":{"code":"content_policy_violation"}}"#, None),
            BackendError::ContentRejected(_)
        ));
    }

    #[test]
    fn missing_key_is_auth_error() {
        // only meaningful when the variable is absent in the test environment
        if std::env::var(API_KEY_ENV).is_err() {
            assert!(matches!(RemoteBackend::from_env(DEFAULT_ENDPOINT), Err(BackendError::Auth(_))));
        }
    }
}
