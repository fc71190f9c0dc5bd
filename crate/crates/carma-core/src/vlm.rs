//! OpenAI-compatible chat completions adapter: a prompt becomes one user
//! message whose parts follow block order, with every image inlined as
//! base64 right after its caption.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

use crate::reasoner::{PromptBlock, PromptSpec, ReasonerBackend};

pub const API_KEY_ENV: &str = "CARMA_API_KEY";

#[derive(Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Bearer token, normally taken from `CARMA_API_KEY`. Never logged.
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub temperature: f64,
    /// Images are downscaled to this edge length before encoding.
    pub max_image_edge: u32,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout: Duration::from_secs(60),
            max_retries: 1,
            temperature: 0.0,
            max_image_edge: 512,
        }
    }
}

// keep the bearer token out of logs and reports
impl std::fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("temperature", &self.temperature)
            .field("max_image_edge", &self.max_image_edge)
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("endpoint unreachable or timed out: {0}")]
    Unavailable(String),
    #[error("cannot read image {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot decode image {path}: {source}")]
    Decode { path: String, source: image::ImageError },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
}

/// Load an image reference, applying an optional `#x,y,w,h` crop suffix
/// and the configured downscale, and return it as PNG bytes.
fn load_image(image_ref: &str, max_edge: u32) -> Result<Vec<u8>, VlmError> {
    let (path, crop) = match image_ref.split_once('#') {
        Some((p, c)) => (p, Some(c)),
        None => (image_ref, None),
    };
    let bytes = std::fs::read(path)
        .map_err(|source| VlmError::Io { path: path.to_string(), source })?;
    let mut img = image::load_from_memory(&bytes)
        .map_err(|source| VlmError::Decode { path: path.to_string(), source })?;
    if let Some(crop) = crop {
        let parts: Vec<u32> = crop.split(',').filter_map(|s| s.parse().ok()).collect();
        if parts.len() == 4 {
            let (x, y, w, h) = (parts[0], parts[1], parts[2], parts[3]);
            if w >= 1 && h >= 1 && x + w <= img.width() && y + h <= img.height() {
                img = img.crop_imm(x, y, w, h);
            }
        }
    }
    if img.width().max(img.height()) > max_edge {
        img = img.resize(max_edge, max_edge, image::imageops::FilterType::Triangle);
    }
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|source| VlmError::Decode { path: path.to_string(), source })?;
    Ok(out)
}

/// Build the chat completions request body for a prompt. Text blocks map
/// to text parts; each image block maps to a caption text part followed by
/// an inline base64 image part.
pub fn build_request_body(prompt: &PromptSpec, cfg: &EndpointConfig) -> Result<Value, VlmError> {
    let mut parts = Vec::new();
    for block in &prompt.blocks {
        match block {
            PromptBlock::Text { text } => {
                parts.push(json!({ "type": "text", "text": text }));
            }
            PromptBlock::Image { caption, image_ref } => {
                let png = load_image(image_ref, cfg.max_image_edge)?;
                let encoded = base64::engine::general_purpose::STANDARD.encode(png);
                parts.push(json!({ "type": "text", "text": caption }));
                parts.push(json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:image/png;base64,{encoded}") },
                }));
            }
        }
    }
    Ok(json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [ { "role": "user", "content": parts } ],
    }))
}

/// POST the prompt to `{base_url}/chat/completions` and return the first
/// choice's content verbatim. Retries `max_retries` times on 5xx and
/// transport errors.
pub fn dispatch(prompt: &PromptSpec, cfg: &EndpointConfig) -> Result<String, VlmError> {
    if prompt.blocks.len() < 2 {
        return Err(VlmError::BadResponse(
            "prompt must contain at least intro and task blocks".into(),
        ));
    }
    let body = build_request_body(prompt, cfg)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| VlmError::Unavailable(e.to_string()))?;
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));

    let mut last_err = None;
    for attempt in 0..=cfg.max_retries {
        let mut req = client.post(&url).json(&body);
        if let Some(key) = &cfg.api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let text = resp.text().unwrap_or_default();
                if status >= 500 {
                    last_err = Some(VlmError::Http { status, body: text });
                } else if status >= 400 {
                    return Err(VlmError::Http { status, body: text });
                } else {
                    let value: Value = serde_json::from_str(&text)
                        .map_err(|e| VlmError::BadResponse(e.to_string()))?;
                    let content = value["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| VlmError::BadResponse("missing message content".into()))?;
                    return Ok(content.to_string());
                }
            }
            Err(e) => {
                last_err = Some(VlmError::Unavailable(e.to_string()));
            }
        }
        if attempt < cfg.max_retries {
            log::debug!("vlm dispatch attempt {} failed, retrying", attempt + 1);
        }
    }
    Err(last_err.unwrap_or_else(|| VlmError::Unavailable("no attempts made".into())))
}

/// Backend wrapper so the orchestrator can treat the endpoint like any
/// other reasoner.
pub struct VlmBackend {
    pub config: EndpointConfig,
}

impl ReasonerBackend for VlmBackend {
    fn dispatch(&mut self, prompt: &PromptSpec) -> Result<String, crate::reasoner::BackendError> {
        dispatch(prompt, &self.config).map_err(|e| match e {
            VlmError::Http { status, body } => {
                crate::reasoner::BackendError::Http { status, body }
            }
            VlmError::Io { path, source } => {
                let _ = path;
                crate::reasoner::BackendError::Io(source)
            }
            other => crate::reasoner::BackendError::Unavailable(other.to_string()),
        })
    }

    fn name(&self) -> &str {
        "vlm"
    }
}
