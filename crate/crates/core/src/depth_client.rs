//! Client for an external monocular depth service.
//!
//! The service accepts `POST {base}/depth` with the raw image bytes and answers
//! with a little-endian PFM body and an `X-Depth-Convention` header.

use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use ureq::Agent;

use crate::background::{read_pfm, DepthConvention, RawDepth};

/// Environment variable overriding the configured base URL.
pub const BASE_URL_ENV: &str = "SPLATSYNTH_DEPTH_URL";
pub const CONVENTION_HEADER: &str = "X-Depth-Convention";
const BACKOFF_BASE: Duration = Duration::from_millis(500);

#[derive(Debug, Error)]
pub enum DepthClientError {
    #[error("depth service unreachable: {0}")]
    Unreachable(String),
    #[error("depth service answered {status}")]
    BadStatus { status: u16 },
    #[error("malformed depth response: {0}")]
    MalformedResponse(String),
    #[error("depth request timed out")]
    Timeout,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot read image: {0}")]
    Image(String),
}

impl DepthClientError {
    fn is_transient(&self) -> bool {
        match self {
            Self::Unreachable(_) | Self::Timeout => true,
            Self::BadStatus { status } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthServiceConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub bearer_token: Option<String>,
    /// Fetches in flight at once.
    pub concurrency: usize,
}

impl Default for DepthServiceConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_secs: 30.0,
            retries: 3,
            bearer_token: None,
            concurrency: 4,
        }
    }
}

impl DepthServiceConfig {
    /// Applies the base URL override from the environment, if set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.trim().is_empty() {
                self.base_url = url.trim().to_string();
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), DepthClientError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(DepthClientError::InvalidConfig("timeout must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(DepthClientError::InvalidConfig("empty base URL".into()));
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        format!("{}/depth", self.base_url.trim_end_matches('/'))
    }
}

/// Depth map as returned by the service, with its declared convention.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchedDepth {
    pub depth: RawDepth,
    pub convention: DepthConvention,
    /// Number of HTTP requests made, including the successful one.
    pub attempts: u32,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    }
}

fn map_transport(err: ureq::Error) -> DepthClientError {
    match err {
        ureq::Error::Timeout(_) => DepthClientError::Timeout,
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            DepthClientError::Timeout
        }
        ureq::Error::StatusCode(status) => DepthClientError::BadStatus { status },
        ureq::Error::Io(e) => DepthClientError::Unreachable(e.to_string()),
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => DepthClientError::Unreachable(err.to_string()),
        other => DepthClientError::MalformedResponse(other.to_string()),
    }
}

fn request_once(agent: &Agent, cfg: &DepthServiceConfig, body: &[u8], mime: &str) -> Result<(RawDepth, DepthConvention), DepthClientError> {
    let mut req = agent.post(cfg.endpoint()).header("Content-Type", mime);
    if let Some(token) = &cfg.bearer_token {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req.send(body).map_err(map_transport)?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(DepthClientError::BadStatus { status });
    }
    let convention = resp
        .headers()
        .get(CONVENTION_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| DepthClientError::MalformedResponse(format!("missing {CONVENTION_HEADER} header")))?
        .parse::<DepthConvention>()
        .map_err(DepthClientError::MalformedResponse)?;
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(1 << 30)
        .read_to_vec()
        .map_err(map_transport)?;
    let depth = read_pfm(&bytes[..]).map_err(|e| DepthClientError::MalformedResponse(e.to_string()))?;
    Ok((depth, convention))
}

/// Sends the image to the service, retrying transient failures with
/// exponential backoff (0.5 s, then doubling) up to `cfg.retries` times.
/// The returned map is checked against the image dimensions.
pub fn fetch_depth(image: &Path, cfg: &DepthServiceConfig) -> Result<FetchedDepth, DepthClientError> {
    cfg.validate()?;
    let body = std::fs::read(image).map_err(|e| DepthClientError::Image(format!("{}: {e}", image.display())))?;
    let (w, h) = image::ImageReader::new(std::io::Cursor::new(&body))
        .with_guessed_format()
        .map_err(|e| DepthClientError::Image(e.to_string()))?
        .into_dimensions()
        .map_err(|e| DepthClientError::Image(e.to_string()))?;
    let agent: Agent = Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let mime = content_type(image);

    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let result = request_once(&agent, cfg, &body, mime).and_then(|(depth, convention)| {
            if (depth.width, depth.height) == (w as usize, h as usize) {
                Ok((depth, convention))
            } else {
                Err(DepthClientError::MalformedResponse(format!(
                    "depth is {}x{} but image is {w}x{h}",
                    depth.width, depth.height
                )))
            }
        });
        match result {
            Ok((depth, convention)) => {
                return Ok(FetchedDepth {
                    depth,
                    convention,
                    attempts: attempt,
                })
            }
            Err(e) if e.is_transient() && attempt <= cfg.retries => {
                let wait = BACKOFF_BASE * 2u32.saturating_pow(attempt - 1);
                log::warn!("depth request {attempt} for {} failed ({e}); retrying in {wait:?}", image.display());
                thread::sleep(wait);
            }
            Err(e) => return Err(e),
        }
    }
}
