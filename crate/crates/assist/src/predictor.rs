//! Predictor backends. The registry is fixed at startup; each call is
//! independent.

use std::time::Duration;

use base64::Engine;
use crowdseg_core::mask::decode_rle;
use crowdseg_core::{BinaryPlane, GrayImage, PixelRect};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::builtin::builtin_predict;
use crate::error::AssistError;
use crate::wire::{RemotePredictRequest, RemotePredictResponse};

pub const BUILTIN_MODEL_VERSION: &str = concat!("builtin-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_url: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    1
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Builtin,
            remote_url: None,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }
}

impl PredictorConfig {
    pub fn remote(url: impl Into<String>) -> Self {
        Self {
            backend: Backend::Remote,
            remote_url: Some(url.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        match (self.backend, &self.remote_url) {
            (Backend::Remote, None) => Err("remote backend needs remote_url".into()),
            (Backend::Builtin, Some(_)) => Err("remote_url is only valid with the remote backend".into()),
            (Backend::Remote, Some(u)) => reqwest::Url::parse(u).map(|_| ()).map_err(|e| format!("remote_url: {e}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub plane: BinaryPlane,
    pub score: f64,
    pub model_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpstreamHealth {
    Ok,
    Degraded,
}

#[derive(Debug, Clone)]
pub struct RemotePredictor {
    url: reqwest::Url,
    client: reqwest::Client,
    retries: u32,
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Builtin,
    Remote(RemotePredictor),
}

impl Predictor {
    pub fn from_config(config: &PredictorConfig) -> Result<Self, String> {
        config.validate()?;
        match config.backend {
            Backend::Builtin => Ok(Self::Builtin),
            Backend::Remote => {
                let url = reqwest::Url::parse(config.remote_url.as_deref().unwrap_or_default()).map_err(|e| e.to_string())?;
                let client = reqwest::Client::builder()
                    .timeout(Duration::from_millis(config.timeout_ms))
                    .build()
                    .map_err(|e| e.to_string())?;
                Ok(Self::Remote(RemotePredictor {
                    url,
                    client,
                    retries: config.retries,
                }))
            }
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            Self::Builtin => "builtin",
            Self::Remote(_) => "remote",
        }
    }

    /// Version reported by `/health`. Remote predictions carry the upstream's
    /// own version string.
    pub fn model_version(&self) -> String {
        match self {
            Self::Builtin => BUILTIN_MODEL_VERSION.to_string(),
            Self::Remote(r) => format!("remote:{}", r.url),
        }
    }

    pub async fn predict(
        &self,
        image: GrayImage,
        image_bytes: &[u8],
        rect: PixelRect,
        class_name: &str,
    ) -> Result<Prediction, AssistError> {
        match self {
            Self::Builtin => {
                let out = tokio::task::spawn_blocking(move || builtin_predict(&image, rect))
                    .await
                    .map_err(|e| AssistError::Internal(e.to_string()))?
                    .map_err(|e| AssistError::InvalidPrompt(e.to_string()))?;
                Ok(Prediction {
                    plane: out.plane,
                    score: out.score,
                    model_version: BUILTIN_MODEL_VERSION.to_string(),
                })
            }
            Self::Remote(r) => r.predict(&image, image_bytes, rect, class_name).await,
        }
    }

    pub async fn upstream_health(&self) -> Option<UpstreamHealth> {
        match self {
            Self::Builtin => None,
            Self::Remote(r) => Some(r.probe().await),
        }
    }
}

impl RemotePredictor {
    /// Any HTTP answer from `<origin>/health` counts as reachable.
    async fn probe(&self) -> UpstreamHealth {
        let Ok(url) = self.url.join("/health") else {
            return UpstreamHealth::Degraded;
        };
        match self.client.get(url).send().await {
            Ok(_) => UpstreamHealth::Ok,
            Err(_) => UpstreamHealth::Degraded,
        }
    }

    async fn predict(
        &self,
        image: &GrayImage,
        image_bytes: &[u8],
        rect: PixelRect,
        class_name: &str,
    ) -> Result<Prediction, AssistError> {
        let body = RemotePredictRequest {
            image_b64: base64::engine::general_purpose::STANDARD.encode(image_bytes),
            rect,
            class_name: class_name.to_string(),
        };
        let mut last = String::new();
        for attempt in 0..=self.retries {
            let resp = match self.client.post(self.url.clone()).json(&body).send().await {
                Err(e) => {
                    last = e.to_string();
                    warn!(attempt, "predictor transport error: {e}");
                    continue;
                }
                Ok(r) if r.status().is_server_error() => {
                    last = format!("HTTP {}", r.status());
                    warn!(attempt, "predictor answered {}", r.status());
                    continue;
                }
                Ok(r) => r,
            };
            if !resp.status().is_success() {
                return Err(AssistError::UpstreamMalformed(format!("HTTP {}", resp.status())));
            }
            let bytes = match resp.bytes().await {
                Ok(b) => b,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let parsed: RemotePredictResponse =
                serde_json::from_slice(&bytes).map_err(|e| AssistError::UpstreamMalformed(e.to_string()))?;
            return accept_remote(parsed, image.dims());
        }
        Err(AssistError::UpstreamTimeout {
            attempts: self.retries + 1,
            last,
        })
    }
}

/// Validates an upstream mask and clips it to the image. Masks smaller than
/// the image are rejected.
fn accept_remote(resp: RemotePredictResponse, (w, h): (u32, u32)) -> Result<Prediction, AssistError> {
    if !(0.0..=1.0).contains(&resp.score) {
        return Err(AssistError::UpstreamMalformed(format!("score {} outside [0, 1]", resp.score)));
    }
    let plane = decode_rle(&resp.mask).map_err(|e| AssistError::UpstreamMalformed(e.to_string()))?;
    let (mw, mh) = plane.dims();
    if mw < w || mh < h {
        return Err(AssistError::UpstreamMalformed(format!("mask {mw}x{mh} smaller than image {w}x{h}")));
    }
    let plane = if (mw, mh) == (w, h) {
        plane
    } else {
        let mut clipped = BinaryPlane::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                clipped.set(x, y, plane.get(x, y));
            }
        }
        clipped
    };
    Ok(Prediction {
        plane,
        score: resp.score,
        model_version: resp.model_version,
    })
}
