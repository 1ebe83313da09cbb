//! JSON bodies for the service endpoints and the remote predictor contract.

use crowdseg_core::{BoundingBoxPct, PixelRect, RleMask};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
}

/// Project document posted by the platform. Either a label configuration
/// (XML with `<Label value="..."/>` entries) or an explicit class list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SetupRequest {
    #[serde(default, alias = "schema", skip_serializing_if = "Option::is_none")]
    pub label_config: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupAck {
    pub status: String,
    pub model_version: String,
    pub classes: Vec<String>,
}

/// Percent box as sent by the platform. Percentages are resolved against the
/// decoded image; the platform's own idea of the image size is kept only for
/// the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptBox {
    pub x: f64,
    pub y: f64,
    #[serde(alias = "width")]
    pub w: f64,
    #[serde(alias = "height")]
    pub h: f64,
    #[serde(default, alias = "original_width", skip_serializing_if = "Option::is_none")]
    pub orig_width: Option<u32>,
    #[serde(default, alias = "original_height", skip_serializing_if = "Option::is_none")]
    pub orig_height: Option<u32>,
}

impl PromptBox {
    pub fn resolve(&self, image_width: u32, image_height: u32) -> BoundingBoxPct {
        BoundingBoxPct {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
            orig_width: image_width,
            orig_height: image_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub request_id: String,
    pub class_name: String,
    pub prompt: PromptBox,
    /// Base64 image bytes, optionally as a `data:` URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    /// `data:` URL, `http(s)://` URL, `file://` URL or filesystem path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub request_id: String,
    pub class_name: String,
    pub model_version: String,
    pub mask: RleMask,
    /// The same mask in the platform's brush encoding.
    pub brush_rle: Vec<u8>,
    #[serde(rename = "box")]
    pub rect: PixelRect,
    pub score: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemotePredictRequest {
    pub image_b64: String,
    #[serde(rename = "box")]
    pub rect: PixelRect,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemotePredictResponse {
    pub mask: RleMask,
    #[serde(default = "default_score")]
    pub score: f64,
    pub model_version: String,
}

fn default_score() -> f64 {
    1.0
}

/// One audit-log line per answered or failed predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_id: String,
    pub class_name: String,
    pub model_version: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<PixelRect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popcount: Option<u64>,
    pub latency_ms: f64,
}
