//! HTTP front end: `GET /health`, `POST /setup`, `POST /predict`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use crowdseg_core::brush::encode_plane;
use crowdseg_core::mask::{bbox_to_pixels, encode_rle};
use crowdseg_core::GrayImage;
use regex::Regex;
use tracing::{info, warn};

use crate::audit::AuditLog;
use crate::error::AssistError;
use crate::predictor::{Predictor, UpstreamHealth};
use crate::wire::{AuditRecord, HealthResponse, PredictRequest, PredictResponse, SetupAck, SetupRequest};

#[derive(Debug)]
pub struct AppState {
    predictor: Predictor,
    classes: RwLock<Option<Vec<String>>>,
    audit: Option<AuditLog>,
    http: reqwest::Client,
}

impl AppState {
    pub fn new(predictor: Predictor, audit: Option<AuditLog>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("default http client");
        Self {
            predictor,
            classes: RwLock::new(None),
            audit,
            http,
        }
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn classes(&self) -> Option<Vec<String>> {
        self.classes.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub async fn health(&self) -> HealthResponse {
        let upstream = self.predictor.upstream_health().await.map(|h| match h {
            UpstreamHealth::Ok => "ok".to_string(),
            UpstreamHealth::Degraded => "degraded".to_string(),
        });
        HealthResponse {
            status: "UP".into(),
            model_version: self.predictor.model_version(),
            backend: self.predictor.backend_name().into(),
            upstream,
        }
    }

    pub fn setup(&self, req: &SetupRequest) -> Result<SetupAck, AssistError> {
        let classes = setup_classes(req)?;
        *self.classes.write().unwrap_or_else(|p| p.into_inner()) = Some(classes.clone());
        Ok(SetupAck {
            status: "ok".into(),
            model_version: self.predictor.model_version(),
            classes,
        })
    }

    pub async fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, AssistError> {
        let started = Instant::now();
        let result = self.predict_inner(req, started).await;
        if let Some(log) = &self.audit {
            let record = match &result {
                Ok(r) => AuditRecord {
                    request_id: r.request_id.clone(),
                    class_name: r.class_name.clone(),
                    model_version: r.model_version.clone(),
                    outcome: "ok".into(),
                    rect: Some(r.rect),
                    popcount: Some(r.mask.checksum),
                    latency_ms: r.latency_ms,
                },
                Err(e) => AuditRecord {
                    request_id: req.request_id.clone(),
                    class_name: req.class_name.clone(),
                    model_version: self.predictor.model_version(),
                    outcome: e.kind().into(),
                    rect: None,
                    popcount: None,
                    latency_ms: started.elapsed().as_secs_f64() * 1000.0,
                },
            };
            if let Err(e) = log.append(&record) {
                warn!("audit log write failed: {e}");
            }
        }
        result
    }

    async fn predict_inner(&self, req: &PredictRequest, started: Instant) -> Result<PredictResponse, AssistError> {
        let known = self.classes().ok_or(AssistError::SetupRequired)?;
        if !known.iter().any(|c| c == &req.class_name) {
            return Err(AssistError::UnknownClass(req.class_name.clone()));
        }
        if [req.prompt.x, req.prompt.y, req.prompt.w, req.prompt.h].iter().any(|v| !v.is_finite()) {
            return Err(AssistError::InvalidPrompt("non-finite coordinate".into()));
        }
        let source = match (&req.image_b64, &req.image_ref) {
            (Some(b), None) => ImageSource::Inline(b),
            (None, Some(r)) => ImageSource::Ref(r),
            _ => return Err(AssistError::InvalidRequest("exactly one of image_b64 and image_ref is required".into())),
        };
        let bytes = self.load(source).await?;
        let image = GrayImage::decode(&bytes).map_err(|e| AssistError::ImageFetch(e.to_string()))?;
        let (iw, ih) = image.dims();
        let pct = req.prompt.resolve(iw, ih);
        pct.validate().map_err(|e| AssistError::InvalidPrompt(e.to_string()))?;
        let rect = bbox_to_pixels(&pct).map_err(|e| AssistError::InvalidPrompt(e.to_string()))?;
        let prediction = self.predictor.predict(image, &bytes, rect, &req.class_name).await?;
        Ok(PredictResponse {
            request_id: req.request_id.clone(),
            class_name: req.class_name.clone(),
            model_version: prediction.model_version,
            mask: encode_rle(&prediction.plane),
            brush_rle: encode_plane(&prediction.plane),
            rect,
            score: prediction.score,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        })
    }

    async fn load(&self, source: ImageSource<'_>) -> Result<Vec<u8>, AssistError> {
        let fetch = |e: String| AssistError::ImageFetch(e);
        match source {
            ImageSource::Inline(b) => decode_b64(strip_data_url(b).unwrap_or(b)).map_err(fetch),
            ImageSource::Ref(r) => {
                if let Some(payload) = strip_data_url(r) {
                    decode_b64(payload).map_err(fetch)
                } else if r.starts_with("http://") || r.starts_with("https://") {
                    let resp = self.http.get(r).send().await.map_err(|e| fetch(e.to_string()))?;
                    if !resp.status().is_success() {
                        return Err(fetch(format!("GET {r}: HTTP {}", resp.status())));
                    }
                    Ok(resp.bytes().await.map_err(|e| fetch(e.to_string()))?.to_vec())
                } else {
                    let path = PathBuf::from(r.strip_prefix("file://").unwrap_or(r));
                    tokio::fs::read(&path).await.map_err(|e| fetch(format!("{}: {e}", path.display())))
                }
            }
        }
    }
}

enum ImageSource<'a> {
    Inline(&'a str),
    Ref(&'a str),
}

fn strip_data_url(s: &str) -> Option<&str> {
    let rest = s.strip_prefix("data:")?;
    rest.split_once(";base64,").map(|(_, payload)| payload)
}

fn decode_b64(s: &str) -> Result<Vec<u8>, String> {
    base64::engine::general_purpose::STANDARD.decode(s.trim()).map_err(|e| e.to_string())
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"<Label\b[^>]*?\bvalue\s*=\s*"([^"]*)""#).expect("static regex"))
}

/// Class list from a setup document, first occurrence order, duplicates
/// dropped.
pub fn setup_classes(req: &SetupRequest) -> Result<Vec<String>, AssistError> {
    let raw: Vec<String> = match (&req.classes, &req.label_config) {
        (Some(c), _) => c.clone(),
        (None, Some(xml)) => label_regex().captures_iter(xml).map(|c| c[1].to_string()).collect(),
        (None, None) => return Err(AssistError::MalformedSetup("no label configuration".into())),
    };
    let mut classes: Vec<String> = Vec::new();
    for c in raw {
        let c = c.trim().to_string();
        if c.is_empty() {
            return Err(AssistError::MalformedSetup("empty class name".into()));
        }
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    if classes.is_empty() {
        return Err(AssistError::MalformedSetup("label configuration lists no classes".into()));
    }
    Ok(classes)
}

fn error_response(e: &AssistError, request_id: Option<String>) -> Response {
    (e.status(), Json(e.body(request_id))).into_response()
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, AssistError> {
    serde_json::from_slice(body).map_err(|e| AssistError::InvalidRequest(e.to_string()))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(state.health().await)
}

async fn setup(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: SetupRequest = match parse(&body) {
        Ok(r) => r,
        Err(AssistError::InvalidRequest(m)) => return error_response(&AssistError::MalformedSetup(m), None),
        Err(e) => return error_response(&e, None),
    };
    match state.setup(&req) {
        Ok(ack) => (StatusCode::OK, Json(ack)).into_response(),
        Err(e) => error_response(&e, None),
    }
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: PredictRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_slice::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v.get("request_id")?.as_str().map(String::from));
            return error_response(&e, id);
        }
    };
    match state.predict(&req).await {
        Ok(resp) => (StatusCode::OK, Json(resp)).into_response(),
        Err(e) => {
            warn!(request_id = %req.request_id, "predict failed: {e}");
            error_response(&e, Some(req.request_id.clone()))
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/setup", post(setup))
        .route("/predict", post(predict))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("assist service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
