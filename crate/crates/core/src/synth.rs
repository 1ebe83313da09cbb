//! Label-to-image synthesis.
//!
//! [`toy_synthesize`] paints class intensities, adds counter-based Gaussian
//! noise and blurs. [`GeneratorClient`] talks to an external label-conditioned
//! generator over HTTP:
//!
//! ```text
//! POST {label_png_b64, palette, request_id}  ->  {image_png_b64, generator_version}
//! ```

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::mask::{ClassPalette, LabelMap, MaskError};
use crate::raster::GrayImage;

pub const TOY_GENERATOR_VERSION: &str = concat!("builtin-toy-", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_REMOTE_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no intensity configured for class {0}")]
    MissingClassIntensity(u8),
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("generator did not answer after {attempts} attempt(s): {last}")]
    UpstreamTimeout { attempts: u32, last: String },
    #[error("generator returned a {got:?} image for a {expected:?} label")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("malformed generator response: {0}")]
    UpstreamMalformed(String),
    #[error("mask: {0}")]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    /// Mean gray level per class id, background (0) included.
    pub class_intensities: BTreeMap<u8, f64>,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl SynthesisParams {
    pub fn validate(&self, palette: &ClassPalette) -> Result<(), SynthError> {
        for c in std::iter::once(0).chain(palette.class_ids()) {
            if !self.class_intensities.contains_key(&c) {
                return Err(SynthError::MissingClassIntensity(c));
            }
        }
        if let Some((c, v)) = self.class_intensities.iter().find(|(_, v)| !(0.0..=255.0).contains(*v)) {
            return Err(SynthError::InvalidParams(format!("intensity {v} for class {c} outside [0, 255]")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(SynthError::InvalidParams("sigmas must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Evenly spaced intensities: background at `lo`, classes up to `hi`.
    pub fn spread(palette: &ClassPalette, lo: f64, hi: f64, noise_sigma: f64, blur_sigma: f64, seed: u64) -> Self {
        let n = palette.len().max(1) as f64;
        let mut class_intensities = BTreeMap::new();
        class_intensities.insert(0, lo);
        for (i, c) in palette.class_ids().enumerate() {
            class_intensities.insert(c, lo + (hi - lo) * (i as f64 + 1.0) / n);
        }
        Self {
            class_intensities,
            noise_sigma,
            blur_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    BuiltinToy,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImageRecord {
    pub image: GrayImage,
    pub source_label: String,
    pub generator: GeneratorKind,
    pub generator_version: String,
    pub digest: String,
}

/// Sidecar JSON stored next to each synthetic PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub image_path: String,
    pub source_label: String,
    pub generator: GeneratorKind,
    pub generator_version: String,
    pub digest: String,
    pub image_sha256: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SynthesisParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

impl SyntheticImageRecord {
    pub fn provenance(&self, image_path: &str, params: Option<&SynthesisParams>, request_id: Option<&str>) -> Provenance {
        Provenance {
            image_path: image_path.to_string(),
            source_label: self.source_label.clone(),
            generator: self.generator,
            generator_version: self.generator_version.clone(),
            digest: self.digest.clone(),
            image_sha256: hex::encode(Sha256::digest(self.image.pixels())),
            width: self.image.width(),
            height: self.image.height(),
            params: params.cloned(),
            request_id: request_id.map(str::to_string),
        }
    }
}

fn label_digest_input(label: &LabelMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(label.data().len() + 16);
    buf.extend_from_slice(&label.width().to_le_bytes());
    buf.extend_from_slice(&label.height().to_le_bytes());
    buf.extend_from_slice(label.data());
    buf
}

/// Digest over the label raster and the synthesis parameters.
pub fn toy_digest(label: &LabelMap, params: &SynthesisParams) -> String {
    let mut h = Sha256::new();
    h.update(b"toy\0");
    h.update(label_digest_input(label));
    h.update(serde_json::to_vec(params).expect("params serialize"));
    hex::encode(h.finalize())
}

/// Digest over the exact request body sent to a remote generator.
pub fn request_digest(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

/// Standard normal draw for pixel `index`, independent of evaluation order.
fn pixel_noise(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    StandardNormal.sample(&mut rng)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur(buf: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; buf.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| {
                    let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                    kv * buf[y * w + xx]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; buf.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| {
                    let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                    kv * tmp[yy * w + x]
                })
                .sum();
        }
    }
    out
}

pub fn toy_synthesize(label: &LabelMap, source_label: &str, params: &SynthesisParams) -> Result<SyntheticImageRecord, SynthError> {
    params.validate(label.palette())?;
    let (w, h) = (label.width() as usize, label.height() as usize);
    let mut buf: Vec<f64> = label
        .data()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let base = params.class_intensities[c];
            if params.noise_sigma > 0.0 {
                base + params.noise_sigma * pixel_noise(params.seed, i as u64)
            } else {
                base
            }
        })
        .collect();
    if params.blur_sigma > 0.0 {
        buf = blur(&buf, w, h, params.blur_sigma);
    }
    let pixels = buf.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(SyntheticImageRecord {
        image: GrayImage::new(label.width(), label.height(), pixels)?,
        source_label: source_label.to_string(),
        generator: GeneratorKind::BuiltinToy,
        generator_version: TOY_GENERATOR_VERSION.to_string(),
        digest: toy_digest(label, params),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub label_png_b64: String,
    pub palette: ClassPalette,
    pub request_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_png_b64: String,
    pub generator_version: String,
}

#[derive(Debug, Clone)]
pub struct GeneratorClient {
    endpoint: String,
    retries: u32,
    http: reqwest::blocking::Client,
}

/// A finished remote generation plus the exact request that produced it.
#[derive(Debug, Clone)]
pub struct RemoteOutcome {
    pub record: SyntheticImageRecord,
    pub request_id: String,
    pub request_body: Vec<u8>,
    pub latency: Duration,
}

impl GeneratorClient {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32) -> Result<Self, SynthError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SynthError::InvalidParams(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            retries,
            http,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Sends one label. Transport failures and 5xx answers are retried;
    /// malformed bodies and 4xx answers are not.
    pub fn generate(&self, label: &LabelMap, source_label: &str, request_id: &str) -> Result<RemoteOutcome, SynthError> {
        let req = GenerateRequest {
            label_png_b64: B64.encode(label.to_png_bytes()?),
            palette: label.palette().as_ref().clone(),
            request_id: request_id.to_string(),
        };
        let body = serde_json::to_vec(&req).expect("request serializes");
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            let sent = self
                .http
                .post(&self.endpoint)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone())
                .send();
            let resp = match sent {
                Ok(r) if r.status().is_server_error() => {
                    last = format!("HTTP {}", r.status());
                    warn!(attempt, request_id, "generator answered {}", r.status());
                    continue;
                }
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    warn!(attempt, request_id, "generator transport error: {e}");
                    continue;
                }
            };
            if !resp.status().is_success() {
                return Err(SynthError::UpstreamMalformed(format!("HTTP {}", resp.status())));
            }
            let bytes = resp.bytes().map_err(|e| SynthError::UpstreamMalformed(e.to_string()))?;
            let parsed: GenerateResponse =
                serde_json::from_slice(&bytes).map_err(|e| SynthError::UpstreamMalformed(e.to_string()))?;
            let png = B64
                .decode(parsed.image_png_b64.as_bytes())
                .map_err(|e| SynthError::UpstreamMalformed(format!("image_png_b64: {e}")))?;
            let image = GrayImage::decode(&png).map_err(|e| SynthError::UpstreamMalformed(format!("image: {e}")))?;
            if image.dims() != label.dims() {
                return Err(SynthError::DimensionMismatch {
                    expected: label.dims(),
                    got: image.dims(),
                });
            }
            if parsed.generator_version.trim().is_empty() {
                return Err(SynthError::UpstreamMalformed("empty generator_version".into()));
            }
            return Ok(RemoteOutcome {
                record: SyntheticImageRecord {
                    image,
                    source_label: source_label.to_string(),
                    generator: GeneratorKind::Remote,
                    generator_version: parsed.generator_version,
                    digest: request_digest(&body),
                },
                request_id: request_id.to_string(),
                request_body: body,
                latency: started.elapsed(),
            });
        }
        Err(SynthError::UpstreamTimeout {
            attempts: self.retries + 1,
            last,
        })
    }

    /// Generates a batch with at most `concurrency` requests in flight.
    /// Results keep input order.
    pub fn generate_all(
        &self,
        jobs: &[(String, LabelMap)],
        request_prefix: &str,
        concurrency: usize,
    ) -> Vec<Result<RemoteOutcome, SynthError>> {
        let next = Arc::new(AtomicUsize::new(0));
        let slots: Vec<std::sync::Mutex<Option<Result<RemoteOutcome, SynthError>>>> =
            jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..concurrency.clamp(1, jobs.len().max(1)) {
                let next = next.clone();
                let slots = &slots;
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((name, label)) = jobs.get(i) else { break };
                    let out = self.generate(label, name, &format!("{request_prefix}{name}"));
                    *slots[i].lock().expect("slot lock") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
            .collect()
    }
}

/// Recomputes a record digest from its inputs.
pub fn verify_toy_digest(record: &SyntheticImageRecord, label: &LabelMap, params: &SynthesisParams) -> bool {
    record.digest == toy_digest(label, params)
}
