#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine;
use crowdseg_assist::wire::{PredictRequest, PromptBox};
use crowdseg_assist::{router, AppState};
use crowdseg_core::{GrayImage, PixelRect};
use rand::Rng;

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn validator(name: &str) -> jsonschema::Validator {
    let path = schema_dir().join(format!("{name}.schema.json"));
    let schema: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn assert_valid(schema: &str, doc: &serde_json::Value) {
    let v = validator(schema);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}\n{doc}");
}

/// 32×32 black canvas with a 220-valued 10×10 square at (9, 11).
pub fn bright_square() -> GrayImage {
    let mut img = GrayImage::filled(32, 32, 0);
    for y in 11..21 {
        for x in 9..19 {
            img.set(x, y, 220);
        }
    }
    img
}

pub const SQUARE: PixelRect = PixelRect { x0: 9, y0: 11, w: 10, h: 10 };
pub const SQUARE_PROMPT: PixelRect = PixelRect { x0: 5, y0: 7, w: 18, h: 18 };

/// Percent prompt that maps back onto `rect` exactly.
pub fn prompt_for(rect: PixelRect, width: u32, height: u32) -> PromptBox {
    PromptBox {
        x: rect.x0 as f64 * 100.0 / width as f64,
        y: rect.y0 as f64 * 100.0 / height as f64,
        w: rect.w as f64 * 100.0 / width as f64,
        h: rect.h as f64 * 100.0 / height as f64,
        orig_width: Some(width),
        orig_height: Some(height),
    }
}

pub fn png_b64(img: &GrayImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(img.to_png_bytes().unwrap())
}

pub fn predict_request(id: &str, class: &str, img: &GrayImage, rect: PixelRect) -> PredictRequest {
    PredictRequest {
        request_id: id.into(),
        class_name: class.into(),
        prompt: prompt_for(rect, img.width(), img.height()),
        image_b64: Some(format!("data:image/png;base64,{}", png_b64(img))),
        image_ref: None,
    }
}

/// Noisy background with a few bright and dark discs.
pub fn random_scene(rng: &mut impl Rng, w: u32, h: u32) -> GrayImage {
    let mut img = GrayImage::filled(w, h, 0);
    let bg: u8 = rng.random_range(40..90);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, bg.saturating_add(rng.random_range(0..12)));
        }
    }
    for _ in 0..rng.random_range(1..4) {
        let (cx, cy) = (rng.random_range(0..w) as f64, rng.random_range(0..h) as f64);
        let r = rng.random_range(1.0..(w.min(h) as f64 / 3.0).max(1.5));
        let v: u8 = if rng.random_bool(0.7) { rng.random_range(160..250) } else { rng.random_range(0..30) };
        for y in 0..h {
            for x in 0..w {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    img.set(x, y, v);
                }
            }
        }
    }
    img
}

pub fn random_rect(rng: &mut impl Rng, w: u32, h: u32) -> PixelRect {
    let rw = rng.random_range(1..=w);
    let rh = rng.random_range(1..=h);
    PixelRect {
        x0: rng.random_range(0..=w - rw),
        y0: rng.random_range(0..=h - rh),
        w: rw,
        h: rh,
    }
}

pub async fn spawn(state: Arc<AppState>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("http://{addr}")
}

pub async fn spawn_router(app: axum::Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

/// Response JSON with the timing field zeroed, for byte comparisons.
pub fn without_latency(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(obj) = v.as_object_mut() {
        if obj.contains_key("latency_ms") {
            obj.insert("latency_ms".into(), serde_json::json!(0.0));
        }
    }
    v
}

/// Exhaustive Otsu in exact integer arithmetic: maximises
/// (s0·n1 − s1·n0)² / (n0·n1), smallest threshold on ties.
pub fn exhaustive_otsu(values: &[u8]) -> Option<u8> {
    let n = values.len() as u128;
    let s: u128 = values.iter().map(|&v| v as u128).sum();
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..=255u16 {
        let n0 = values.iter().filter(|&&v| v as u16 <= t).count() as u128;
        let s0: u128 = values.iter().filter(|&&v| v as u16 <= t).map(|&v| v as u128).sum();
        let (n1, s1) = (n - n0, s - s0);
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 * n1).abs_diff(s1 * n0);
        let (num, den) = (d * d, n0 * n1);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t)
}
