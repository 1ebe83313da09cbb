//! Segmentation rasters, class palettes, prompt geometry and the interchange
//! run-length codec.
//!
//! A [`LabelMap`] is a partition raster: every pixel holds exactly one class id,
//! with `0` reserved for background. Per-class membership is extracted with
//! [`LabelMap::plane`], which is what the overlap metrics and the fusion step
//! operate on.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for platform float noise on percent rectangles.
pub const BBOX_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("invalid palette: {0}")]
    InvalidPalette(String),
    #[error("invalid label map: {0}")]
    InvalidLabelMap(String),
    #[error("pixel value {value} at index {index} is not a palette class")]
    UnknownClassValue { index: usize, value: u8 },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("run lengths sum to {actual}, expected {expected}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("checksum {stored} does not match decoded popcount {actual}")]
    ChecksumMismatch { stored: u64, actual: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// 24-bit display colour, serialized as `#rrggbb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "#{r:02x}{g:02x}{b:02x}")
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let hex = s
            .strip_prefix('#')
            .filter(|h| h.len() == 6)
            .ok_or_else(|| serde::de::Error::custom(format!("bad colour {s:?}, want #rrggbb")))?;
        let mut out = [0u8; 3];
        hex::decode_to_slice(hex, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Rgb(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub id: u8,
    pub name: String,
    pub color: Rgb,
}

/// Ordered set of foreground classes. Background (`0`) is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct ClassPalette {
    entries: Vec<PaletteEntry>,
}

impl<'de> Deserialize<'de> for ClassPalette {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<PaletteEntry>::deserialize(d)?;
        ClassPalette::new(entries).map_err(serde::de::Error::custom)
    }
}

impl ClassPalette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self, MaskError> {
        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        for e in &entries {
            if e.id == 0 {
                return Err(MaskError::InvalidPalette(format!(
                    "class {:?} uses reserved background id 0",
                    e.name
                )));
            }
            if e.name.trim().is_empty() {
                return Err(MaskError::InvalidPalette(format!("class {} has an empty name", e.id)));
            }
            if !ids.insert(e.id) {
                return Err(MaskError::InvalidPalette(format!("duplicate class id {}", e.id)));
            }
            if !names.insert(e.name.as_str()) {
                return Err(MaskError::InvalidPalette(format!("duplicate class name {:?}", e.name)));
            }
        }
        Ok(Self { entries })
    }

    /// Builds a palette from names, assigning ids 1.. in order and a fixed
    /// colour wheel.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, MaskError> {
        const WHEEL: [[u8; 3]; 8] = [
            [230, 25, 75],
            [60, 180, 75],
            [0, 130, 200],
            [255, 225, 25],
            [245, 130, 48],
            [145, 30, 180],
            [70, 240, 240],
            [240, 50, 230],
        ];
        if names.len() > 255 {
            return Err(MaskError::InvalidPalette("more than 255 classes".into()));
        }
        let entries = names
            .iter()
            .enumerate()
            .map(|(i, n)| PaletteEntry {
                id: (i + 1) as u8,
                name: n.as_ref().to_string(),
                color: Rgb(WHEEL[i % WHEEL.len()]),
            })
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn contains(&self, class_id: u8) -> bool {
        self.entries.iter().any(|e| e.id == class_id)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn name_of(&self, class_id: u8) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.id == class_id)
            .map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Row-major membership flags for one class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryPlane {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryPlane {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::DimensionMismatch(format!(
                "{} bits for a {width}x{height} plane",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    /// Plane with the given rectangle set.
    pub fn from_rect(width: u32, height: u32, rect: PixelRect) -> Self {
        let mut p = Self::empty(width, height);
        for y in rect.y0..(rect.y0 + rect.h).min(height) {
            for x in rect.x0..(rect.x0 + rect.w).min(width) {
                p.set(x, y, true);
            }
        }
        p
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width;
        self.bits[(y * w + x) as usize] = v;
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_dims(&self, other: &BinaryPlane) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &BinaryPlane) -> Result<BinaryPlane, MaskError> {
        self.check_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(BinaryPlane { bits, ..*self })
    }

    pub fn intersection(&self, other: &BinaryPlane) -> Result<BinaryPlane, MaskError> {
        self.check_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(BinaryPlane { bits, ..*self })
    }

    /// `true` if every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryPlane) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Multi-class partition raster tied to a palette.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<u8>,
    palette: Arc<ClassPalette>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, data: Vec<u8>, palette: Arc<ClassPalette>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::InvalidLabelMap(format!("dimensions {width}x{height}")));
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(MaskError::InvalidLabelMap(format!(
                "{} pixels for a {width}x{height} map",
                data.len()
            )));
        }
        let mut known = [false; 256];
        known[0] = true;
        for id in palette.class_ids() {
            known[id as usize] = true;
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !known[**v as usize]) {
            return Err(MaskError::UnknownClassValue { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
            palette,
        })
    }

    pub fn background(width: u32, height: u32, palette: Arc<ClassPalette>) -> Result<Self, MaskError> {
        Self::new(width, height, vec![0; width as usize * height as usize], palette)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn palette(&self) -> &Arc<ClassPalette> {
        &self.palette
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    /// Membership plane of `class_id`. Unknown classes give an empty plane.
    pub fn plane(&self, class_id: u8) -> BinaryPlane {
        debug_assert!(class_id > 0, "class 0 is background");
        BinaryPlane {
            width: self.width,
            height: self.height,
            bits: self.data.iter().map(|&v| v == class_id).collect(),
        }
    }

    /// Copy of this map with every class outside `keep` set to background.
    pub fn retain_classes(&self, keep: &[u8]) -> LabelMap {
        let data = self
            .data
            .iter()
            .map(|&v| if keep.contains(&v) { v } else { 0 })
            .collect();
        LabelMap { data, ..self.clone() }
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.dims() == other.dims()
    }

    pub fn read_png(path: &Path, palette: Arc<ClassPalette>) -> Result<Self, MaskError> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw(), palette)
    }

    /// Canonical mask file: 8-bit grayscale PNG, pixel value = class id.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, MaskError> {
        crate::raster::encode_png_luma8(self.width, self.height, &self.data)
    }

    pub fn from_png_bytes(bytes: &[u8], palette: Arc<ClassPalette>) -> Result<Self, MaskError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw(), palette)
    }
}

/// Rectangle in percent of the original image, as labelling platforms send it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxPct {
    pub x: f64,
    pub y: f64,
    #[serde(alias = "width")]
    pub w: f64,
    #[serde(alias = "height")]
    pub h: f64,
    pub orig_width: u32,
    pub orig_height: u32,
}

impl BoundingBoxPct {
    pub fn validate(&self) -> Result<(), MaskError> {
        let vals = [self.x, self.y, self.w, self.h];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(MaskError::InvalidBox("non-finite coordinate".into()));
        }
        if self.x < -BBOX_EPSILON || self.y < -BBOX_EPSILON {
            return Err(MaskError::InvalidBox(format!("negative origin ({}, {})", self.x, self.y)));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(MaskError::InvalidBox(format!("non-positive size {}x{}", self.w, self.h)));
        }
        if self.x + self.w > 100.0 + BBOX_EPSILON || self.y + self.h > 100.0 + BBOX_EPSILON {
            return Err(MaskError::InvalidBox(format!(
                "box ({}, {}, {}, {}) exceeds 100%",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }
}

/// Integer pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.w && y < self.y0 + self.h
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }
}

/// Converts a percent box to pixels: round half away from zero, then clamp
/// into the image with a minimum extent of one pixel.
///
/// Overhanging boxes are clamped rather than rejected; [`BoundingBoxPct::validate`]
/// is the strict check applied to incoming prompts.
pub fn bbox_to_pixels(b: &BoundingBoxPct) -> Result<PixelRect, MaskError> {
    if b.orig_width == 0 || b.orig_height == 0 {
        return Err(MaskError::EmptyImage);
    }
    if [b.x, b.y, b.w, b.h].iter().any(|v| !v.is_finite()) || b.w <= 0.0 || b.h <= 0.0 {
        return Err(MaskError::InvalidBox(format!(
            "box ({}, {}, {}, {}) has no extent",
            b.x, b.y, b.w, b.h
        )));
    }
    let (iw, ih) = (b.orig_width as f64, b.orig_height as f64);
    let to_px = |pct: f64, extent: f64| (pct / 100.0 * extent).round().max(0.0) as u64;
    let x0 = to_px(b.x, iw).min(b.orig_width as u64 - 1) as u32;
    let y0 = to_px(b.y, ih).min(b.orig_height as u64 - 1) as u32;
    let w = to_px(b.w, iw).max(1).min((b.orig_width - x0) as u64) as u32;
    let h = to_px(b.h, ih).max(1).min((b.orig_height - y0) as u64) as u32;
    Ok(PixelRect { x0, y0, w, h })
}

/// Alternating zero/one run lengths, always starting with a (possibly empty)
/// zero run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u64>,
    pub checksum: u64,
}

pub fn encode_rle(plane: &BinaryPlane) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &b in plane.bits() {
        if b != current {
            runs.push(len);
            len = 0;
            current = b;
        }
        len += 1;
    }
    runs.push(len);
    RleMask {
        width: plane.width(),
        height: plane.height(),
        runs,
        checksum: plane.popcount(),
    }
}

pub fn decode_rle(rle: &RleMask) -> Result<BinaryPlane, MaskError> {
    let expected = rle.width as u64 * rle.height as u64;
    let actual: u64 = rle.runs.iter().try_fold(0u64, |acc, &r| acc.checked_add(r)).unwrap_or(u64::MAX);
    if actual != expected {
        return Err(MaskError::LengthMismatch { expected, actual });
    }
    let mut bits = Vec::with_capacity(expected as usize);
    let mut ones = 0u64;
    for (i, &r) in rle.runs.iter().enumerate() {
        let v = i % 2 == 1;
        if v {
            ones += r;
        }
        bits.extend(std::iter::repeat_n(v, r as usize));
    }
    if ones != rle.checksum {
        return Err(MaskError::ChecksumMismatch {
            stored: rle.checksum,
            actual: ones,
        });
    }
    Ok(BinaryPlane {
        width: rle.width,
        height: rle.height,
        bits,
    })
}
