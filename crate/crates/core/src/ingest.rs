//! Campaign manifests and labelling-platform exports.
//!
//! The canonical campaign manifest is the system of record. Platform exports
//! are import-only: [`adapt_platform_export`] turns them into canonical
//! [`AnnotationRecord`]s, which [`assemble_campaign`] groups into per-image
//! [`AnnotationSet`]s ready for fusion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

use crate::brush::{self, CodecError};
use crate::mask::{
    bbox_to_pixels, decode_rle, encode_rle, BinaryPlane, BoundingBoxPct, ClassPalette, LabelMap, MaskError, PixelRect,
    RleMask,
};

pub const CAMPAIGN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dimension mismatch for {context}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        context: String,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("record {record}: class {class:?} is not in the palette")]
    UnknownClass { record: String, class: String },
    #[error("record {record}: image {image_id:?} is not declared")]
    UnknownImage { record: String, image_id: String },
    #[error("ambiguous duplicate submissions for {0} (same created_at)")]
    AmbiguousDuplicate(String),
    #[error("brush codec: {0}")]
    Codec(#[from] CodecError),
    #[error("mask: {0}")]
    Mask(#[from] MaskError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_path: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDialect {
    #[default]
    Canonical,
    PlatformExport,
}

/// An inline run-length mask or a reference to a binary mask image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSource {
    Rle(RleMask),
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator_id: String,
    pub task_id: String,
    pub class_name: String,
    pub mask: MaskSource,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub source_dialect: SourceDialect,
}

impl AnnotationRecord {
    fn label(&self) -> String {
        format!("{}/{}/{}@{}", self.image_id, self.annotator_id, self.class_name, self.created_at.to_rfc3339())
    }
}

/// One labelling task of a campaign and the conditions it ran under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: String,
    #[serde(default)]
    pub description: String,
    pub image_ids: Vec<String>,
    pub ai_assist: bool,
    pub exemplars_provided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignDocument {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub palette: ClassPalette,
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default)]
    pub tasks: Vec<TaskEntry>,
}

fn default_schema_version() -> u32 {
    CAMPAIGN_SCHEMA_VERSION
}

impl CampaignDocument {
    /// Structural checks that serde cannot express.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.schema_version != CAMPAIGN_SCHEMA_VERSION {
            return Err(IngestError::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if img.image_id.trim().is_empty() {
                return Err(IngestError::Schema("image with empty image_id".into()));
            }
            if img.width == 0 || img.height == 0 {
                return Err(IngestError::Schema(format!("image {} has zero size", img.image_id)));
            }
            if !ids.insert(img.image_id.as_str()) {
                return Err(IngestError::Schema(format!("duplicate image_id {}", img.image_id)));
            }
        }
        for task in &self.tasks {
            if let Some(missing) = task.image_ids.iter().find(|i| !ids.contains(i.as_str())) {
                return Err(IngestError::Schema(format!(
                    "task {} references unknown image {missing}",
                    task.task_id
                )));
            }
        }
        for r in &self.annotations {
            if r.image_id.is_empty() || r.annotator_id.is_empty() || r.class_name.is_empty() {
                return Err(IngestError::Schema(format!("record {} has an empty id field", r.label())));
            }
            if !ids.contains(r.image_id.as_str()) {
                return Err(IngestError::UnknownImage {
                    record: r.label(),
                    image_id: r.image_id.clone(),
                });
            }
            if self.palette.id_of(&r.class_name).is_none() {
                return Err(IngestError::UnknownClass {
                    record: r.label(),
                    class: r.class_name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    /// Image ids that carry at least one crowd annotation.
    pub fn annotated_image_ids(&self) -> BTreeSet<String> {
        self.annotations.iter().map(|r| r.image_id.clone()).collect()
    }
}

/// All annotators' flattened submissions for one image, sorted by annotator id.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub image_id: String,
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub palette: Arc<ClassPalette>,
    pub annotators: Vec<String>,
    pub maps: Vec<LabelMap>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Superseded {
    pub image_id: String,
    pub annotator_id: String,
    pub class_name: String,
    pub created_at: DateTime<Utc>,
    pub replaced_by: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub document: CampaignDocument,
    pub palette: Arc<ClassPalette>,
    pub sets: Vec<AnnotationSet>,
    pub ground_truth: BTreeMap<String, LabelMap>,
    pub superseded: Vec<Superseded>,
    pub base_dir: PathBuf,
}

impl Campaign {
    pub fn set(&self, image_id: &str) -> Option<&AnnotationSet> {
        self.sets.iter().find(|s| s.image_id == image_id)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }
}

/// A single class stroke of one annotator.
#[derive(Debug, Clone)]
pub struct Stroke {
    pub class_id: u8,
    pub created_at: DateTime<Utc>,
    pub plane: BinaryPlane,
}

/// Paints strokes in (created_at, class_id) order; later strokes win.
pub fn flatten_strokes(
    width: u32,
    height: u32,
    palette: Arc<ClassPalette>,
    strokes: &[Stroke],
) -> Result<LabelMap, IngestError> {
    let mut order: Vec<&Stroke> = strokes.iter().collect();
    order.sort_by_key(|s| (s.created_at, s.class_id));
    let mut data = vec![0u8; width as usize * height as usize];
    for s in order {
        if s.plane.dims() != (width, height) {
            return Err(IngestError::DimensionMismatch {
                context: format!("stroke of class {}", s.class_id),
                expected: (width, height),
                got: s.plane.dims(),
            });
        }
        for (px, &on) in data.iter_mut().zip(s.plane.bits()) {
            if on {
                *px = s.class_id;
            }
        }
    }
    Ok(LabelMap::new(width, height, data, palette)?)
}

pub fn read_campaign_document(path: &Path) -> Result<CampaignDocument, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: CampaignDocument =
        serde_json::from_str(&text).map_err(|e| IngestError::Schema(format!("{}: {e}", path.display())))?;
    doc.validate()?;
    Ok(doc)
}

pub fn load_campaign(manifest_path: &Path) -> Result<Campaign, IngestError> {
    let doc = read_campaign_document(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    assemble_campaign(doc, &base)
}

fn load_binary_png(path: &Path) -> Result<BinaryPlane, IngestError> {
    let img = image::open(path)
        .map_err(|e| IngestError::Mask(MaskError::Png(e)))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(BinaryPlane::new(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())?)
}

fn record_plane(r: &AnnotationRecord, base: &Path) -> Result<BinaryPlane, IngestError> {
    match &r.mask {
        MaskSource::Rle(rle) => Ok(decode_rle(rle)?),
        MaskSource::File { path } => load_binary_png(&base.join(path)),
    }
}

/// Groups, de-duplicates and flattens the records of a validated document.
pub fn assemble_campaign(doc: CampaignDocument, base_dir: &Path) -> Result<Campaign, IngestError> {
    doc.validate()?;
    let palette = Arc::new(doc.palette.clone());

    // (image, annotator, class) -> winning record
    let mut latest: BTreeMap<(&str, &str, &str), &AnnotationRecord> = BTreeMap::new();
    let mut superseded = Vec::new();
    for r in &doc.annotations {
        let key = (r.image_id.as_str(), r.annotator_id.as_str(), r.class_name.as_str());
        match latest.get(&key) {
            None => {
                latest.insert(key, r);
            }
            Some(prev) if prev.created_at == r.created_at => {
                if prev.mask != r.mask {
                    return Err(IngestError::AmbiguousDuplicate(r.label()));
                }
            }
            Some(prev) => {
                let (old, new) = if prev.created_at < r.created_at { (*prev, r) } else { (r, *prev) };
                superseded.push(Superseded {
                    image_id: old.image_id.clone(),
                    annotator_id: old.annotator_id.clone(),
                    class_name: old.class_name.clone(),
                    created_at: old.created_at,
                    replaced_by: new.created_at,
                });
                latest.insert(key, new);
            }
        }
    }
    superseded.sort_by(|a, b| {
        (&a.image_id, &a.annotator_id, &a.class_name, a.created_at).cmp(&(&b.image_id, &b.annotator_id, &b.class_name, b.created_at))
    });
    for s in &superseded {
        info!(
            image = %s.image_id,
            annotator = %s.annotator_id,
            class = %s.class_name,
            "submission from {} superseded by {}",
            s.created_at,
            s.replaced_by
        );
    }

    let mut by_image: BTreeMap<&str, BTreeMap<&str, Vec<Stroke>>> = BTreeMap::new();
    for ((image_id, annotator, _), r) in &latest {
        let img = doc.image(image_id).expect("validated");
        let plane = record_plane(r, base_dir)?;
        if plane.dims() != (img.width, img.height) {
            return Err(IngestError::DimensionMismatch {
                context: format!("record {}", r.label()),
                expected: (img.width, img.height),
                got: plane.dims(),
            });
        }
        by_image.entry(image_id).or_default().entry(annotator).or_default().push(Stroke {
            class_id: palette.id_of(&r.class_name).expect("validated"),
            created_at: r.created_at,
            plane,
        });
    }

    let mut sets = Vec::new();
    for (image_id, annotators) in by_image {
        let img = doc.image(image_id).expect("validated");
        let mut names = Vec::new();
        let mut maps = Vec::new();
        for (annotator, strokes) in annotators {
            names.push(annotator.to_string());
            maps.push(flatten_strokes(img.width, img.height, palette.clone(), &strokes)?);
        }
        sets.push(AnnotationSet {
            image_id: image_id.to_string(),
            image_ref: img.path.clone(),
            width: img.width,
            height: img.height,
            palette: palette.clone(),
            annotators: names,
            maps,
        });
    }

    let mut ground_truth = BTreeMap::new();
    for img in &doc.images {
        if let Some(gt) = &img.ground_truth_path {
            let map = LabelMap::read_png(&base_dir.join(gt), palette.clone())?;
            if map.dims() != (img.width, img.height) {
                return Err(IngestError::DimensionMismatch {
                    context: format!("ground truth {gt}"),
                    expected: (img.width, img.height),
                    got: map.dims(),
                });
            }
            ground_truth.insert(img.image_id.clone(), map);
        }
    }

    Ok(Campaign {
        document: doc,
        palette,
        sets,
        ground_truth,
        superseded,
        base_dir: base_dir.to_path_buf(),
    })
}

/// Rectangle prompt found in a platform export. Kept as metadata, not a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub image_id: String,
    pub annotator_id: String,
    pub class_name: String,
    pub bbox: BoundingBoxPct,
    pub pixels: PixelRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedResult {
    pub image_id: String,
    pub result_type: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformImport {
    pub images: Vec<ImageEntry>,
    pub records: Vec<AnnotationRecord>,
    pub prompts: Vec<PromptMeta>,
    pub skipped: Vec<SkippedResult>,
}

impl PlatformImport {
    pub fn warning_count(&self) -> usize {
        self.skipped.len()
    }

    pub fn into_document(self, palette: ClassPalette, tasks: Vec<TaskEntry>) -> Result<CampaignDocument, IngestError> {
        let doc = CampaignDocument {
            schema_version: CAMPAIGN_SCHEMA_VERSION,
            palette,
            images: self.images,
            annotations: self.records,
            tasks,
        };
        doc.validate()?;
        Ok(doc)
    }
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, IngestError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .map(|n| n.and_utc())
        .map_err(|e| IngestError::Schema(format!("timestamp {s:?}: {e}")))
}

fn image_id_from_ref(image_ref: &str) -> String {
    let name = image_ref.rsplit(['/', '\\']).next().unwrap_or(image_ref);
    let name = name.split('?').next().unwrap_or(name);
    match name.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => name.to_string(),
    }
}

fn annotator_of(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Object(o) => o
            .get("email")
            .and_then(Value::as_str)
            .map(str::to_string)
            .or_else(|| o.get("id").and_then(annotator_of)),
        _ => None,
    }
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value, IngestError> {
    v.get(key).ok_or_else(|| IngestError::Schema(format!("{ctx}: missing {key:?}")))
}

fn u32_field(v: &Value, key: &str, ctx: &str) -> Result<u32, IngestError> {
    field(v, key, ctx)?
        .as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| IngestError::Schema(format!("{ctx}: {key:?} is not a pixel count")))
}

fn first_label(value: &Value, key: &str, ctx: &str) -> Result<String, IngestError> {
    field(value, key, ctx)?
        .as_array()
        .and_then(|a| a.first())
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| IngestError::Schema(format!("{ctx}: {key:?} has no label")))
}

/// Converts a platform task export (a JSON array of tasks) into canonical records.
///
/// Brush results become run-length records; rectangles become prompt metadata.
/// Other result types are skipped with a warning.
pub fn adapt_platform_export(export: &Value, task_id: &str) -> Result<PlatformImport, IngestError> {
    let tasks = export
        .as_array()
        .ok_or_else(|| IngestError::Schema("platform export must be a JSON array of tasks".into()))?;
    let mut out = PlatformImport::default();
    let mut images: BTreeMap<String, ImageEntry> = BTreeMap::new();
    for (ti, task) in tasks.iter().enumerate() {
        let ctx = format!("task[{ti}]");
        let image_ref = field(task, "data", &ctx)?
            .get("image")
            .and_then(Value::as_str)
            .ok_or_else(|| IngestError::Schema(format!("{ctx}: data.image missing")))?;
        let image_id = image_id_from_ref(image_ref);
        let annotations = task
            .get("annotations")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or_default();
        for (ai, ann) in annotations.iter().enumerate() {
            let actx = format!("{ctx}.annotations[{ai}]");
            if ann.get("was_cancelled").and_then(Value::as_bool) == Some(true) {
                continue;
            }
            let annotator_id = ann
                .get("completed_by")
                .and_then(annotator_of)
                .ok_or_else(|| IngestError::Schema(format!("{actx}: completed_by missing")))?;
            let created_at = parse_timestamp(
                field(ann, "created_at", &actx)?
                    .as_str()
                    .ok_or_else(|| IngestError::Schema(format!("{actx}: created_at is not a string")))?,
            )?;
            let results = ann.get("result").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default();
            for (ri, res) in results.iter().enumerate() {
                let rctx = format!("{actx}.result[{ri}]");
                let kind = res.get("type").and_then(Value::as_str).unwrap_or("<missing>");
                let value = res.get("value").cloned().unwrap_or(Value::Null);
                let is_rle_brush = kind == "brushlabels"
                    && value.get("format").and_then(Value::as_str).unwrap_or("rle") == "rle";
                match kind {
                    "brushlabels" if is_rle_brush => {
                        let width = u32_field(res, "original_width", &rctx)?;
                        let height = u32_field(res, "original_height", &rctx)?;
                        let ints: Vec<i64> = field(&value, "rle", &rctx)?
                            .as_array()
                            .ok_or_else(|| IngestError::Schema(format!("{rctx}: rle is not an array")))?
                            .iter()
                            .map(|v| v.as_i64().ok_or_else(|| IngestError::Codec(CodecError::ByteRange(-1))))
                            .collect::<Result<_, _>>()?;
                        let plane = brush::decode_plane(&brush::bytes_from_ints(&ints)?, width, height)?;
                        register_image(&mut images, &image_id, image_ref, width, height)?;
                        out.records.push(AnnotationRecord {
                            image_id: image_id.clone(),
                            annotator_id: annotator_id.clone(),
                            task_id: task_id.to_string(),
                            class_name: first_label(&value, "brushlabels", &rctx)?,
                            mask: MaskSource::Rle(encode_rle(&plane)),
                            created_at,
                            source_dialect: SourceDialect::PlatformExport,
                        });
                    }
                    "rectanglelabels" => {
                        let width = u32_field(res, "original_width", &rctx)?;
                        let height = u32_field(res, "original_height", &rctx)?;
                        let num = |k: &str| {
                            field(&value, k, &rctx)?
                                .as_f64()
                                .ok_or_else(|| IngestError::Schema(format!("{rctx}: {k:?} is not a number")))
                        };
                        let bbox = BoundingBoxPct {
                            x: num("x")?,
                            y: num("y")?,
                            w: num("width")?,
                            h: num("height")?,
                            orig_width: width,
                            orig_height: height,
                        };
                        register_image(&mut images, &image_id, image_ref, width, height)?;
                        out.prompts.push(PromptMeta {
                            image_id: image_id.clone(),
                            annotator_id: annotator_id.clone(),
                            class_name: first_label(&value, "rectanglelabels", &rctx)?,
                            pixels: bbox_to_pixels(&bbox)?,
                            bbox,
                        });
                    }
                    other => {
                        warn!(image = %image_id, result_type = other, "unsupported result type skipped");
                        out.skipped.push(SkippedResult {
                            image_id: image_id.clone(),
                            result_type: other.to_string(),
                        });
                    }
                }
            }
        }
    }
    out.images = images.into_values().collect();
    Ok(out)
}

fn register_image(
    images: &mut BTreeMap<String, ImageEntry>,
    image_id: &str,
    image_ref: &str,
    width: u32,
    height: u32,
) -> Result<(), IngestError> {
    let entry = images.entry(image_id.to_string()).or_insert_with(|| ImageEntry {
        image_id: image_id.to_string(),
        path: image_ref.to_string(),
        width,
        height,
        ground_truth_path: None,
    });
    if (entry.width, entry.height) != (width, height) {
        return Err(IngestError::DimensionMismatch {
            context: format!("image {image_id}"),
            expected: (entry.width, entry.height),
            got: (width, height),
        });
    }
    Ok(())
}

/// Writes canonical records back out in the platform's task-export shape:
/// one task per image, one annotation per annotator.
pub fn export_platform(doc: &CampaignDocument, base_dir: &Path) -> Result<Value, IngestError> {
    let mut tasks = Vec::new();
    for (ti, img) in doc.images.iter().enumerate() {
        let mut by_annotator: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
        for r in doc.annotations.iter().filter(|r| r.image_id == img.image_id) {
            by_annotator.entry(&r.annotator_id).or_default().push(r);
        }
        let mut annotations = Vec::new();
        for (ai, (annotator, records)) in by_annotator.into_iter().enumerate() {
            let created = records.iter().map(|r| r.created_at).max().expect("non-empty group");
            let mut results = Vec::new();
            for (ri, r) in records.iter().enumerate() {
                let plane = record_plane(r, base_dir)?;
                let rle: Vec<Value> = brush::encode_plane(&plane).into_iter().map(Value::from).collect();
                results.push(serde_json::json!({
                    "id": format!("r{ti}-{ai}-{ri}"),
                    "type": "brushlabels",
                    "from_name": "tag",
                    "to_name": "image",
                    "original_width": img.width,
                    "original_height": img.height,
                    "image_rotation": 0,
                    "value": {
                        "format": "rle",
                        "rle": rle,
                        "brushlabels": [r.class_name],
                    },
                }));
            }
            annotations.push(serde_json::json!({
                "id": ai + 1,
                "completed_by": annotator,
                "created_at": created.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
                "result": results,
            }));
        }
        tasks.push(serde_json::json!({
            "id": ti + 1,
            "data": { "image": img.path },
            "annotations": annotations,
        }));
    }
    Ok(Value::Array(tasks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn pal() -> Arc<ClassPalette> {
        Arc::new(ClassPalette::from_names(&["a", "b"]).unwrap())
    }

    fn t(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    fn plane(w: u32, h: u32, on: &[usize]) -> BinaryPlane {
        let mut bits = vec![false; (w * h) as usize];
        for &i in on {
            bits[i] = true;
        }
        BinaryPlane::new(w, h, bits).unwrap()
    }

    #[test]
    fn flatten_examples() {
        let one = flatten_strokes(2, 1, pal(), &[Stroke { class_id: 1, created_at: t(0), plane: plane(2, 1, &[1]) }]).unwrap();
        assert_eq!(one.data(), &[0, 1]);

        let both = flatten_strokes(
            3,
            1,
            pal(),
            &[
                Stroke { class_id: 2, created_at: t(5), plane: plane(3, 1, &[1, 2]) },
                Stroke { class_id: 1, created_at: t(1), plane: plane(3, 1, &[0, 1]) },
            ],
        )
        .unwrap();
        assert_eq!(both.data(), &[1, 2, 2]);

        // equal timestamps fall back to class id order
        let tie = flatten_strokes(
            1,
            1,
            pal(),
            &[
                Stroke { class_id: 2, created_at: t(0), plane: plane(1, 1, &[0]) },
                Stroke { class_id: 1, created_at: t(0), plane: plane(1, 1, &[0]) },
            ],
        )
        .unwrap();
        assert_eq!(tie.data(), &[2]);

        assert_eq!(flatten_strokes(2, 2, pal(), &[]).unwrap().data(), &[0; 4]);
        assert!(matches!(
            flatten_strokes(2, 2, pal(), &[Stroke { class_id: 1, created_at: t(0), plane: plane(1, 1, &[]) }]),
            Err(IngestError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn image_ids_from_platform_refs() {
        assert_eq!(image_id_from_ref("/data/upload/3/ab12-slice_07.png"), "ab12-slice_07");
        assert_eq!(image_id_from_ref("s3://bucket/x/y.tar.gz?sig=1"), "y.tar");
        assert_eq!(image_id_from_ref("plain"), "plain");
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("2024-03-01T10:00:00Z").unwrap(), parse_timestamp("2024-03-01T10:00:00.000000").unwrap());
        assert!(parse_timestamp("yesterday").is_err());
    }
}
