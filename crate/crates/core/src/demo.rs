//! Programmatic demo campaign: ellipse phantoms with ground truth, toy
//! images, and perturbed crowd submissions for a subset of images.
//!
//! Each simulated annotator shifts, dilates or erodes every organ by a pixel,
//! and may add a spurious blob or punch a hole. Majority voting is expected to
//! undo most of that.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{AnnotationRecord, CampaignDocument, ImageEntry, MaskSource, SourceDialect, TaskEntry, CAMPAIGN_SCHEMA_VERSION};
use crate::mask::{encode_rle, BinaryPlane, ClassPalette, LabelMap, MaskError};
use crate::raster::GrayImage;
use crate::synth::{toy_synthesize, SynthesisParams};

pub const DEMO_CLASSES: [&str; 3] = ["Liver", "Kidney", "Aorta"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemoConfig {
    /// Images with ground truth only, used for the train/test split.
    pub n_pool: usize,
    /// Images that also carry crowd submissions.
    pub n_crowd: usize,
    pub n_annotators: usize,
    pub size: u32,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n_pool: 20,
            n_crowd: 8,
            n_annotators: 5,
            size: 64,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoCampaign {
    pub document: CampaignDocument,
    pub images: BTreeMap<String, GrayImage>,
    pub ground_truth: BTreeMap<String, LabelMap>,
    /// Flattened annotator maps per crowd image, in annotator order.
    pub annotator_maps: BTreeMap<String, Vec<LabelMap>>,
}

pub fn demo_palette() -> ClassPalette {
    ClassPalette::from_names(&DEMO_CLASSES).expect("static palette")
}

fn ellipse(size: u32, cx: f64, cy: f64, rx: f64, ry: f64) -> BinaryPlane {
    let mut p = BinaryPlane::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                p.set(x, y, true);
            }
        }
    }
    p
}

fn paint(size: u32, palette: &Arc<ClassPalette>, planes: &[(u8, BinaryPlane)]) -> LabelMap {
    let mut data = vec![0u8; (size * size) as usize];
    for (c, p) in planes {
        for (d, &on) in data.iter_mut().zip(p.bits()) {
            if on {
                *d = *c;
            }
        }
    }
    LabelMap::new(size, size, data, palette.clone()).expect("demo classes")
}

/// Ground-truth phantom: a large liver, a kidney and a small aorta.
pub fn phantom(size: u32, palette: &Arc<ClassPalette>, rng: &mut impl Rng) -> LabelMap {
    let s = size as f64;
    let liver = ellipse(
        size,
        s * rng.random_range(0.33..0.42),
        s * rng.random_range(0.38..0.55),
        s * rng.random_range(0.22..0.28),
        s * rng.random_range(0.20..0.27),
    );
    let kidney = ellipse(
        size,
        s * rng.random_range(0.70..0.78),
        s * rng.random_range(0.55..0.68),
        s * rng.random_range(0.07..0.10),
        s * rng.random_range(0.10..0.14),
    );
    let aorta = ellipse(
        size,
        s * rng.random_range(0.58..0.64),
        s * rng.random_range(0.28..0.34),
        s * 0.06,
        s * 0.06,
    );
    paint(size, palette, &[(1, liver), (2, kidney), (3, aorta)])
}

fn shifted(p: &BinaryPlane, dx: i32, dy: i32) -> BinaryPlane {
    let (w, h) = p.dims();
    let mut out = BinaryPlane::empty(w, h);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let (sx, sy) = (x - dx, y - dy);
            if sx >= 0 && sy >= 0 && sx < w as i32 && sy < h as i32 && p.get(sx as u32, sy as u32) {
                out.set(x as u32, y as u32, true);
            }
        }
    }
    out
}

/// 4-neighbourhood grow (`grow = true`) or shrink by one pixel.
fn morph(p: &BinaryPlane, grow: bool) -> BinaryPlane {
    let (w, h) = p.dims();
    let mut out = p.clone();
    for y in 0..h {
        for x in 0..w {
            let n = [(0i32, -1i32), (0, 1), (-1, 0), (1, 0)].iter().map(|(dx, dy)| {
                let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                nx >= 0 && ny >= 0 && nx < w as i32 && ny < h as i32 && p.get(nx as u32, ny as u32)
            });
            let v = if grow { p.get(x, y) || n.clone().any(|b| b) } else { p.get(x, y) && n.clone().all(|b| b) };
            out.set(x, y, v);
        }
    }
    out
}

/// Flips pixels on either side of the plane's outline with probability `p`.
fn jitter(plane: &BinaryPlane, p: f64, rng: &mut impl Rng) -> BinaryPlane {
    let grown = morph(plane, true);
    let shrunk = morph(plane, false);
    let mut out = plane.clone();
    for (i, (&g, &s)) in grown.bits().iter().zip(shrunk.bits()).enumerate() {
        if g != s && rng.random_bool(p) {
            let (x, y) = (i as u32 % plane.width(), i as u32 / plane.width());
            out.set(x, y, !plane.get(x, y));
        }
    }
    out
}

/// One simulated annotator's submission.
///
/// Per class: an occasional one-pixel shift, an occasional one-pixel grow or
/// shrink, independent flips along the outline, and sometimes a hole. One
/// spurious blob of a random class may be added on top.
pub fn perturb(gt: &LabelMap, rng: &mut impl Rng) -> LabelMap {
    let size = gt.width();
    let palette = gt.palette().clone();
    let mut planes = Vec::new();
    for c in palette.class_ids() {
        let mut p = gt.plane(c);
        if rng.random_bool(0.3) {
            let d = if rng.random_bool(0.5) { 1 } else { -1 };
            p = if rng.random_bool(0.5) { shifted(&p, d, 0) } else { shifted(&p, 0, d) };
        }
        match rng.random_range(0..10) {
            0 => p = morph(&p, true),
            1 => p = morph(&p, false),
            _ => {}
        }
        p = jitter(&p, 0.15, rng);
        if rng.random_bool(0.3) {
            let hole = ellipse(
                size,
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                2.5,
                2.5,
            );
            p = BinaryPlane::new(size, size, p.bits().iter().zip(hole.bits()).map(|(a, b)| *a && !*b).collect())
                .expect("same dims");
        }
        planes.push((c, p));
    }
    if rng.random_bool(0.5) {
        let c = rng.random_range(1..=palette.len() as u8);
        let blob = ellipse(
            size,
            rng.random_range(0.0..size as f64),
            rng.random_range(0.0..size as f64),
            3.0,
            3.0,
        );
        planes.push((c, blob));
    }
    paint(size, &palette, &planes)
}

pub fn generate(config: &DemoConfig) -> Result<DemoCampaign, MaskError> {
    let palette = Arc::new(demo_palette());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut images = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();
    let mut annotator_maps = BTreeMap::new();
    let mut entries = Vec::new();
    let mut annotations = Vec::new();
    let mut crowd_ids = Vec::new();
    let base_time = Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).single().expect("valid date");

    for i in 0..config.n_pool + config.n_crowd {
        let crowd = i >= config.n_pool;
        let image_id = if crowd {
            format!("crowd_{:02}", i - config.n_pool)
        } else {
            format!("slice_{i:02}")
        };
        let gt = phantom(config.size, &palette, &mut rng);
        let params = SynthesisParams::spread(&palette, 20.0, 230.0, 6.0, 0.8, config.seed ^ (i as u64 + 1));
        let image = toy_synthesize(&gt, &image_id, &params).expect("params cover palette").image;
        entries.push(ImageEntry {
            image_id: image_id.clone(),
            path: format!("images/{image_id}.png"),
            width: config.size,
            height: config.size,
            ground_truth_path: Some(format!("ground_truth/{image_id}.png")),
        });
        if crowd {
            let mut maps = Vec::new();
            for a in 0..config.n_annotators {
                let m = perturb(&gt, &mut rng);
                for c in palette.class_ids() {
                    let plane = m.plane(c);
                    if plane.is_empty() {
                        continue;
                    }
                    annotations.push(AnnotationRecord {
                        image_id: image_id.clone(),
                        annotator_id: format!("annotator_{:02}", a + 1),
                        task_id: "task_5".into(),
                        class_name: palette.name_of(c).expect("palette class").to_string(),
                        mask: MaskSource::Rle(encode_rle(&plane)),
                        created_at: base_time + chrono::Duration::seconds((i * 100 + a * 10 + c as usize) as i64),
                        source_dialect: SourceDialect::Canonical,
                    });
                }
                maps.push(m);
            }
            annotator_maps.insert(image_id.clone(), maps);
            crowd_ids.push(image_id.clone());
        }
        images.insert(image_id.clone(), image);
        ground_truth.insert(image_id, gt);
    }

    let document = CampaignDocument {
        schema_version: CAMPAIGN_SCHEMA_VERSION,
        palette: palette.as_ref().clone(),
        images: entries,
        annotations,
        tasks: vec![TaskEntry {
            task_id: "task_5".into(),
            description: "Label the specified abdominal organs with AI assistance and ground truth exemplars".into(),
            image_ids: crowd_ids,
            ai_assist: true,
            exemplars_provided: true,
        }],
    };
    Ok(DemoCampaign {
        document,
        images,
        ground_truth,
        annotator_maps,
    })
}

impl DemoCampaign {
    /// Writes `campaign.json`, `images/` and `ground_truth/` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MaskError> {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("ground_truth"))?;
        for (id, img) in &self.images {
            std::fs::write(dir.join(format!("images/{id}.png")), img.to_png_bytes()?)?;
        }
        for (id, gt) in &self.ground_truth {
            std::fs::write(dir.join(format!("ground_truth/{id}.png")), gt.to_png_bytes()?)?;
        }
        let mut json = serde_json::to_string_pretty(&self.document).expect("document serializes");
        json.push('\n');
        std::fs::write(dir.join("campaign.json"), json)?;
        Ok(())
    }
}
