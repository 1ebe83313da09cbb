//! Control, enlarged and enhanced dataset manifests.
//!
//! * control: real training images with ground truth, plus the real test split
//! * enlarged: control + synthetic images generated from the training labels
//! * enhanced: enlarged + merged crowd labels that passed the quality gate
//!
//! The test split only ever holds real images.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::mask::{ClassPalette, LabelMap};
use crate::metrics::{score_labelmaps, MetricsError};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const CROWD_ITEM_POLICY: &str =
    "one multi-class item per merged image; classes that fail the gate are set to background";

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("pool of {pool} images cannot supply {requested}")]
    PoolTooSmall { pool: usize, requested: usize },
    #[error("recipe violation: {0}")]
    RecipeViolation(String),
    #[error("gate violation: {0}")]
    GateViolation(String),
    #[error("no ground truth for {0}")]
    MissingGroundTruth(String),
    #[error("invalid quality gate: {0}")]
    InvalidGate(String),
    #[error("leak: {0}")]
    Leak(String),
    #[error("duplicate item ({image_ref}, {item_source:?})")]
    DuplicateItem { image_ref: String, item_source: Source },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
    CrowdMerged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Control,
    Enlarged,
    Enhanced,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "control" => Ok(Variant::Control),
            "enlarged" => Ok(Variant::Enlarged),
            "enhanced" => Ok(Variant::Enhanced),
            other => Err(format!("unknown variant {other:?} (control, enlarged, enhanced)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub image_id: String,
    pub image_ref: String,
    pub label_ref: String,
    pub source: Source,
    pub split: Split,
    pub provenance: BTreeMap<String, Value>,
}

/// Item counts per variant. Defaults reproduce the 10/10/10/5 experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub n_real_train: usize,
    pub n_test: usize,
    pub n_synthetic: usize,
    pub n_crowd: usize,
}

impl Default for Recipe {
    fn default() -> Self {
        Self {
            n_real_train: 10,
            n_test: 10,
            n_synthetic: 10,
            n_crowd: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGate {
    pub min_dsc: f64,
    pub min_iou: f64,
    pub require_ground_truth: bool,
}

impl Default for QualityGate {
    fn default() -> Self {
        Self {
            min_dsc: 0.95,
            min_iou: 0.92,
            require_ground_truth: true,
        }
    }
}

impl QualityGate {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, v) in [("min_dsc", self.min_dsc), ("min_iou", self.min_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::InvalidGate(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Strict on both scores.
    pub fn admits(&self, dsc: f64, iou: f64) -> bool {
        dsc > self.min_dsc && iou > self.min_iou
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub class_id: u8,
    pub class_name: String,
    pub dsc: f64,
    pub iou: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub classes: Vec<ClassVerdict>,
    /// Ids of classes that passed; empty means the item is rejected.
    pub passing: Vec<u8>,
}

impl GateVerdict {
    pub fn admitted(&self) -> bool {
        !self.passing.is_empty()
    }

    /// A verdict for a label that has no ground truth to compare against.
    pub fn ungated(palette: &ClassPalette) -> Self {
        Self {
            classes: Vec::new(),
            passing: palette.class_ids().collect(),
        }
    }
}

/// Scores `merged` against `gt` class by class. Only classes present in
/// either map are judged; a class absent from both is neither passed nor failed.
pub fn apply_gate(merged: &LabelMap, gt: Option<&LabelMap>, gate: &QualityGate, image_id: &str) -> Result<GateVerdict, DatasetError> {
    gate.validate()?;
    let Some(gt) = gt else {
        if gate.require_ground_truth {
            return Err(DatasetError::MissingGroundTruth(image_id.to_string()));
        }
        return Ok(GateVerdict::ungated(merged.palette()));
    };
    let palette = merged.palette();
    let scores = score_labelmaps(merged, gt, palette)?;
    let classes: Vec<ClassVerdict> = scores
        .iter()
        .filter(|s| !s.is_empty_pair())
        .map(|s| ClassVerdict {
            class_id: s.class_id,
            class_name: palette.name_of(s.class_id).unwrap_or_default().to_string(),
            dsc: s.dsc,
            iou: s.iou,
            pass: gate.admits(s.dsc, s.iou),
        })
        .collect();
    let passing = classes.iter().filter(|c| c.pass).map(|c| c.class_id).collect();
    Ok(GateVerdict { classes, passing })
}

/// The merged label restricted to the classes that passed.
pub fn gated_label(merged: &LabelMap, verdict: &GateVerdict) -> LabelMap {
    merged.retain_classes(&verdict.passing)
}

/// Uniform sample without replacement, first `n_train` to train and the next
/// `n_test` to test. Input order does not matter; both lists come back sorted.
pub fn split_pool(image_ids: &[String], n_train: usize, n_test: usize, seed: u64) -> Result<(Vec<String>, Vec<String>), DatasetError> {
    let pool: Vec<&String> = image_ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let requested = n_train + n_test;
    if pool.len() < requested {
        return Err(DatasetError::PoolTooSmall {
            pool: pool.len(),
            requested,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, pool.len(), requested).into_vec();
    let mut train: Vec<String> = picked[..n_train].iter().map(|&i| pool[i].clone()).collect();
    let mut test: Vec<String> = picked[n_train..].iter().map(|&i| pool[i].clone()).collect();
    train.sort();
    test.sort();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealInput {
    pub image_id: String,
    pub image_ref: String,
    pub label_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInput {
    pub image_ref: String,
    /// Label the image was generated from.
    pub label_ref: String,
    pub source_image_id: String,
    pub generator_version: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdInput {
    pub image_id: String,
    pub image_ref: String,
    /// Gated label (failing classes already zeroed).
    pub label_ref: String,
    pub n_annotators: usize,
    pub threshold: u16,
    pub verdict: GateVerdict,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildInputs {
    pub real_train: Vec<RealInput>,
    pub test: Vec<RealInput>,
    pub synthetic: Vec<SyntheticInput>,
    pub crowd: Vec<CrowdInput>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub real_train: usize,
    pub synthetic: usize,
    pub crowd_merged: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub variant: Variant,
    pub seed: u64,
    pub palette: ClassPalette,
    pub recipe: Recipe,
    pub gate: QualityGate,
    pub crowd_item_policy: String,
    pub summary: Summary,
    pub items: Vec<DatasetItem>,
}

fn expect_count(what: &str, expected: usize, got: usize) -> Result<(), DatasetError> {
    if expected != got {
        return Err(DatasetError::RecipeViolation(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn build_variant(
    name: &str,
    variant: Variant,
    inputs: &BuildInputs,
    recipe: &Recipe,
    gate: &QualityGate,
    palette: &ClassPalette,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    gate.validate()?;
    expect_count("real_train", recipe.n_real_train, inputs.real_train.len())?;
    expect_count("test", recipe.n_test, inputs.test.len())?;
    if variant >= Variant::Enlarged {
        expect_count("synthetic", recipe.n_synthetic, inputs.synthetic.len())?;
    }
    if variant >= Variant::Enhanced {
        expect_count("crowd_merged", recipe.n_crowd, inputs.crowd.len())?;
    }

    let train_ids: BTreeSet<&str> = inputs.real_train.iter().map(|r| r.image_id.as_str()).collect();
    let test_ids: BTreeSet<&str> = inputs.test.iter().map(|r| r.image_id.as_str()).collect();
    if let Some(both) = train_ids.intersection(&test_ids).next() {
        return Err(DatasetError::Leak(format!("image {both} is in both train and test")));
    }

    let mut items = Vec::new();
    let real = |r: &RealInput, split| DatasetItem {
        image_id: r.image_id.clone(),
        image_ref: r.image_ref.clone(),
        label_ref: r.label_ref.clone(),
        source: Source::Real,
        split,
        provenance: BTreeMap::from([("label".to_string(), json!("ground_truth"))]),
    };
    items.extend(inputs.real_train.iter().map(|r| real(r, Split::Train)));
    items.extend(inputs.test.iter().map(|r| real(r, Split::Test)));

    if variant >= Variant::Enlarged {
        for s in &inputs.synthetic {
            if !train_ids.contains(s.source_image_id.as_str()) {
                return Err(DatasetError::Leak(format!(
                    "synthetic {} derives from {}, which is not a training image",
                    s.image_ref, s.source_image_id
                )));
            }
            items.push(DatasetItem {
                image_id: s.source_image_id.clone(),
                image_ref: s.image_ref.clone(),
                label_ref: s.label_ref.clone(),
                source: Source::Synthetic,
                split: Split::Train,
                provenance: BTreeMap::from([
                    ("generator_version".to_string(), json!(s.generator_version)),
                    ("digest".to_string(), json!(s.digest)),
                    ("source_image_id".to_string(), json!(s.source_image_id)),
                ]),
            });
        }
    }

    if variant >= Variant::Enhanced {
        for c in &inputs.crowd {
            if test_ids.contains(c.image_id.as_str()) {
                return Err(DatasetError::Leak(format!("crowd label for test image {}", c.image_id)));
            }
            if !c.verdict.admitted() {
                let scores: Vec<String> = c
                    .verdict
                    .classes
                    .iter()
                    .map(|v| format!("{} dsc={:.4} iou={:.4}", v.class_name, v.dsc, v.iou))
                    .collect();
                return Err(DatasetError::GateViolation(format!(
                    "{} failed the gate: {}",
                    c.image_id,
                    scores.join(", ")
                )));
            }
            for v in c.verdict.classes.iter().filter(|v| c.verdict.passing.contains(&v.class_id)) {
                if !gate.admits(v.dsc, v.iou) {
                    return Err(DatasetError::GateViolation(format!(
                        "{} class {} recorded as passing with dsc={:.4} iou={:.4}",
                        c.image_id, v.class_name, v.dsc, v.iou
                    )));
                }
            }
            let gate_scores: BTreeMap<&str, Value> = c
                .verdict
                .classes
                .iter()
                .filter(|v| v.pass)
                .map(|v| (v.class_name.as_str(), json!({"dsc": v.dsc, "iou": v.iou})))
                .collect();
            let passing: Vec<&str> = c
                .verdict
                .passing
                .iter()
                .filter_map(|id| palette.name_of(*id))
                .collect();
            items.push(DatasetItem {
                image_id: c.image_id.clone(),
                image_ref: c.image_ref.clone(),
                label_ref: c.label_ref.clone(),
                source: Source::CrowdMerged,
                split: Split::Train,
                provenance: BTreeMap::from([
                    ("annotators".to_string(), json!(c.n_annotators)),
                    ("threshold".to_string(), json!(c.threshold)),
                    ("passing_classes".to_string(), json!(passing)),
                    ("gate_scores".to_string(), json!(gate_scores)),
                ]),
            });
        }
    }

    items.sort_by(|a, b| (a.source, &a.image_ref, a.split).cmp(&(b.source, &b.image_ref, b.split)));
    let mut seen = BTreeSet::new();
    for it in &items {
        if !seen.insert((it.image_ref.as_str(), it.source)) {
            return Err(DatasetError::DuplicateItem {
                image_ref: it.image_ref.clone(),
                item_source: it.source,
            });
        }
    }
    let count = |src: Source, split: Split| items.iter().filter(|i| i.source == src && i.split == split).count();
    let summary = Summary {
        real_train: count(Source::Real, Split::Train),
        synthetic: count(Source::Synthetic, Split::Train),
        crowd_merged: count(Source::CrowdMerged, Split::Train),
        test: count(Source::Real, Split::Test),
        total: items.len(),
    };
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        name: name.to_string(),
        variant,
        seed,
        palette: palette.clone(),
        recipe: *recipe,
        gate: *gate,
        crowd_item_policy: CROWD_ITEM_POLICY.to_string(),
        summary,
        items,
    };
    manifest.check_invariants()?;
    Ok(manifest)
}

impl DatasetManifest {
    /// Test purity and per-source uniqueness.
    pub fn check_invariants(&self) -> Result<(), DatasetError> {
        if let Some(bad) = self.items.iter().find(|i| i.split == Split::Test && i.source != Source::Real) {
            return Err(DatasetError::Leak(format!("{:?} item {} in the test split", bad.source, bad.image_ref)));
        }
        Ok(())
    }

    /// Pretty JSON with a trailing newline; stable for identical inputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "image_ref", "label_ref", "source", "split"])
            .expect("in-memory csv");
        for it in &self.items {
            let source = serde_json::to_value(it.source).expect("enum");
            let split = serde_json::to_value(it.split).expect("enum");
            w.write_record([
                it.image_id.as_str(),
                it.image_ref.as_str(),
                it.label_ref.as_str(),
                source.as_str().unwrap_or_default(),
                split.as_str().unwrap_or_default(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    }

    pub fn keys(&self) -> BTreeSet<(String, Source)> {
        self.items.iter().map(|i| (i.image_ref.clone(), i.source)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:02}")).collect()
    }

    #[test]
    fn split_pool_examples() {
        let pool = ids(20);
        let (train, test) = split_pool(&pool, 10, 10, 7).unwrap();
        assert_eq!((train.len(), test.len()), (10, 10));
        assert!(train.iter().all(|t| !test.contains(t)));
        assert_eq!(split_pool(&pool, 10, 10, 7).unwrap(), (train.clone(), test.clone()));
        let mut rev = pool.clone();
        rev.reverse();
        assert_eq!(split_pool(&rev, 10, 10, 7).unwrap(), (train, test));
        assert_eq!(
            split_pool(&ids(15), 10, 10, 7).unwrap_err(),
            DatasetError::PoolTooSmall { pool: 15, requested: 20 }
        );
    }

    #[test]
    fn gate_is_strict() {
        let g = QualityGate::default();
        assert!(g.admits(0.9698, 0.9415));
        assert!(!g.admits(0.95, 0.99));
        assert!(!g.admits(0.99, 0.92));
        assert!(QualityGate { min_dsc: 1.5, ..g }.validate().is_err());
    }

    #[test]
    fn gate_on_labelmaps() {
        let pal = Arc::new(ClassPalette::from_names(&["Liver", "Kidney", "Aorta"]).unwrap());
        let gt = LabelMap::new(4, 1, vec![1, 1, 2, 0], pal.clone()).unwrap();
        let v = apply_gate(&gt, Some(&gt), &QualityGate::default(), "x").unwrap();
        assert_eq!(v.passing, vec![1, 2]);
        // aorta absent from both maps is not judged
        assert_eq!(v.classes.len(), 2);
        let merged = LabelMap::new(4, 1, vec![1, 1, 0, 0], pal.clone()).unwrap();
        let v = apply_gate(&merged, Some(&gt), &QualityGate::default(), "x").unwrap();
        assert_eq!(v.passing, vec![1]);
        assert_eq!(gated_label(&merged, &v).data(), &[1, 1, 0, 0]);
        assert_eq!(
            apply_gate(&merged, None, &QualityGate::default(), "x").unwrap_err(),
            DatasetError::MissingGroundTruth("x".into())
        );
        let lax = QualityGate { require_ground_truth: false, ..QualityGate::default() };
        assert!(apply_gate(&merged, None, &lax, "x").unwrap().admitted());
    }
}
