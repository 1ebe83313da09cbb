//! Subcommand bodies. Each takes fully resolved settings, so tests and the
//! pipeline can call them without going through argument parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crowdseg_core::dataset::{
    apply_gate, build_variant, gated_label, split_pool, BuildInputs, CrowdInput, DatasetManifest, GateVerdict,
    QualityGate, RealInput, Recipe, SyntheticInput, Variant,
};
use crowdseg_core::demo::{self, DemoConfig};
use crowdseg_core::fusion::{merge_labels, MergePolicy};
use crowdseg_core::ingest::{load_campaign, Campaign};
use crowdseg_core::metrics::{aggregate, render_tables, score_labelmaps, unpaired_t_test, CiMethod, GroupComparison, MetricReport, PairScore, TTestVariant};
use crowdseg_core::raster::encode_png_luma16;
use crowdseg_core::synth::{toy_synthesize, GeneratorClient, SynthesisParams, SyntheticImageRecord};
use crowdseg_core::{ClassPalette, LabelMap};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::CliError;
use crate::fsio::{ensure_distinct, read_json, relative_ref, write_atomic, write_json};

pub const SYNTH_INDEX: &str = "synthetic.json";
pub const MERGE_SUMMARY: &str = "merge_summary.json";
pub const RUN_RECORD: &str = "run.json";

/// Settings echoed next to the artifacts of every run. Paths are left out so
/// identical runs in different directories produce identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub settings: BTreeMap<String, serde_json::Value>,
}

pub fn write_run_record(out: &Path, subcommand: &str, seed: Option<u64>, settings: serde_json::Value) -> Result<(), CliError> {
    let settings = match settings {
        serde_json::Value::Object(m) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    };
    if let Some(seed) = seed {
        info!(seed, "{subcommand}");
    }
    write_json(
        &out.join(RUN_RECORD),
        &RunRecord { subcommand: subcommand.into(), tool_version: env!("CARGO_PKG_VERSION").into(), seed, settings },
    )
}

fn png_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.png"))
}

// ---------------------------------------------------------------- merge

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedImage {
    pub image_id: String,
    pub annotators: Vec<String>,
    pub label: String,
    /// Class name to pixel count in the merged map.
    pub class_pixels: BTreeMap<String, u64>,
    /// Class name to 16-bit vote-count PNG.
    pub frequency_maps: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub policy: MergePolicy,
    pub images: Vec<MergedImage>,
}

pub fn merge_campaign(campaign: &Campaign, policy: &MergePolicy) -> Result<Vec<(String, LabelMap, crowdseg_core::fusion::MergeOutcome)>, CliError> {
    policy.validate()?;
    campaign
        .sets
        .par_iter()
        .map(|set| {
            let outcome = merge_labels(&set.maps, policy)
                .map_err(|e| CliError::from(e).context(&set.image_id))?;
            Ok((set.image_id.clone(), outcome.merged.clone(), outcome))
        })
        .collect()
}

pub fn merge(campaign_path: &Path, threshold: u16, out: &Path) -> Result<MergeSummary, CliError> {
    let campaign = load_campaign(campaign_path)?;
    let policy = MergePolicy::with_threshold(threshold);
    let merged = merge_campaign(&campaign, &policy)?;
    let palette = campaign.palette.clone();
    let images = merged
        .par_iter()
        .map(|(id, map, outcome)| {
            write_atomic(&png_path(out, id), &map.to_png_bytes()?)?;
            let mut frequency_maps = BTreeMap::new();
            for f in &outcome.frequencies {
                let name = palette.name_of(f.class_id).unwrap_or_default().to_string();
                let rel = format!("frequency/{id}/{name}.png");
                write_atomic(&out.join(&rel), &encode_png_luma16(f.width, f.height, &f.counts)?)?;
                frequency_maps.insert(name, rel);
            }
            let class_pixels = palette
                .class_ids()
                .map(|c| (palette.name_of(c).unwrap_or_default().to_string(), map.data().iter().filter(|&&v| v == c).count() as u64))
                .collect();
            let set = campaign.set(id).expect("merged from this campaign");
            Ok(MergedImage {
                image_id: id.clone(),
                annotators: set.annotators.clone(),
                label: format!("{id}.png"),
                class_pixels,
                frequency_maps,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let summary = MergeSummary { policy, images };
    write_json(&out.join(MERGE_SUMMARY), &summary)?;
    write_run_record(out, "merge", None, serde_json::json!({ "threshold": threshold }))?;
    Ok(summary)
}

impl CliError {
    fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub image_id: String,
    pub roi: String,
    pub dsc: f64,
    pub iou: f64,
    pub intersection: u64,
    pub size_pred: u64,
    pub size_gt: u64,
}

pub struct EvalSettings {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub palette: Arc<ClassPalette>,
    pub confidence: f64,
    pub method: CiMethod,
    pub name: String,
    pub out: PathBuf,
}

fn label_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn eval(s: &EvalSettings) -> Result<MetricReport, CliError> {
    ensure_distinct(&s.pred, &s.out)?;
    let ids = label_files(&s.pred)?;
    if ids.is_empty() {
        return Err(CliError::validation("EmptyInput", format!("no label PNGs in {}", s.pred.display())));
    }
    let per_image: Vec<(String, Vec<PairScore>)> = ids
        .par_iter()
        .map(|id| {
            let gt_path = png_path(&s.gt, id);
            if !gt_path.exists() {
                return Err(CliError::validation("MissingGroundTruth", format!("{id}: {} not found", gt_path.display())));
            }
            let pred = LabelMap::read_png(&png_path(&s.pred, id), s.palette.clone()).map_err(|e| CliError::from(e).context(id))?;
            let gt = LabelMap::read_png(&gt_path, s.palette.clone()).map_err(|e| CliError::from(e).context(id))?;
            Ok((id.clone(), score_labelmaps(&pred, &gt, &s.palette)?))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::new();
    let mut score_rows = Vec::new();
    for c in s.palette.class_ids() {
        let roi = s.palette.name_of(c).unwrap_or_default();
        let scores: Vec<PairScore> = per_image.iter().map(|(_, v)| *v.iter().find(|p| p.class_id == c).expect("one per class")).collect();
        rows.push(aggregate(roi, &scores, s.confidence, s.method)?);
        for ((id, _), p) in per_image.iter().zip(&scores) {
            score_rows.push(ScoreRow {
                image_id: id.clone(),
                roi: roi.to_string(),
                dsc: p.dsc,
                iou: p.iou,
                intersection: p.intersection,
                size_pred: p.size_x,
                size_gt: p.size_y,
            });
        }
    }
    let report = MetricReport { name: s.name.clone(), confidence: s.confidence, rows, tests: Vec::new() };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &score_rows {
        w.serialize(r).map_err(|e| CliError::io(e.to_string()))?;
    }
    write_atomic(&s.out.join("scores.csv"), &w.into_inner().map_err(|e| CliError::io(e.to_string()))?)?;
    write_atomic(&s.out.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&s.out.join("report.txt"), report.to_table().as_bytes())?;
    write_json(&s.out.join("report.json"), &report)?;
    let seed = match s.method {
        CiMethod::Bootstrap { seed, .. } => Some(seed),
        CiMethod::StudentT => None,
    };
    write_run_record(&s.out, "eval", seed, serde_json::json!({ "confidence": s.confidence, "method": s.method, "name": s.name }))?;
    Ok(report)
}

pub fn read_scores(dir: &Path) -> Result<Vec<ScoreRow>, CliError> {
    let path = dir.join("scores.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::validation("SchemaError", format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- split / synth

/// Ground-truth images without crowd annotations form the real pool.
pub fn plan_split(campaign: &Campaign, recipe: &Recipe, seed: u64) -> Result<(Vec<String>, Vec<String>), CliError> {
    let annotated = campaign.document.annotated_image_ids();
    let pool: Vec<String> = campaign
        .document
        .images
        .iter()
        .filter(|e| e.ground_truth_path.is_some() && !annotated.contains(&e.image_id))
        .map(|e| e.image_id.clone())
        .collect();
    Ok(split_pool(&pool, recipe.n_real_train, recipe.n_test, seed)?)
}

#[derive(Debug, Clone)]
pub enum Generator {
    Toy,
    Remote { url: String, timeout: Duration, retries: u32 },
}

impl Generator {
    pub fn describe(&self) -> serde_json::Value {
        match self {
            Generator::Toy => serde_json::json!("toy"),
            Generator::Remote { .. } => serde_json::json!("remote"),
        }
    }
}

pub struct SynthSettings {
    pub campaign: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub recipe: Recipe,
    pub generator: Generator,
}

/// Per-image toy seed: FNV-1a of the image id folded into the run seed.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in image_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

pub fn toy_params(palette: &ClassPalette, seed: u64, image_id: &str) -> SynthesisParams {
    SynthesisParams::spread(palette, 20.0, 230.0, 6.0, 0.8, image_seed(seed, image_id))
}

pub fn synth(s: &SynthSettings) -> Result<Vec<SyntheticInput>, CliError> {
    let campaign = load_campaign(&s.campaign)?;
    let (train, _) = plan_split(&campaign, &s.recipe, s.seed)?;
    let sources: Vec<String> = train.into_iter().take(s.recipe.n_synthetic).collect();
    let jobs: Vec<(String, LabelMap)> = sources
        .iter()
        .map(|id| {
            let gt = campaign.ground_truth.get(id).ok_or_else(|| CliError::validation("MissingGroundTruth", id.clone()))?;
            Ok((id.clone(), gt.clone()))
        })
        .collect::<Result<_, CliError>>()?;

    let palette = campaign.palette.clone();
    let results: Vec<(SyntheticImageRecord, Option<SynthesisParams>, Option<String>)> = match &s.generator {
        Generator::Toy => jobs
            .par_iter()
            .map(|(id, gt)| {
                let params = toy_params(&palette, s.seed, id);
                let rec = toy_synthesize(gt, id, &params)?;
                Ok((rec, Some(params), None))
            })
            .collect::<Result<_, CliError>>()?,
        Generator::Remote { url, timeout, retries } => {
            let client = GeneratorClient::new(url, *timeout, *retries)?;
            client
                .generate_all(&jobs, &format!("synth-{}-", s.seed), crowdseg_core::synth::DEFAULT_REMOTE_CONCURRENCY)
                .into_iter()
                .map(|r| r.map(|o| (o.record, None, Some(o.request_id))).map_err(CliError::from))
                .collect::<Result<_, CliError>>()?
        }
    };

    let mut index = Vec::new();
    for (rec, params, request_id) in &results {
        let id = &rec.source_label;
        let image_rel = format!("images/{id}_syn.png");
        write_atomic(&s.out.join(&image_rel), &rec.image.to_png_bytes()?)?;
        let prov = rec.provenance(&image_rel, params.as_ref(), request_id.as_deref());
        write_json(&s.out.join(format!("images/{id}_syn.json")), &prov)?;
        let entry = campaign.document.image(id).expect("planned from this campaign");
        let gt_path = campaign.resolve(entry.ground_truth_path.as_deref().expect("pool images have ground truth"));
        index.push(SyntheticInput {
            image_ref: image_rel,
            label_ref: relative_ref(&gt_path, &s.out),
            source_image_id: id.clone(),
            generator_version: rec.generator_version.clone(),
            digest: rec.digest.clone(),
        });
    }
    write_json(&s.out.join(SYNTH_INDEX), &index)?;
    write_run_record(&s.out, "synth", Some(s.seed), serde_json::json!({ "generator": s.generator.describe(), "recipe": s.recipe }))?;
    Ok(index)
}

// ---------------------------------------------------------------- build

pub struct BuildSettings {
    pub campaign: PathBuf,
    pub variant: Variant,
    pub synthetic: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threshold: u16,
    pub gate: QualityGate,
    pub recipe: Recipe,
}

#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    pub image_id: String,
    pub selected: bool,
    pub verdict: GateVerdict,
}

fn load_synthetic(dir: &Path, out: &Path) -> Result<Vec<SyntheticInput>, CliError> {
    let index_path = dir.join(SYNTH_INDEX);
    if !index_path.exists() {
        return Ok(Vec::new());
    }
    let index: Vec<SyntheticInput> = read_json(&index_path)?;
    Ok(index
        .into_iter()
        .map(|s| SyntheticInput {
            image_ref: relative_ref(&dir.join(&s.image_ref), out),
            label_ref: relative_ref(&dir.join(&s.label_ref), out),
            ..s
        })
        .collect())
}

pub fn build(s: &BuildSettings) -> Result<DatasetManifest, CliError> {
    s.gate.validate()?;
    let campaign = load_campaign(&s.campaign)?;
    let (train, test) = plan_split(&campaign, &s.recipe, s.seed)?;
    let real = |id: &String| -> RealInput {
        let e = campaign.document.image(id).expect("planned from this campaign");
        RealInput {
            image_id: id.clone(),
            image_ref: relative_ref(&campaign.resolve(&e.path), &s.out),
            label_ref: relative_ref(&campaign.resolve(e.ground_truth_path.as_deref().expect("pool")), &s.out),
        }
    };
    let mut inputs = BuildInputs {
        real_train: train.iter().map(real).collect(),
        test: test.iter().map(real).collect(),
        ..BuildInputs::default()
    };
    if s.variant >= Variant::Enlarged {
        inputs.synthetic = match &s.synthetic {
            Some(dir) => load_synthetic(dir, &s.out)?,
            None => Vec::new(),
        };
    }
    let mut gate_report = Vec::new();
    if s.variant >= Variant::Enhanced {
        let policy = MergePolicy::with_threshold(s.threshold);
        let merged = merge_campaign(&campaign, &policy)?;
        let mut candidates: Vec<_> = merged.into_iter().filter(|(id, _, _)| campaign.ground_truth.contains_key(id)).collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0));
        for (id, map, _) in candidates {
            let verdict = apply_gate(&map, campaign.ground_truth.get(&id), &s.gate, &id)?;
            let selected = verdict.admitted() && inputs.crowd.len() < s.recipe.n_crowd;
            if selected {
                let label_rel = format!("crowd_labels/{id}.png");
                write_atomic(&s.out.join(&label_rel), &gated_label(&map, &verdict).to_png_bytes()?)?;
                let e = campaign.document.image(&id).expect("declared image");
                inputs.crowd.push(CrowdInput {
                    image_id: id.clone(),
                    image_ref: relative_ref(&campaign.resolve(&e.path), &s.out),
                    label_ref: label_rel,
                    n_annotators: campaign.set(&id).map_or(0, |set| set.maps.len()),
                    threshold: s.threshold,
                    verdict: verdict.clone(),
                });
            }
            gate_report.push(GateReport { image_id: id, selected, verdict });
        }
    }
    let name = format!("{:?}", s.variant).to_lowercase();
    let manifest = build_variant(&name, s.variant, &inputs, &s.recipe, &s.gate, &campaign.palette, s.seed)?;
    write_atomic(&s.out.join("manifest.json"), manifest.to_json().as_bytes())?;
    write_atomic(&s.out.join("manifest.csv"), manifest.to_csv().as_bytes())?;
    if s.variant >= Variant::Enhanced {
        write_json(&s.out.join("gate_report.json"), &gate_report)?;
    }
    write_run_record(
        &s.out,
        "build",
        Some(s.seed),
        serde_json::json!({ "variant": s.variant, "threshold": s.threshold, "gate": s.gate, "recipe": s.recipe }),
    )?;
    Ok(manifest)
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub reports: Vec<MetricReport>,
    pub comparisons: Vec<GroupComparison>,
}

pub fn report(evals: &[(String, PathBuf)], variant: TTestVariant, out: &Path) -> Result<ReportDocument, CliError> {
    let mut reports = Vec::new();
    let mut scores = Vec::new();
    for (name, dir) in evals {
        let mut r: MetricReport = read_json(&dir.join("report.json"))?;
        r.name = name.clone();
        reports.push(r);
        scores.push(read_scores(dir)?);
    }
    let mut comparisons = Vec::new();
    if let Some((base_name, base)) = evals.first().map(|(n, _)| n).zip(scores.first()) {
        for ((name, _), other) in evals.iter().zip(&scores).skip(1) {
            for roi in reports[0].rows.iter().map(|r| r.roi.clone()) {
                for metric in ["dsc", "iou"] {
                    let pick = |rows: &[ScoreRow]| -> Vec<f64> {
                        rows.iter().filter(|r| r.roi == roi).map(|r| if metric == "dsc" { r.dsc } else { r.iou }).collect()
                    };
                    let (a, b) = (pick(base), pick(other));
                    if a.len() < 2 || b.len() < 2 {
                        continue;
                    }
                    comparisons.push(GroupComparison {
                        metric: metric.into(),
                        roi: roi.clone(),
                        group_a: base_name.clone(),
                        group_b: name.clone(),
                        variant,
                        result: unpaired_t_test(&a, &b, variant)?,
                    });
                }
            }
        }
    }
    let mut text = render_tables(&reports);
    if !comparisons.is_empty() {
        text.push('\n');
        text.push_str(&comparison_table(&comparisons));
    }
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    let doc = ReportDocument { reports, comparisons };
    write_json(&out.join("report.json"), &doc)?;
    write_run_record(out, "report", None, serde_json::json!({ "test": variant, "groups": evals.iter().map(|(n, _)| n).collect::<Vec<_>>() }))?;
    Ok(doc)
}

fn comparison_table(rows: &[GroupComparison]) -> String {
    let roi_w = rows.iter().map(|r| r.roi.len()).max().unwrap_or(3).max(3);
    let pair_w = rows.iter().map(|r| r.group_a.len() + r.group_b.len() + 4).max().unwrap_or(10);
    let mut out = format!("{:roi_w$} | {:pair_w$} | {:6} | {:>9} | {:>8} | {:>9}\n", "ROI", "groups", "metric", "t", "df", "p");
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for r in rows {
        let flag = if r.result.zero_variance { " (zero variance)" } else { "" };
        out.push_str(&format!(
            "{:roi_w$} | {:pair_w$} | {:6} | {:>9.4} | {:>8.2} | {:>9.4}{flag}\n",
            r.roi,
            format!("{} vs {}", r.group_a, r.group_b),
            r.metric,
            r.result.t_statistic,
            r.result.degrees_of_freedom,
            r.result.p_value,
        ));
    }
    out
}

// ---------------------------------------------------------------- demo / pipeline

pub fn write_demo(out: &Path, config: &DemoConfig) -> Result<(), CliError> {
    let campaign = demo::generate(config)?;
    campaign.write(out)?;
    Ok(())
}

pub struct PipelineSettings {
    pub campaign: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub threshold: u16,
    pub gate: QualityGate,
    pub confidence: f64,
    pub recipe: Recipe,
    pub generator: Generator,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifests: Vec<DatasetManifest>,
    pub report: ReportDocument,
}

/// Writes each annotator's flattened submissions as label PNGs, one directory per annotator.
fn write_annotator_maps(campaign: &Campaign, out: &Path) -> Result<Vec<String>, CliError> {
    let mut annotators = std::collections::BTreeSet::new();
    for set in &campaign.sets {
        for (who, map) in set.annotators.iter().zip(&set.maps) {
            write_atomic(&png_path(&out.join(who), &set.image_id), &map.to_png_bytes()?)?;
            annotators.insert(who.clone());
        }
    }
    Ok(annotators.into_iter().collect())
}

pub fn pipeline(s: &PipelineSettings) -> Result<PipelineOutcome, CliError> {
    let merged_dir = s.out.join("merged");
    merge(&s.campaign, s.threshold, &merged_dir)?;
    let campaign = load_campaign(&s.campaign)?;
    let gt_dir = campaign
        .document
        .images
        .iter()
        .find_map(|e| e.ground_truth_path.as_deref())
        .and_then(|p| campaign.resolve(p).parent().map(Path::to_path_buf))
        .ok_or_else(|| CliError::validation("MissingGroundTruth", "campaign has no ground truth"))?;
    let eval_in = |name: &str, pred: PathBuf| -> Result<(String, PathBuf), CliError> {
        let out = s.out.join("eval").join(name);
        eval(&EvalSettings {
            pred,
            gt: gt_dir.clone(),
            palette: campaign.palette.clone(),
            confidence: s.confidence,
            method: CiMethod::StudentT,
            name: name.into(),
            out: out.clone(),
        })?;
        Ok((name.to_string(), out))
    };
    let mut evals = vec![eval_in("merged", merged_dir.clone())?];
    let annot_dir = s.out.join("annotators");
    for who in write_annotator_maps(&campaign, &annot_dir)? {
        evals.push(eval_in(&who, annot_dir.join(&who))?);
    }
    let synth_dir = s.out.join("synth");
    synth(&SynthSettings {
        campaign: s.campaign.clone(),
        out: synth_dir.clone(),
        seed: s.seed,
        recipe: s.recipe,
        generator: s.generator.clone(),
    })?;
    let mut manifests = Vec::new();
    for variant in [Variant::Control, Variant::Enlarged, Variant::Enhanced] {
        manifests.push(build(&BuildSettings {
            campaign: s.campaign.clone(),
            variant,
            synthetic: Some(synth_dir.clone()),
            out: s.out.join("dataset").join(format!("{variant:?}").to_lowercase()),
            seed: s.seed,
            threshold: s.threshold,
            gate: s.gate,
            recipe: s.recipe,
        })?);
    }
    let report = report(&evals, TTestVariant::Welch, &s.out.join("report"))?;
    write_run_record(
        &s.out,
        "pipeline",
        Some(s.seed),
        serde_json::json!({ "threshold": s.threshold, "gate": s.gate, "confidence": s.confidence, "recipe": s.recipe, "generator": s.generator.describe() }),
    )?;
    Ok(PipelineOutcome { manifests, report })
}
