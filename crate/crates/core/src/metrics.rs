//! Overlap scores, per-ROI aggregation with confidence intervals, and
//! unpaired two-sample t-tests.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::mask::{BinaryPlane, ClassPalette, LabelMap};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("label maps do not use the supplied palette")]
    PaletteMismatch,
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("confidence {0} is outside (0, 1)")]
    InvalidConfidence(f64),
    #[error("t-test needs at least 2 samples per group, got {0} and {1}")]
    InsufficientSamples(usize, usize),
    #[error("non-finite sample value")]
    NonFinite,
}

/// DSC and IoU for one class on one image, with the raw counts behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub class_id: u8,
    pub dsc: f64,
    pub iou: f64,
    pub intersection: u64,
    pub size_x: u64,
    pub size_y: u64,
    pub union: u64,
}

impl PairScore {
    /// Both planes empty; scored as perfect agreement.
    pub fn is_empty_pair(&self) -> bool {
        self.size_x == 0 && self.size_y == 0
    }

    /// DSC as an unreduced fraction.
    pub fn dsc_ratio(&self) -> (u64, u64) {
        if self.is_empty_pair() {
            (1, 1)
        } else {
            (2 * self.intersection, self.size_x + self.size_y)
        }
    }

    pub fn iou_ratio(&self) -> (u64, u64) {
        if self.union == 0 {
            (1, 1)
        } else {
            (self.intersection, self.union)
        }
    }
}

pub fn pair_score(x: &BinaryPlane, y: &BinaryPlane) -> Result<PairScore, MetricsError> {
    if x.dims() != y.dims() {
        return Err(MetricsError::DimensionMismatch(x.dims(), y.dims()));
    }
    let (mut inter, mut sx, mut sy) = (0u64, 0u64, 0u64);
    for (&a, &b) in x.bits().iter().zip(y.bits()) {
        sx += a as u64;
        sy += b as u64;
        inter += (a && b) as u64;
    }
    Ok(score_from_counts(0, inter, sx, sy))
}

pub(crate) fn score_from_counts(class_id: u8, intersection: u64, size_x: u64, size_y: u64) -> PairScore {
    let union = size_x + size_y - intersection;
    let (dsc, iou) = if union == 0 {
        (1.0, 1.0)
    } else {
        (
            (2 * intersection) as f64 / (size_x + size_y) as f64,
            intersection as f64 / union as f64,
        )
    };
    PairScore {
        class_id,
        dsc,
        iou,
        intersection,
        size_x,
        size_y,
        union,
    }
}

/// One score per palette class, `pred` as X and `gt` as Y.
pub fn score_labelmaps(pred: &LabelMap, gt: &LabelMap, palette: &ClassPalette) -> Result<Vec<PairScore>, MetricsError> {
    if pred.dims() != gt.dims() {
        return Err(MetricsError::DimensionMismatch(pred.dims(), gt.dims()));
    }
    if pred.palette().as_ref() != palette || gt.palette().as_ref() != palette {
        return Err(MetricsError::PaletteMismatch);
    }
    Ok(palette
        .class_ids()
        .map(|c| {
            let (mut inter, mut sx, mut sy) = (0u64, 0u64, 0u64);
            for (&p, &g) in pred.data().iter().zip(gt.data()) {
                let (a, b) = (p == c, g == c);
                sx += a as u64;
                sy += b as u64;
                inter += (a && b) as u64;
            }
            score_from_counts(c, inter, sx, sy)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CiMethod {
    /// mean ± t·s/√n
    #[default]
    StudentT,
    /// Percentile bootstrap of the mean.
    Bootstrap { resamples: u32, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    pub n: usize,
    /// `n == 1`: the interval collapses to the mean.
    pub degenerate: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Quantile of Student's t with `df` degrees of freedom.
///
/// The closed-form incomplete-beta inversion is polished with Newton steps on
/// the CDF, which is accurate to a few ulps.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let mut x = dist.inverse_cdf(p);
    for _ in 0..4 {
        let err = dist.cdf(x) - p;
        let step = err / statrs::distribution::Continuous::pdf(&dist, x);
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

pub fn confidence_interval(values: &[f64], confidence: f64, method: CiMethod) -> Result<Estimate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::InvalidConfidence(confidence));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = values.len();
    let m = mean(values);
    if n == 1 {
        return Ok(Estimate {
            mean: m,
            low: m,
            high: m,
            n,
            degenerate: true,
        });
    }
    let (low, high) = match method {
        CiMethod::StudentT => {
            let t = student_t_quantile((1.0 + confidence) / 2.0, (n - 1) as f64);
            let half = t * sample_variance(values).sqrt() / (n as f64).sqrt();
            (m - half, m + half)
        }
        CiMethod::Bootstrap { resamples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut means: Vec<f64> = (0..resamples.max(1))
                .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
                .collect();
            means.sort_by(f64::total_cmp);
            let alpha = (1.0 - confidence) / 2.0;
            (percentile(&means, alpha), percentile(&means, 1.0 - alpha))
        }
    };
    Ok(Estimate {
        mean: m,
        low,
        high,
        n,
        degenerate: false,
    })
}

/// Linear interpolation between order statistics of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub roi: String,
    pub mean_dsc: f64,
    pub dsc_ci_low: f64,
    pub dsc_ci_high: f64,
    pub mean_iou: f64,
    pub iou_ci_low: f64,
    pub iou_ci_high: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Collapses per-image scores of one ROI into a report row.
pub fn aggregate(roi: &str, scores: &[PairScore], confidence: f64, method: CiMethod) -> Result<ReportRow, MetricsError> {
    let dsc: Vec<f64> = scores.iter().map(|s| s.dsc).collect();
    let iou: Vec<f64> = scores.iter().map(|s| s.iou).collect();
    let d = confidence_interval(&dsc, confidence, method)?;
    let j = confidence_interval(&iou, confidence, method)?;
    let mut warnings = Vec::new();
    if d.degenerate {
        warnings.push("degenerate_ci: single sample".to_string());
    }
    let empty = scores.iter().filter(|s| s.is_empty_pair()).count();
    if empty > 0 {
        warnings.push(format!("empty_pairs: {empty} image(s) scored 1.0 on mutual absence"));
    }
    Ok(ReportRow {
        roi: roi.to_string(),
        mean_dsc: d.mean,
        dsc_ci_low: d.low,
        dsc_ci_high: d.high,
        mean_iou: j.mean,
        iou_ci_low: j.low,
        iou_ci_high: j.high,
        n: d.n,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestVariant {
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Both groups have zero variance; `t` is 0 or infinite and `p` is 1 or 0.
    pub zero_variance: bool,
}

pub fn unpaired_t_test(a: &[f64], b: &[f64], variant: TTestVariant) -> Result<TTest, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::InsufficientSamples(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let (se, df) = match variant {
        TTestVariant::Pooled => {
            let df = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((sp2 * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
        TTestVariant::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let denom = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
            let df = if denom > 0.0 { se2 * se2 / denom } else { na + nb - 2.0 };
            (se2.sqrt(), df)
        }
    };
    if se == 0.0 {
        let equal = ma == mb;
        return Ok(TTest {
            t_statistic: if equal {
                0.0
            } else {
                f64::INFINITY.copysign(ma - mb)
            },
            degrees_of_freedom: df,
            p_value: if equal { 1.0 } else { 0.0 },
            zero_variance: true,
        });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        zero_variance: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub metric: String,
    pub roi: String,
    pub group_a: String,
    pub group_b: String,
    pub variant: TTestVariant,
    #[serde(flatten)]
    pub result: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub confidence: f64,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<GroupComparison>,
}

pub const CSV_HEADER: [&str; 8] = ["roi", "mean_dsc", "dsc_lo", "dsc_hi", "mean_iou", "iou_lo", "iou_hi", "n"];

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory csv");
        for r in &self.rows {
            w.write_record([
                r.roi.clone(),
                format!("{:.6}", r.mean_dsc),
                format!("{:.6}", r.dsc_ci_low),
                format!("{:.6}", r.dsc_ci_high),
                format!("{:.6}", r.mean_iou),
                format!("{:.6}", r.iou_ci_low),
                format!("{:.6}", r.iou_ci_high),
                r.n.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    }

    /// Text table with the mean on one line and the bracketed interval below it.
    pub fn to_table(&self) -> String {
        render_tables(std::slice::from_ref(self))
    }
}

/// Lays several reports out side by side, one DSC/IoU column pair each.
/// Display values are clamped to [0, 1]; clamped bounds carry a `*`.
pub fn render_tables(reports: &[MetricReport]) -> String {
    let mut rois: Vec<&str> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !rois.contains(&row.roi.as_str()) {
                rois.push(&row.roi);
            }
        }
    }
    let roi_w = rois.iter().map(|r| r.len()).max().unwrap_or(3).max(3);
    const CELL: usize = 19;
    let mut out = String::new();
    let _ = write!(out, "{:roi_w$}", "");
    for r in reports {
        let _ = write!(out, " | {:^w$}", r.name, w = CELL * 2 + 3);
    }
    out.push('\n');
    let _ = write!(out, "{:roi_w$}", "ROI");
    for _ in reports {
        let _ = write!(out, " | {:^CELL$} | {:^CELL$}", "DSC", "IoU");
    }
    out.push('\n');
    let width = out.lines().last().map_or(0, str::len);
    out.push_str(&"-".repeat(width));
    out.push('\n');
    let bound = |v: f64| {
        if v < 0.0 {
            "0.0000*".to_string()
        } else if v > 1.0 {
            "1.0000*".to_string()
        } else {
            format!("{v:.4}")
        }
    };
    for roi in &rois {
        let _ = write!(out, "{roi:roi_w$}");
        let mut ci_line = format!("{:roi_w$}", "");
        for r in reports {
            match r.rows.iter().find(|row| row.roi == *roi) {
                Some(row) => {
                    let _ = write!(out, " | {:^CELL$} | {:^CELL$}", format!("{:.4}", row.mean_dsc), format!("{:.4}", row.mean_iou));
                    let _ = write!(
                        ci_line,
                        " | {:^CELL$} | {:^CELL$}",
                        format!("[{} {}]", bound(row.dsc_ci_low), bound(row.dsc_ci_high)),
                        format!("[{} {}]", bound(row.iou_ci_low), bound(row.iou_ci_high))
                    );
                }
                None => {
                    let _ = write!(out, " | {:^CELL$} | {:^CELL$}", "-", "-");
                    let _ = write!(ci_line, " | {:^CELL$} | {:^CELL$}", "", "");
                }
            }
        }
        out.push('\n');
        out.push_str(ci_line.trim_end());
        out.push('\n');
    }
    for r in reports {
        for t in &r.tests {
            let _ = writeln!(
                out,
                "{} {}: {} vs {} ({:?}) t = {:.4}, df = {:.2}, p = {:.3e}{}",
                t.roi,
                t.metric,
                t.group_a,
                t.group_b,
                t.variant,
                t.result.t_statistic,
                t.result.degrees_of_freedom,
                t.result.p_value,
                if t.result.zero_variance { " [zero variance]" } else { "" }
            );
        }
    }
    out
}
