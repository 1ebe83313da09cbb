//! Thresholded pixel-wise majority voting over an ensemble of crowd labels.
//!
//! For each palette class the members' planes are summed into a
//! [`FrequencyMap`]; pixels whose count reaches the threshold become candidates
//! for that class. A pixel claimed by several classes keeps the one with the
//! most votes, ties going to the lowest class id. Everything else is background.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BinaryPlane, ClassPalette, LabelMap};

pub const DEFAULT_THRESHOLD: u16 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("ensemble member {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("ensemble member {index} uses a different palette")]
    PaletteMismatch { index: usize },
    #[error("{got} annotators, merge policy requires at least {required}")]
    InsufficientAnnotators { required: u16, got: usize },
    #[error("invalid merge policy: {0}")]
    InvalidPolicy(String),
}

/// Per-pixel vote counts for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyMap {
    pub width: u32,
    pub height: u32,
    pub class_id: u8,
    pub counts: Vec<u16>,
    pub n_annotators: u16,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapRule {
    #[default]
    HighestVoteThenLowestClassId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePolicy {
    pub threshold: u16,
    #[serde(default)]
    pub overlap_rule: OverlapRule,
    pub min_annotators: u16,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self::with_threshold(DEFAULT_THRESHOLD)
    }
}

impl MergePolicy {
    /// Policy whose minimum ensemble size equals the threshold.
    pub fn with_threshold(threshold: u16) -> Self {
        Self {
            threshold,
            overlap_rule: OverlapRule::HighestVoteThenLowestClassId,
            min_annotators: threshold,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.threshold < 1 {
            return Err(FusionError::InvalidPolicy("threshold must be at least 1".into()));
        }
        if self.min_annotators < self.threshold {
            return Err(FusionError::InvalidPolicy(format!(
                "min_annotators {} is below threshold {}",
                self.min_annotators, self.threshold
            )));
        }
        Ok(())
    }
}

/// Bundle returned by [`merge_labels`].
#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub merged: LabelMap,
    /// One map per palette class, in palette order.
    pub frequencies: Vec<FrequencyMap>,
}

fn check_ensemble(ensemble: &[LabelMap]) -> Result<&Arc<ClassPalette>, FusionError> {
    let first = ensemble.first().ok_or(FusionError::EmptyEnsemble)?;
    if ensemble.len() > u16::MAX as usize {
        return Err(FusionError::InvalidPolicy("ensemble larger than 65535".into()));
    }
    for (index, m) in ensemble.iter().enumerate().skip(1) {
        if m.dims() != first.dims() {
            return Err(FusionError::DimensionMismatch {
                index,
                expected: first.dims(),
                got: m.dims(),
            });
        }
        if m.palette() != first.palette() {
            return Err(FusionError::PaletteMismatch { index });
        }
    }
    Ok(first.palette())
}

pub fn build_frequency_map(ensemble: &[LabelMap], class_id: u8) -> Result<FrequencyMap, FusionError> {
    check_ensemble(ensemble)?;
    Ok(frequency_unchecked(ensemble, class_id))
}

fn frequency_unchecked(ensemble: &[LabelMap], class_id: u8) -> FrequencyMap {
    let (width, height) = ensemble[0].dims();
    let mut counts = vec![0u16; width as usize * height as usize];
    for m in ensemble {
        for (c, &v) in counts.iter_mut().zip(m.data()) {
            *c += u16::from(v == class_id);
        }
    }
    FrequencyMap {
        width,
        height,
        class_id,
        counts,
        n_annotators: ensemble.len() as u16,
    }
}

/// Pixels with at least `threshold` votes. A threshold above the ensemble size
/// yields an empty plane.
pub fn threshold_plane(freq: &FrequencyMap, threshold: u16) -> BinaryPlane {
    let bits = freq.counts.iter().map(|&c| c >= threshold).collect();
    BinaryPlane::new(freq.width, freq.height, bits).expect("frequency map dims")
}

pub fn merge_labels(ensemble: &[LabelMap], policy: &MergePolicy) -> Result<MergeOutcome, FusionError> {
    policy.validate()?;
    let palette = check_ensemble(ensemble)?.clone();
    if ensemble.len() < policy.min_annotators as usize {
        return Err(FusionError::InsufficientAnnotators {
            required: policy.min_annotators,
            got: ensemble.len(),
        });
    }
    let (width, height) = ensemble[0].dims();
    let frequencies: Vec<FrequencyMap> = palette
        .class_ids()
        .map(|c| frequency_unchecked(ensemble, c))
        .collect();

    let n = width as usize * height as usize;
    let mut data = vec![0u8; n];
    for (p, out) in data.iter_mut().enumerate() {
        // (votes, class) of the current winner
        let mut best: Option<(u16, u8)> = None;
        for f in &frequencies {
            let votes = f.counts[p];
            if votes < policy.threshold {
                continue;
            }
            best = match best {
                None => Some((votes, f.class_id)),
                Some((bv, bc)) => match policy.overlap_rule {
                    OverlapRule::HighestVoteThenLowestClassId => {
                        if votes > bv || (votes == bv && f.class_id < bc) {
                            Some((votes, f.class_id))
                        } else {
                            Some((bv, bc))
                        }
                    }
                },
            };
        }
        *out = best.map_or(0, |(_, c)| c);
    }
    let merged = LabelMap::new(width, height, data, palette).expect("merged values come from the palette");
    Ok(MergeOutcome { merged, frequencies })
}
