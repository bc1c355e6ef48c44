//! Bayesian detection-rate analysis for open-world identification, where
//! the tested video may not be in the target library at all.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-library detection rates plus the match counts they derive from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub tpr: f64,
    pub fpr: f64,
    /// Number of positive matches encountered during in-library evaluation.
    pub positives: u64,
    /// Number of negative matches encountered during in-library evaluation.
    pub negatives: u64,
}

impl DetectionStats {
    /// Build stats from a TPR and the positive/negative match counts,
    /// deriving the FPR via [`fpr_from_tpr`].
    pub fn from_counts(tpr: f64, positives: u64, negatives: u64) -> Result<Self> {
        Ok(DetectionStats {
            tpr,
            fpr: fpr_from_tpr(tpr, positives, negatives)?,
            positives,
            negatives,
        })
    }
}

/// Open-world analysis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenWorldReport {
    /// Probability of a test video being in-library.
    pub base: f64,
    /// Bayesian detection rate at this base rate.
    pub bdr: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Library size behind `base`, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_lib_count: Option<u64>,
    /// Open-world universe size behind `base`, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_count: Option<u64>,
}

/// False positive rate implied by a true positive rate and the
/// positive/negative match counts: `(1 - tpr) * P / N`.
pub fn fpr_from_tpr(tpr: f64, positives: u64, negatives: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tpr) {
        return Err(Error::invalid(format!("tpr must be in [0, 1], got {tpr}")));
    }
    if negatives == 0 {
        return Err(Error::invalid("negative match count must be at least 1"));
    }
    Ok((1.0 - tpr) * positives as f64 / negatives as f64)
}

/// Probability of a test video being in-library: `in_lib / total`.
pub fn base_rate(in_lib: u64, total: u64) -> Result<f64> {
    if in_lib < 1 || in_lib > total {
        return Err(Error::invalid(format!(
            "need 1 <= in_lib <= total, got {in_lib} / {total}"
        )));
    }
    Ok(in_lib as f64 / total as f64)
}

/// Bayesian detection rate: the posterior probability that a claimed
/// identification is correct,
/// `tpr * base / (tpr * base + fpr * (1 - base))`.
pub fn bdr(tpr: f64, fpr: f64, base: f64) -> Result<f64> {
    for (name, v) in [("tpr", tpr), ("fpr", fpr), ("base", base)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    let denominator = tpr * base + fpr * (1.0 - base);
    if denominator <= 0.0 {
        return Err(Error::DegenerateStats(
            "tpr * base + fpr * (1 - base) is zero".into(),
        ));
    }
    Ok(tpr * base / denominator)
}
