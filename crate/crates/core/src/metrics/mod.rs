//! Calibration metrics over answered outcomes.
//!
//! The Adaptive Calibration Error uses equal-mass (quantile) bins:
//!
//! ```text
//! ACE = (1/B) · Σ_b |accuracy_b − mean_confidence_b|
//! ```
//!
//! Outcomes are stably sorted by `(confidence, id)` and cut into `B`
//! contiguous groups whose sizes differ by at most one; the larger groups
//! come first, at the low-confidence end. Fixed-width ECE is available for
//! comparison only.

mod arc;
mod report;
mod sweep;

use serde::Serialize;
use thiserror::Error;

pub use arc::{accuracy_rejection_curve, ArcCurve, ArcPoint, DEFAULT_THRESHOLDS};
pub use report::{
    build_report, filtered_report, most_similar_domain, CalibrationReport, DomainMatch,
    ReportFilter, ReportOptions,
};
pub use sweep::{option_count_sweep, SweepRow};

use crate::confidence::ConfidenceOutcome;
use crate::probe_data::ProbeDataError;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{points} point(s) cannot fill {bins} quantile bins")]
    TooFewPoints { points: usize, bins: usize },
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("no answered outcomes")]
    EmptySet,
    #[error("outcome {0} is answered but has no correctness label")]
    MissingLabel(String),
    #[error("filter {0:?} selects no outcomes")]
    EmptyFilter(String),
    #[error("no log-likelihood vector for instance {0}")]
    MissingVector(String),
    #[error("instance {instance_id} has {expected} options but its vector has {found}")]
    VectorLength {
        instance_id: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Sampling(#[from] ProbeDataError),
}

/// One answered outcome reduced to what calibration metrics need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub id: String,
    pub confidence: f64,
    pub correct: bool,
}

/// Answered outcomes as calibration points; rejections are skipped.
pub fn answered_points(
    outcomes: &[ConfidenceOutcome],
) -> Result<Vec<CalibrationPoint>, MetricsError> {
    outcomes
        .iter()
        .filter_map(|o| o.confidence().map(|c| (o, c)))
        .map(|(o, confidence)| {
            Ok(CalibrationPoint {
                id: o.instance_id.clone(),
                confidence,
                correct: o
                    .correct
                    .ok_or_else(|| MetricsError::MissingLabel(o.instance_id.clone()))?,
            })
        })
        .collect()
}

/// Mean that returns the common value exactly when all inputs are equal.
pub(crate) fn stable_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut it = values.into_iter();
    let first = it.next()?;
    let (mut dev, mut n) = (0.0, 1usize);
    for x in it {
        dev += x - first;
        n += 1;
    }
    Some(first + dev / n as f64)
}

/// Splits point indices into `bins` equal-mass groups ordered by confidence.
pub fn quantile_bins(
    points: &[CalibrationPoint],
    bins: usize,
) -> Result<Vec<Vec<usize>>, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let n = points.len();
    if n < bins {
        return Err(MetricsError::TooFewPoints { points: n, bins });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .confidence
            .total_cmp(&points[b].confidence)
            .then_with(|| points[a].id.cmp(&points[b].id))
    });
    let (size, extra) = (n / bins, n % bins);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for b in 0..bins {
        let len = size + usize::from(b < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

fn bin_stat(points: &[CalibrationPoint], members: &[usize]) -> BinStat {
    let confs = || members.iter().map(|&i| points[i].confidence);
    BinStat {
        lower: confs().fold(f64::INFINITY, f64::min),
        upper: confs().fold(f64::NEG_INFINITY, f64::max),
        count: members.len(),
        mean_confidence: stable_mean(confs()).unwrap_or(0.0),
        accuracy: members.iter().filter(|&&i| points[i].correct).count() as f64
            / members.len() as f64,
    }
}

pub fn bin_stats(points: &[CalibrationPoint], bins: usize) -> Result<Vec<BinStat>, MetricsError> {
    Ok(quantile_bins(points, bins)?
        .iter()
        .map(|m| bin_stat(points, m))
        .collect())
}

/// Adaptive Calibration Error with its bin table.
pub fn ace(points: &[CalibrationPoint], bins: usize) -> Result<(f64, Vec<BinStat>), MetricsError> {
    let stats = bin_stats(points, bins)?;
    let total: f64 = stats
        .iter()
        .map(|b| (b.accuracy - b.mean_confidence).abs())
        .sum();
    Ok((total / bins as f64, stats))
}

/// Expected Calibration Error over `bins` fixed-width bins on `[0, 1]`,
/// weighted by bin mass. Empty bins are skipped.
pub fn ece(points: &[CalibrationPoint], bins: usize) -> Result<f64, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    if points.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut acc = vec![(0usize, 0usize, 0.0f64); bins];
    for p in points {
        let b = ((p.confidence * bins as f64) as usize).min(bins - 1);
        acc[b].0 += 1;
        acc[b].1 += usize::from(p.correct);
        acc[b].2 += p.confidence;
    }
    let n = points.len() as f64;
    Ok(acc
        .iter()
        .filter(|b| b.0 > 0)
        .map(|&(count, correct, conf)| {
            let c = count as f64;
            (c / n) * (correct as f64 / c - conf / c).abs()
        })
        .sum())
}

/// Mean squared gap between confidence and correctness.
pub fn brier(points: &[CalibrationPoint]) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    Ok(squared_error_sum(points) / points.len() as f64)
}

pub(crate) fn squared_error_sum(points: &[CalibrationPoint]) -> f64 {
    points
        .iter()
        .map(|p| {
            let target = if p.correct { 1.0 } else { 0.0 };
            (p.confidence - target).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// One (mean confidence, accuracy) point per quantile bin.
pub fn calibration_curve(
    points: &[CalibrationPoint],
    bins: usize,
) -> Result<Vec<CurvePoint>, MetricsError> {
    Ok(bin_stats(points, bins)?
        .into_iter()
        .map(|b| CurvePoint {
            mean_confidence: b.mean_confidence,
            accuracy: b.accuracy,
            count: b.count,
        })
        .collect())
}

/// Harmonic mean of accuracy and `1 − ACE`. Defined as 0 when both terms
/// vanish (accuracy 0, ACE 1).
pub fn harmonic_mean(accuracy: f64, ace: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&accuracy) && (0.0..=1.0).contains(&ace));
    let calibration = 1.0 - ace;
    let denom = accuracy + calibration;
    if denom <= 0.0 {
        return 0.0;
    }
    2.0 * accuracy * calibration / denom
}
