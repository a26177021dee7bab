//! Accuracy-rejection curves for selective prediction.

use serde::Serialize;

use super::MetricsError;
use crate::confidence::ConfidenceOutcome;

pub const DEFAULT_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArcPoint {
    pub threshold: f64,
    pub rejection_rate: f64,
    pub accuracy: f64,
    pub retained: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ArcCurve {
    pub points: Vec<ArcPoint>,
    /// Thresholds at which nothing was retained.
    pub omitted: Vec<f64>,
}

/// Retains outcomes with confidence at or above each threshold. Rejected
/// outcomes never count as retained; a threshold that retains nothing is
/// listed in `omitted` instead of producing a point.
pub fn accuracy_rejection_curve(
    outcomes: &[ConfidenceOutcome],
    thresholds: &[f64],
) -> Result<ArcCurve, MetricsError> {
    let n = outcomes.len();
    if n == 0 {
        return Err(MetricsError::EmptySet);
    }
    let answered = super::answered_points(outcomes)?;
    let mut curve = ArcCurve::default();
    for &t in thresholds {
        let (mut retained, mut correct) = (0usize, 0usize);
        for p in answered.iter().filter(|p| p.confidence >= t) {
            retained += 1;
            correct += usize::from(p.correct);
        }
        if retained == 0 {
            log::info!("accuracy-rejection point at threshold {t} omitted: nothing retained");
            curve.omitted.push(t);
            continue;
        }
        curve.points.push(ArcPoint {
            threshold: t,
            rejection_rate: (n - retained) as f64 / n as f64,
            accuracy: correct as f64 / retained as f64,
            retained,
        });
    }
    Ok(curve)
}
