//! Per-estimator calibration reports and domain filters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    accuracy_rejection_curve, answered_points, ArcPoint, BinStat, CurvePoint, MetricsError,
    DEFAULT_BINS, DEFAULT_THRESHOLDS,
};
use crate::confidence::{ConfidenceOutcome, Estimator};
use crate::probe_data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub bins: usize,
    pub thresholds: Vec<f64>,
    /// Count rejected instances as zero-error entries in the Brier score.
    /// ACE and accuracy always use answered outcomes only.
    pub rejected_as_zero_error: bool,
    /// Also compute fixed-width ECE with `bins` bins.
    pub ece: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            rejected_as_zero_error: false,
            ece: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub estimator: Estimator,
    pub recommended: bool,
    pub filter: String,
    pub n_total: usize,
    pub n_answered: usize,
    pub n_rejected: usize,
    pub rejection_rate: f64,
    pub ties: usize,
    pub accuracy: Option<f64>,
    pub ace: Option<f64>,
    pub brier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ece: Option<f64>,
    pub h_score: Option<f64>,
    pub bins: Vec<BinStat>,
    pub curve: Vec<CurvePoint>,
    pub arc_points: Vec<ArcPoint>,
    pub arc_omitted: Vec<f64>,
    pub rejected_as_zero_error: bool,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub notices: Vec<String>,
}

/// Computes every metric for one estimator's outcomes. When fewer answered
/// outcomes exist than bins, ACE and the curve are left empty with a notice.
pub fn build_report(
    outcomes: &[ConfidenceOutcome],
    estimator: Estimator,
    filter: &str,
    opts: &ReportOptions,
) -> Result<CalibrationReport, MetricsError> {
    let points = answered_points(outcomes)?;
    let n_total = outcomes.len();
    let n_answered = points.len();
    let mut notices = Vec::new();

    let accuracy = (n_answered > 0)
        .then(|| points.iter().filter(|p| p.correct).count() as f64 / n_answered as f64);
    let (ace, bins) = match super::ace(&points, opts.bins) {
        Ok((a, b)) => (Some(a), b),
        Err(e @ MetricsError::TooFewPoints { .. }) => {
            notices.push(format!("ACE not computed: {e}"));
            (None, Vec::new())
        }
        Err(e) => return Err(e),
    };
    let curve = bins
        .iter()
        .map(|b| CurvePoint {
            mean_confidence: b.mean_confidence,
            accuracy: b.accuracy,
            count: b.count,
        })
        .collect();
    let brier = if opts.rejected_as_zero_error {
        (n_total > 0).then(|| super::squared_error_sum(&points) / n_total as f64)
    } else {
        super::brier(&points).ok()
    };
    let ece = if opts.ece && n_answered > 0 {
        Some(super::ece(&points, opts.bins)?)
    } else {
        None
    };
    let arc = if n_total > 0 {
        accuracy_rejection_curve(outcomes, &opts.thresholds)?
    } else {
        Default::default()
    };
    for t in &arc.omitted {
        notices.push(format!("no outcome retained at threshold {t}"));
    }
    let h_score = match (accuracy, ace) {
        (Some(a), Some(e)) => Some(super::harmonic_mean(a, e)),
        _ => None,
    };
    Ok(CalibrationReport {
        estimator,
        recommended: estimator.is_recommended(),
        filter: filter.to_string(),
        n_total,
        n_answered,
        n_rejected: n_total - n_answered,
        rejection_rate: if n_total == 0 {
            0.0
        } else {
            (n_total - n_answered) as f64 / n_total as f64
        },
        ties: outcomes.iter().filter(|o| o.tie).count(),
        accuracy,
        ace,
        brier,
        ece,
        h_score,
        bins,
        curve,
        arc_points: arc.points,
        arc_omitted: arc.omitted,
        rejected_as_zero_error: opts.rejected_as_zero_error,
        config_hash: None,
        seed: None,
        notices,
    })
}

/// Selects instances by relation id and relation domain. An empty list
/// does not constrain; both lists must match when both are given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportFilter {
    pub name: String,
    pub domains: Vec<String>,
    pub relations: Vec<String>,
}

impl ReportFilter {
    pub fn all() -> Self {
        Self {
            name: "all".into(),
            ..Default::default()
        }
    }

    pub fn domain(domain: &str) -> Self {
        Self {
            name: format!("domain-{domain}"),
            domains: vec![domain.to_string()],
            relations: Vec::new(),
        }
    }

    pub fn matches(&self, dataset: &Dataset, instance_id: &str) -> bool {
        let Some(rel) = dataset
            .instance(instance_id)
            .and_then(|i| dataset.relation(&i.relation_id))
        else {
            return false;
        };
        (self.relations.is_empty() || self.relations.contains(&rel.id))
            && (self.domains.is_empty() || self.domains.iter().any(|d| rel.domains.contains(d)))
    }
}

/// Report over the outcomes selected by `filter`.
pub fn filtered_report(
    outcomes: &[ConfidenceOutcome],
    estimator: Estimator,
    dataset: &Dataset,
    filter: &ReportFilter,
    opts: &ReportOptions,
) -> Result<CalibrationReport, MetricsError> {
    let kept: Vec<ConfidenceOutcome> = outcomes
        .iter()
        .filter(|o| filter.matches(dataset, &o.instance_id))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(MetricsError::EmptyFilter(filter.name.clone()));
    }
    build_report(&kept, estimator, &filter.name, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainMatch {
    pub domain: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

fn domain_accuracy(outcomes: &[ConfidenceOutcome], dataset: &Dataset) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.is_answered()) {
        let Some(rel) = dataset
            .instance(&o.instance_id)
            .and_then(|i| dataset.relation(&i.relation_id))
        else {
            continue;
        };
        for d in &rel.domains {
            let t = tally.entry(d.clone()).or_default();
            t.0 += usize::from(o.correct == Some(true));
            t.1 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(d, (c, n))| (d, c as f64 / n as f64))
        .collect()
}

/// Domain on which two outcome sets have the closest answered accuracy.
/// Ties go to the lexicographically first domain.
pub fn most_similar_domain(
    a: &[ConfidenceOutcome],
    b: &[ConfidenceOutcome],
    dataset: &Dataset,
) -> Option<DomainMatch> {
    let acc_b = domain_accuracy(b, dataset);
    let mut best: Option<(f64, DomainMatch)> = None;
    for (domain, accuracy_a) in domain_accuracy(a, dataset) {
        let Some(&accuracy_b) = acc_b.get(&domain) else {
            continue;
        };
        let gap = (accuracy_a - accuracy_b).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((
                gap,
                DomainMatch {
                    domain,
                    accuracy_a,
                    accuracy_b,
                },
            ));
        }
    }
    best.map(|(_, m)| m)
}
