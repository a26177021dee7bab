//! Answer-option-count sweep.
//!
//! Each instance's full log-likelihood vector is restricted to a random
//! subset of `k` options (gold always kept) and Base confidence is
//! recomputed on the subset. No rescoring is needed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{ace, stable_mean, CalibrationPoint, MetricsError};
use crate::confidence::c_base;
use crate::probe_data::{sample_option_indices, Dataset};
use crate::scoring::LogLikVector;
use crate::seed::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub repeats: usize,
    pub instances: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    /// Unset when fewer instances than bins exist.
    pub ace: Option<f64>,
}

struct RepeatStat {
    mean_confidence: f64,
    accuracy: f64,
    ace: Option<f64>,
}

/// Sweeps `ks` over every instance of `dataset`, averaging `repeats` draws.
/// `vectors` holds one full-length vector per instance. Repeat `r` draws
/// its options from a seed derived from `(seed, r)`.
pub fn option_count_sweep(
    dataset: &Dataset,
    vectors: &[LogLikVector],
    ks: &[usize],
    repeats: usize,
    seed: u64,
    bins: usize,
) -> Result<Vec<SweepRow>, MetricsError> {
    let by_id: BTreeMap<&str, &LogLikVector> = vectors
        .iter()
        .map(|v| (v.instance_id.as_str(), v))
        .collect();
    let mut rows = Vec::with_capacity(ks.len());
    for inst in dataset.instances() {
        let v = by_id
            .get(inst.id.as_str())
            .ok_or_else(|| MetricsError::MissingVector(inst.id.clone()))?;
        if v.k() != inst.k() {
            return Err(MetricsError::VectorLength {
                instance_id: inst.id.clone(),
                expected: inst.k(),
                found: v.k(),
            });
        }
    }
    let streams = SeedStream::new(seed);
    for &k in ks {
        let stats = (0..repeats.max(1))
            .into_par_iter()
            .map(|r| {
                let draw_seed = streams.child(&["sweep", &r.to_string()]).root();
                let points = dataset
                    .instances()
                    .iter()
                    .map(|inst| {
                        let keep = sample_option_indices(inst, k, draw_seed)?;
                        let full = &by_id[inst.id.as_str()].values;
                        let sub: Vec<f64> = keep.iter().map(|&i| full[i]).collect();
                        let (pred, confidence) = c_base(&sub);
                        Ok(CalibrationPoint {
                            id: inst.id.clone(),
                            confidence,
                            correct: keep[pred] == inst.gold_index,
                        })
                    })
                    .collect::<Result<Vec<_>, MetricsError>>()?;
                let n = points.len();
                Ok(RepeatStat {
                    mean_confidence: stable_mean(points.iter().map(|p| p.confidence))
                        .unwrap_or(0.0),
                    accuracy: points.iter().filter(|p| p.correct).count() as f64 / n.max(1) as f64,
                    ace: ace(&points, bins).ok().map(|(a, _)| a),
                })
            })
            .collect::<Result<Vec<_>, MetricsError>>()?;
        rows.push(SweepRow {
            k,
            repeats: stats.len(),
            instances: dataset.instances().len(),
            mean_confidence: stable_mean(stats.iter().map(|s| s.mean_confidence)).unwrap_or(0.0),
            accuracy: stable_mean(stats.iter().map(|s| s.accuracy)).unwrap_or(0.0),
            ace: stats
                .iter()
                .map(|s| s.ace)
                .collect::<Option<Vec<f64>>>()
                .and_then(stable_mean),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe_data::{Cardinality, ProbeInstance, Relation};
    use crate::scoring::Reduction;

    fn setup(n: usize, k: usize) -> (Dataset, Vec<LogLikVector>) {
        let cands: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let rel = Relation::new("R", Cardinality::OneToOne, &["[X] is [Y]."], ["d"]).unwrap();
        let insts: Vec<ProbeInstance> = (0..n)
            .map(|i| ProbeInstance {
                id: format!("i{i:03}"),
                relation_id: "R".into(),
                subject: format!("s{i}"),
                gold_index: i % k,
                candidates: cands.clone(),
            })
            .collect();
        let vectors = insts
            .iter()
            .map(|inst| LogLikVector {
                instance_id: inst.id.clone(),
                template_index: 0,
                injection_id: None,
                values: (0..k)
                    .map(|j| -(((j * 7 + inst.gold_index) % 5) as f64))
                    .collect(),
                reduction: Reduction::Sum,
            })
            .collect();
        (
            Dataset::new([rel], insts, Default::default()).unwrap(),
            vectors,
        )
    }

    #[test]
    fn full_k_matches_unsampled() {
        let (ds, vs) = setup(30, 6);
        let rows = option_count_sweep(&ds, &vs, &[6], 3, 11, 5).unwrap();
        let confs: Vec<f64> = vs.iter().map(|v| c_base(&v.values).1).collect();
        assert_eq!(rows[0].mean_confidence, stable_mean(confs).unwrap());
        let acc = ds
            .instances()
            .iter()
            .zip(&vs)
            .filter(|(i, v)| v.select_answer() == i.gold_index)
            .count() as f64
            / 30.0;
        assert_eq!(rows[0].accuracy, acc);
    }

    #[test]
    fn k_bounds_are_enforced() {
        let (ds, vs) = setup(4, 3);
        assert!(matches!(
            option_count_sweep(&ds, &vs, &[4], 1, 0, 2),
            Err(MetricsError::Sampling(_))
        ));
        assert!(matches!(
            option_count_sweep(&ds, &vs[1..], &[2], 1, 0, 2),
            Err(MetricsError::MissingVector(id)) if id == "i000"
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let (ds, vs) = setup(40, 8);
        let a = option_count_sweep(&ds, &vs, &[2, 4], 3, 5, 4).unwrap();
        let b = option_count_sweep(&ds, &vs, &[2, 4], 3, 5, 4).unwrap();
        assert_eq!(a, b);
    }
}
