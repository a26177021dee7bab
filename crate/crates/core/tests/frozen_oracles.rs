//! Values computed once with 40-digit arithmetic (mpmath) and frozen here.

use approx::assert_relative_eq;
use calprobe::confidence::{
    c_base, c_margin, evaluate_estimators, softmax, Estimator, EstimatorOptions, InstanceVectors,
    Status,
};
use calprobe::metrics::{ace, brier, harmonic_mean, CalibrationPoint};
use calprobe::scoring::{LogLikVector, Reduction};

const TOL: f64 = 1e-14;

#[test]
fn softmax_base_and_margin() {
    let v = [-1.0, -2.5, -0.3, -4.0];
    let expected = [
        0.3042593322349437,
        0.06788943352823731,
        0.6127030540612772,
        0.015148180175541773,
    ];
    for (p, e) in softmax(&v).iter().zip(expected) {
        assert_relative_eq!(*p, e, max_relative = TOL);
    }
    assert_eq!(c_base(&v).0, 2);
    assert_relative_eq!(c_base(&v).1, 0.6127030540612772, max_relative = TOL);
    assert_relative_eq!(c_margin(&v).1, 0.30844372182633345, max_relative = TOL);
}

fn five_templates() -> InstanceVectors {
    let rows = [
        [-1.0, -2.0, -3.0],
        [-2.0, -1.0, -3.0],
        [-1.0, -1.5, -4.0],
        [-3.0, -2.0, -0.5],
        [-0.7, -2.2, -2.9],
    ];
    InstanceVectors {
        instance_id: "x".into(),
        gold_index: Some(0),
        vectors: rows
            .iter()
            .enumerate()
            .map(|(t, r)| LogLikVector {
                instance_id: "x".into(),
                template_index: t,
                injection_id: None,
                values: r.to_vec(),
                reduction: Reduction::Sum,
            })
            .collect(),
    }
}

#[test]
fn structural_estimators() {
    // template answers 0, 1, 0, 2, 0
    let cases = [
        ("average_vote", 0, 0.40373050241206626),
        ("consistency_vote", 0, 0.6),
        ("average_vote3", 0, 0.40373050241206626),
        ("average_min", 0, 0.40373050241206626),
        ("average_max", 2, 0.15323144131126845),
        ("consistency_max", 2, 0.2),
    ];
    let estimators: Vec<Estimator> = cases.iter().map(|c| c.0.parse().unwrap()).collect();
    let opts = EstimatorOptions {
        template_count: 5,
        single_template: 0,
    };
    let got = evaluate_estimators(&[five_templates()], &estimators, opts).unwrap();
    for ((name, answer, conf), o) in cases.iter().zip(&got) {
        match o.status {
            Status::Answered {
                predicted_index,
                confidence,
            } => {
                assert_eq!(predicted_index, *answer, "{name}");
                assert_relative_eq!(confidence, *conf, max_relative = TOL);
            }
            Status::Rejected => panic!("{name} rejected"),
        }
    }
    let vote4: Estimator = "consistency_vote4".parse().unwrap();
    let got = evaluate_estimators(&[five_templates()], &[vote4], opts).unwrap();
    assert_eq!(got[0].status, Status::Rejected);
}

fn ten_points() -> Vec<CalibrationPoint> {
    [
        (0.95, true),
        (0.9, true),
        (0.85, false),
        (0.7, true),
        (0.65, false),
        (0.6, true),
        (0.55, false),
        (0.4, false),
        (0.3, true),
        (0.2, false),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(confidence, correct))| CalibrationPoint {
        id: format!("p{i}"),
        confidence,
        correct,
    })
    .collect()
}

#[test]
fn ace_brier_and_h() {
    let (a, bins) = ace(&ten_points(), 3).unwrap();
    assert_relative_eq!(a, 0.12083333333333333, max_relative = 1e-13);
    let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
    assert_eq!(counts, [4, 3, 3]);
    assert_relative_eq!(bins[0].mean_confidence, 0.3625, max_relative = TOL);
    assert_relative_eq!(bins[2].accuracy, 2.0 / 3.0, max_relative = TOL);
    assert_relative_eq!(brier(&ten_points()).unwrap(), 0.24, max_relative = 1e-13);
    assert_relative_eq!(
        harmonic_mean(0.5, a),
        0.6374622356495468,
        max_relative = 1e-13
    );
}
