//! Calibration probing for relational knowledge over closed answer sets.
//!
//! The crate turns per-candidate token log-likelihoods into confidence
//! estimates and measures how well those confidences track correctness.
//!
//! * [`probe_data`]: datasets, templates, epistemic-marker injection.
//! * [`scoring`]: score records, reductions, backends.
//! * [`confidence`]: intrinsic and structural-consistency estimators.
//! * [`metrics`]: ACE, Brier score, calibration and accuracy-rejection curves.
//! * [`simulate`]: synthetic answerers with known calibration.
//! * [`run`]: configuration-driven pipeline behind the `calprobe` CLI.

pub mod confidence;
pub mod metrics;
pub mod probe_data;
pub mod run;
pub mod scoring;
pub mod seed;
pub mod simulate;
