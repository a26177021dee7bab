//! Runs every Rust listing in `book/src` as a doc-test.
//!
//! mdbook cannot link listings against workspace crates, so each chapter is
//! included here as the docs of an empty module and `cargo test --doc`
//! does the rest. One module per chapter keeps failure names traceable to
//! a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/scores.md")]
pub mod scores {}
#[doc = include_str!("../../../book/src/estimators.md")]
pub mod estimators {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
