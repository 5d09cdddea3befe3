//! Feedback equilibrium seeking: generalized-equation solvers (projected
//! gradient, forward-backward splitting, Josephy-Newton/SQP) run once per
//! sampling period against a continuous-time plant.
//!
//! The scenario packs in [`scenarios`] wire plants, controllers and
//! disturbances together; [`closed_loop::run`] is the simulator underneath.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod qp;
pub mod operators;
pub mod ge_core;
pub mod plant;
pub mod algorithms;
pub mod closed_loop;
pub mod analysis;
pub mod scenarios;

pub use error::{FesError, Result};
pub use closed_loop::{dense_csv, trace_csv, ClosedLoopTrace, TrackingSummary, SUMMARY_SCHEMA_VERSION};
pub use analysis::StabilityCertificate;
pub use scenarios::{certify, run_scenario, CertificateMode, CertificateReport, ScenarioConfig, ScenarioRun};
