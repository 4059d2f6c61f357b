//! Experiment orchestration for blowup-core: configs, pipelines, reports and
//! the acceptance suite.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod report;
pub mod trap;

pub use config::{Kind, RunConfig};
pub use experiments::run_experiment;
pub use report::{emit_report, read_report, Check, RunReport, Status};
