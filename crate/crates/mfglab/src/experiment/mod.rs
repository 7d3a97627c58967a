//! Config-driven experiment runner: parsing, orchestration, persistence,
//! deterministic replay, and plot emission.

mod config;
mod plot;
mod replay;
mod runner;
mod traces;

pub use config::{ExperimentConfig, ExperimentKind, Rho0Config, Rho0Source};
pub use replay::{replay, ReplayOutcome};
pub use runner::{report_from_traces, run, save_solution, ReportItem, RunReport};
pub use traces::{Table, TraceSet};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
