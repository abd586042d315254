//! Config-driven experiments and their CSV reports.

pub mod config;
pub mod csv;
pub mod studies;

pub use config::{Backend, ExperimentConfig, SchemeEntry, Tolerances};
pub use csv::{emit_csv, format_number, CsvTable};
pub use studies::{
    convergence_study, positivity_study, run_metadata, tree_oracle, verify_taming, ErrorReport,
    ErrorRow, OracleReport, PositivityStudy, TamingReport,
};
