//! Monte-Carlo and exact-tree solvers for forward-backward SDEs with
//! monotone polynomial drivers, using tamed explicit backward schemes.

pub mod driver;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod grid;
pub mod noise;
pub mod poly;
pub mod regression;
pub mod scheme;
pub mod tree;
pub mod verify;

pub use driver::{
    apply_taming, derive_constants, eval_driver, taming_residual, BaseConstants, ConstantOverrides,
    DerivedConstants, DriverSpec, TamedDriver, TamingKind, TamingSpec,
};
pub use error::{Error, Result};
pub use experiment::{
    convergence_study, emit_csv, positivity_study, tree_oracle, verify_taming, CsvTable,
    ErrorReport, ExperimentConfig,
};
pub use forward::{euler_simulate, terminal_values, PathEnsemble, SdeSpec, TerminalSpec};
pub use grid::{build_grid, PartitionGrid};
pub use noise::{
    lambda_of_truncation, sample_increments, truncation_radius, IncrementBatch, NoiseKind,
    NoiseModel,
};
pub use poly::Polynomial;
pub use regression::{
    design_matrix, fit_least_squares, predict, BasisSpec, Estimator, Projector, RegressionFit,
    StepProjector,
};
pub use scheme::{
    positivity_report, run_backward, zeta_diagnostic, DriverFamily, PositivityReport, SchemeKind,
    SchemeOutput, SchemeSpec, SolverSettings, ZetaDiagnostic,
};
pub use tree::{
    comparison_check, tree_exact_run, ComparisonReport, ComparisonSide, TreeModel, TreeOutput,
};
pub use verify::{verify_assumptions, AssumptionReport, Check, CheckResult, ProbePlan, Violation};
