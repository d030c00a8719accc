//! Monte Carlo parameter-recovery study: data generation, estimator runs
//! and recovery metrics.

pub mod compare;
pub mod fleishman;
pub mod generate;
pub mod harness;
pub mod metrics;

pub use compare::{compare_estimates, ComparisonReport, Estimates, ParamDifference};
pub use fleishman::{fleishman_coeffs, FleishmanCoeffs};
pub use generate::{generate_responses, generate_thetas, generating_bank, passage_bank, LatentDistribution};
pub use harness::{
    run_condition, summarize_records, theta_hash, ClassSummary, Estimator, EstimatorSettings, FitOutcome, ParamClass,
    RecoveryReport, SimCondition, TidyRecord,
};
pub use metrics::{bias, mse, rmse};
