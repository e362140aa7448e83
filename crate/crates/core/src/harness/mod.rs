//! Reproducible Monte Carlo ensembles, statistics and reports.

pub mod config;
pub mod ensemble;
pub mod report;
pub mod stats;

pub use config::{
    CoefficientSpec, ConditionalExitExperiment, DeltaRule, DtPolicy, ExitExperiment, Experiment,
    ExperimentConfig, FluctuationExperiment, HomogenizeExperiment, ScaleSpeedExperiment,
    StatChecks, MIN_STATISTICAL_PATHS,
};
pub use ensemble::{derived_seed, run_ensemble};
pub use report::{
    Check, CheckCategory, EndpointTallies, EnsembleReport, EpsilonBlock, Prediction, Table,
};
pub use stats::{fsum, ks_band, ks_statistic, normal_cdf, ExactSum, MomentSummary, Moments};
