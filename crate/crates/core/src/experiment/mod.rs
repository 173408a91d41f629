//! Configuration-driven experiments: data generation, training, inference
//! over held-out cases, and the metrics tables.

pub mod config;
pub mod report;
pub mod run;

pub use config::{
    DataConfig, DirectTrainConfig, ExperimentConfig, Method, ObservationConfig, ProblemKind, SamplerConfig,
};
pub use report::{metrics_csv, metrics_rows, timings_csv, ExperimentReport, MetricsRow, METRICS_HEADER};
pub use run::{
    generate_test_cases, generate_training_data, infer_case, infer_case_with, prepare_models, run_experiment, CaseResult,
    MethodOutcome, Models, SigmaEstimate, TestCase,
};
