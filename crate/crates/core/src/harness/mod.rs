//! Data ingestion, evaluation and experiment orchestration.

mod data;
mod experiment;

pub use data::{evaluate, gen_synthetic, infer_libsvm_dim, load_libsvm, parse_libsvm, write_libsvm};
pub use experiment::{
    load_data, resolve, run_experiment, run_seed, Aggregate, Algorithm, DataSource, ExperimentConfig, LoadedData,
    MeanStd, ResolvedRun, RunSummary, SeedFailure, SeedResult, DEFAULT_DP_GD_ITERATIONS, SUMMARY_FORMAT_VERSION,
};
