//! Repeated-trial experiment protocol: dataset ingestion, cached feature
//! extraction, stratified splits, per-trial fitting and evaluation, and the
//! report files.

mod config;
mod dataset;
mod experiment;
mod split;

pub use config::{read_registry_file, ExperimentConfig, RegistrySource, Task};
pub use dataset::{
    extract_dataset, extract_dataset_whole, ingest_dataset, select_classes, ClassImages,
    DatasetManifest,
};
pub use experiment::{
    aggregates, benchmark_dir, extract_from_dataset, load_or_extract, run_benchmark,
    run_experiment, run_protocol, run_trial, usable_perplexity, AggregateReport,
    ClassifierAggregate, EmbeddingLog, ExperimentReport, Features, FitAudit, Pipeline, RunLog,
    TrialFailure, TrialOutcome, AGGREGATE_JSON, RUN_LOG_JSON, TRIALS_CSV, TSNE_TEST_CSV,
    TSNE_TRAIN_CSV,
};
pub use split::{split_dataset, stage_seed, trial_seed, Split};
