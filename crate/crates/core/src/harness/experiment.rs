use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, Task};
use super::dataset::{extract_dataset, extract_dataset_whole, ingest_dataset, select_classes};
use super::split::{split_dataset, stage_seed, trial_seed};
use crate::autoencoder::{train_autoencoder, AutoencoderConfig};
use crate::backbones::{fit_standardizer, load_registry, Backbone};
use crate::classifiers::{train_classifier, ClassifierKind};
use crate::data::{partition, HeldOutSet, LabeledSet, TrainingSet};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_by_classifier, classification_metrics, confusion_matrix, write_trial_csv,
    MetricsRecord, TrialAggregate, TrialRow,
};
use crate::nn::TrainConfig;
use crate::par;
use crate::store::FeatureStore;
use crate::tsne::{tsne_embed, TsneConfig, TsneResult};

pub const TRIALS_CSV: &str = "trials.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const TSNE_TRAIN_CSV: &str = "tsne_train.csv";
pub const TSNE_TEST_CSV: &str = "tsne_test.csv";
pub const RUN_LOG_JSON: &str = "run_log.json";

const STAGE_SPLIT: u64 = 0;
const STAGE_AUTOENCODER: u64 = 1;
const STAGE_CLASSIFIER: u64 = 16;

/// Labeled feature rows for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub set: LabeledSet,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// standardize → autoencode → classify
    Latent,
    /// standardize → classify
    Direct,
}

/// Ids handed to every fit call of one trial.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FitAudit {
    fitted: HashSet<String>,
    fit_calls: usize,
}

impl FitAudit {
    fn record(&mut self, set: &TrainingSet) {
        self.fit_calls += 1;
        self.fitted.extend(set.ids.iter().cloned());
    }

    pub fn fit_calls(&self) -> usize {
        self.fit_calls
    }

    /// Fails when any held-out id reached a fit call.
    pub fn check(&self, held_out: &HeldOutSet) -> Result<()> {
        match held_out.ids.iter().find(|id| self.fitted.contains(*id)) {
            Some(id) => Err(Error::Contract(format!("held-out sample `{id}` was used for fitting"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub results: Vec<(ClassifierKind, MetricsRecord)>,
    pub audit: FitAudit,
    /// Classifier inputs, kept for the embedded trial only.
    pub classifier_inputs: Option<(LabeledSet, LabeledSet)>,
}

pub fn run_trial(
    features: &LabeledSet,
    cfg: &ExperimentConfig,
    pipeline: Pipeline,
    trial: usize,
    keep_inputs: bool,
) -> Result<TrialOutcome> {
    let seed = trial_seed(cfg.master_seed, trial);
    let split = split_dataset(
        &features.labels,
        features.n_classes,
        cfg.test_fraction,
        stage_seed(seed, STAGE_SPLIT),
    )?;
    let (train, test) = partition(features, &split.train, &split.test)?;
    let mut audit = FitAudit::default();

    audit.record(&train);
    let standardizer = fit_standardizer(train.features.view())?;
    let train = train.map_features(standardizer.apply_rows(train.features.view())?)?;
    let test = test.map_features(standardizer.apply_rows(test.features.view())?)?;

    let (train, test) = match pipeline {
        Pipeline::Direct => (train, test),
        Pipeline::Latent => {
            let ae_cfg = AutoencoderConfig {
                input_dim: train.dim(),
                ..cfg.autoencoder
            };
            let ae_seed = stage_seed(seed, STAGE_AUTOENCODER);
            let train_cfg = TrainConfig {
                shuffle_seed: ae_seed,
                ..cfg.autoencoder_train
            };
            audit.record(&train);
            let (ae, report) = train_autoencoder(&train, &ae_cfg, &train_cfg, ae_seed)?;
            log::debug!(
                "trial {trial}: autoencoder loss {:?}",
                report.loss_history.last()
            );
            (
                train.map_features(ae.encode_batch(train.features.view())?)?,
                test.map_features(ae.encode_batch(test.features.view())?)?,
            )
        }
    };

    let mut results = Vec::with_capacity(cfg.classifiers.len());
    for (k, &kind) in cfg.classifiers.iter().enumerate() {
        audit.record(&train);
        let model = train_classifier(
            kind,
            &cfg.classifier,
            &train,
            stage_seed(seed, STAGE_CLASSIFIER + k as u64),
        )?;
        let predicted = model.predict_set(&test)?;
        let cm = confusion_matrix(&test.labels, &predicted, test.n_classes)?;
        results.push((kind, classification_metrics(&cm)?));
    }
    audit.check(&test)?;
    Ok(TrialOutcome {
        trial,
        seed,
        results,
        audit,
        classifier_inputs: keep_inputs.then(|| (train.into_inner(), test.into_inner())),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingLog {
    pub trial: usize,
    pub train_perplexity: Option<f64>,
    pub test_perplexity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub version: &'static str,
    pub parallel: bool,
    pub task: Task,
    pub pipeline: Pipeline,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backbone: Option<String>,
    pub master_seed: u64,
    pub n_trials: usize,
    pub completed_trials: usize,
    pub trial_seeds: Vec<u64>,
    pub classes: Vec<String>,
    pub class_counts: Vec<usize>,
    pub feature_dim: usize,
    pub failures: Vec<TrialFailure>,
    pub embedding: Option<EmbeddingLog>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub task: Task,
    pub pipeline: Pipeline,
    pub n_trials: usize,
    pub completed_trials: usize,
    pub classifiers: Vec<ClassifierAggregate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierAggregate {
    pub classifier: String,
    #[serde(flatten)]
    pub aggregate: TrialAggregate,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<TrialRow>,
    pub aggregate: AggregateReport,
    pub embeddings: Option<(TsneResult, TsneResult)>,
    pub class_names: Vec<String>,
    pub run_log: RunLog,
}

impl ExperimentReport {
    pub fn aggregate_for(&self, kind: ClassifierKind) -> Option<&TrialAggregate> {
        self.aggregate
            .classifiers
            .iter()
            .find(|c| c.classifier == kind.name())
            .map(|c| &c.aggregate)
    }

    /// Writes the per-trial CSV, aggregate JSON, run log and any embeddings.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_trial_csv(&self.rows, BufWriter::new(File::create(dir.join(TRIALS_CSV))?))?;
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(dir.join(AGGREGATE_JSON))?),
            &self.aggregate,
        )?;
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(dir.join(RUN_LOG_JSON))?),
            &self.run_log,
        )?;
        if let Some((train, test)) = &self.embeddings {
            let names = Some(self.class_names.as_slice());
            train.embedding.save_csv(&dir.join(TSNE_TRAIN_CSV), names)?;
            test.embedding.save_csv(&dir.join(TSNE_TEST_CSV), names)?;
        }
        Ok(())
    }
}

/// The configured perplexity, lowered to fit `n` points when needed.
pub fn usable_perplexity(perplexity: f64, n: usize) -> Option<f64> {
    let limit = (n as f64 - 1.0) / 3.0;
    if limit <= 1.0 {
        return None;
    }
    Some(if perplexity < limit {
        perplexity
    } else {
        let lowered = limit * 0.99;
        log::warn!("t-SNE perplexity {perplexity} lowered to {lowered:.3} for {n} points");
        lowered
    })
}

fn embed(set: &LabeledSet, cfg: &TsneConfig) -> Result<Option<(TsneResult, f64)>> {
    let Some(perplexity) = usable_perplexity(cfg.perplexity, set.len()) else {
        log::warn!("t-SNE skipped: {} points are too few", set.len());
        return Ok(None);
    };
    let cfg = TsneConfig { perplexity, ..*cfg };
    Ok(Some((tsne_embed(set, &cfg)?, perplexity)))
}

/// Runs every trial on prepared features and assembles the report.
pub fn run_protocol(features: &Features, cfg: &ExperimentConfig, pipeline: Pipeline) -> Result<ExperimentReport> {
    cfg.validate()?;
    let expected = cfg.task.n_classes();
    if features.class_names.len() != expected {
        return Err(Error::config(format!(
            "task {:?} needs {expected} classes, features have {:?}",
            cfg.task, features.class_names
        )));
    }
    let outcomes = par::map_range(cfg.n_trials, |t| {
        run_trial(&features.set, cfg, pipeline, t, cfg.tsne_trial == Some(t))
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut completed = Vec::new();
    for (t, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                rows.extend(o.results.iter().map(|(k, m)| TrialRow::new(t, k.name(), m)));
                completed.push(o);
            }
            Err(e) => {
                log::error!("trial {t} failed: {e}");
                failures.push(TrialFailure {
                    trial: t,
                    error: e.to_string(),
                });
            }
        }
    }
    if completed.is_empty() {
        return Err(Error::input(format!(
            "no trial completed; first error: {}",
            failures.first().map(|f| f.error.as_str()).unwrap_or("none")
        )));
    }

    let mut embeddings = None;
    let mut embedding_log = None;
    if let Some(o) = completed.iter().find(|o| o.classifier_inputs.is_some()) {
        let (train, test) = o.classifier_inputs.as_ref().expect("checked above");
        let tr = embed(train, &cfg.tsne)?;
        let te = embed(test, &cfg.tsne)?;
        embedding_log = Some(EmbeddingLog {
            trial: o.trial,
            train_perplexity: tr.as_ref().map(|r| r.1),
            test_perplexity: te.as_ref().map(|r| r.1),
        });
        if let (Some(tr), Some(te)) = (tr, te) {
            embeddings = Some((tr.0, te.0));
        }
    }

    let aggregate = AggregateReport {
        task: cfg.task,
        pipeline,
        n_trials: cfg.n_trials,
        completed_trials: completed.len(),
        classifiers: aggregate_by_classifier(&rows)?
            .into_iter()
            .map(|(classifier, aggregate)| ClassifierAggregate {
                classifier,
                aggregate,
            })
            .collect(),
    };
    let run_log = RunLog {
        version: env!("CARGO_PKG_VERSION"),
        parallel: par::is_parallel(),
        task: cfg.task,
        pipeline,
        backbone: None,
        master_seed: cfg.master_seed,
        n_trials: cfg.n_trials,
        completed_trials: completed.len(),
        trial_seeds: (0..cfg.n_trials).map(|t| trial_seed(cfg.master_seed, t)).collect(),
        classes: features.class_names.clone(),
        class_counts: features.set.class_counts(),
        feature_dim: features.set.dim(),
        failures,
        embedding: embedding_log,
    };
    Ok(ExperimentReport {
        rows,
        aggregate,
        embeddings,
        class_names: features.class_names.clone(),
        run_log,
    })
}

fn task_features(store: &FeatureStore, cfg: &ExperimentConfig) -> Result<Features> {
    let (set, class_names) = select_classes(store, &cfg.exclusions())?;
    Ok(Features { set, class_names })
}

/// Quadrant features for every class: the cached store when it exists,
/// otherwise a fresh extraction (cached when a store path is configured).
pub fn load_or_extract(cfg: &ExperimentConfig) -> Result<FeatureStore> {
    if let Some(path) = cfg.feature_store.as_deref().filter(|p| p.exists()) {
        log::info!("reading cached features from {}", path.display());
        return FeatureStore::read(path);
    }
    let store = extract_from_dataset(cfg)?;
    if let Some(path) = &cfg.feature_store {
        store.write(path)?;
    }
    Ok(store)
}

pub fn extract_from_dataset(cfg: &ExperimentConfig) -> Result<FeatureStore> {
    let root = cfg
        .dataset_dir
        .as_deref()
        .ok_or_else(|| Error::config("no feature store and no dataset_dir configured"))?;
    let manifest = ingest_dataset(root)?;
    let registry = load_registry(&cfg.load_registry_specs()?, Path::new("."))?;
    extract_dataset(&manifest, &cfg.assignment, &registry)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let store = load_or_extract(cfg)?;
    let report = run_protocol(&task_features(&store, cfg)?, cfg, Pipeline::Latent)?;
    report.write(&cfg.output_dir)?;
    Ok(report)
}

pub fn benchmark_dir(cfg: &ExperimentConfig, backbone: &str) -> PathBuf {
    cfg.output_dir.join(format!("benchmark_{backbone}"))
}

/// Same trials on single-backbone whole-image features, without the
/// autoencoder.
pub fn run_benchmark(cfg: &ExperimentConfig, backbone: &str) -> Result<ExperimentReport> {
    let spec = cfg
        .load_registry_specs()?
        .into_iter()
        .find(|s| s.name == backbone)
        .ok_or_else(|| Error::config(format!("backbone `{backbone}` is not in the registry")))?;
    let root = cfg
        .dataset_dir
        .as_deref()
        .ok_or_else(|| Error::config("benchmark needs dataset_dir"))?;
    let loaded = Backbone::load(&spec, Path::new("."))?;
    let store = extract_dataset_whole(&ingest_dataset(root)?, &loaded)?;
    let mut report = run_protocol(&task_features(&store, cfg)?, cfg, Pipeline::Direct)?;
    report.run_log.backbone = Some(backbone.to_string());
    let dir = benchmark_dir(cfg, backbone);
    report.write(&dir)?;
    store.write(&dir.join("features.drfg"))?;
    Ok(report)
}

/// Per-classifier aggregates as stored in the aggregate JSON.
pub fn aggregates(report: &ExperimentReport) -> Vec<(String, TrialAggregate)> {
    report
        .aggregate
        .classifiers
        .iter()
        .map(|c| (c.classifier.clone(), c.aggregate))
        .collect()
}
