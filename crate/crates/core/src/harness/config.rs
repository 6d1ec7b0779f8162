use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::backbones::{BackboneSpec, QuadrantAssignment};
use crate::classifiers::{ClassifierKind, ClassifierSettings};
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::tsne::TsneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// COVID-19 against Normal.
    Binary,
    ThreeClass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::ThreeClass => 3,
        }
    }

    pub fn default_exclusions(self) -> Vec<String> {
        match self {
            Task::Binary => vec!["Viral Pneumonia".to_string()],
            Task::ThreeClass => Vec::new(),
        }
    }
}

/// The registry inline or as a path to a JSON array of specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegistrySource {
    File(PathBuf),
    Inline(Vec<BackboneSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    /// One subdirectory per class.
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    /// Cached extraction output; read when present, written after a fresh
    /// extraction otherwise.
    #[serde(default)]
    pub feature_store: Option<PathBuf>,
    #[serde(default)]
    pub registry: Option<RegistrySource>,
    #[serde(default)]
    pub assignment: QuadrantAssignment,
    /// `input_dim` is taken from the extracted features.
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub autoencoder_train: TrainConfig,
    #[serde(default)]
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub tsne: TsneConfig,
    /// Trial whose train and test latents are embedded; `null` disables.
    #[serde(default = "default_tsne_trial")]
    pub tsne_trial: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Class directories left out of the task; defaults per task.
    #[serde(default)]
    pub excluded_classes: Option<Vec<String>>,
}

fn default_trials() -> usize {
    50
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_classifiers() -> Vec<ClassifierKind> {
    ClassifierKind::ALL.to_vec()
}

fn default_tsne_trial() -> Option<usize> {
    Some(0)
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            n_trials: default_trials(),
            test_fraction: default_test_fraction(),
            master_seed: 0,
            classifiers: default_classifiers(),
            dataset_dir: None,
            feature_store: None,
            registry: None,
            assignment: QuadrantAssignment::default(),
            autoencoder: AutoencoderConfig::default(),
            autoencoder_train: TrainConfig::default(),
            classifier: ClassifierSettings::default(),
            tsne: TsneConfig::default(),
            tsne_trial: default_tsne_trial(),
            output_dir: default_output_dir(),
            excluded_classes: None,
        }
    }

    /// Parses a config file and resolves every relative path against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.dataset_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.feature_store.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
        match self.registry.as_mut() {
            Some(RegistrySource::File(p)) => fix(p),
            Some(RegistrySource::Inline(specs)) => {
                for s in specs {
                    if let Some(p) = s.graph_path.as_mut() {
                        fix(p);
                    }
                }
            }
            None => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::config("n_trials must be at least 1"));
        }
        if self.classifiers.is_empty() {
            return Err(Error::config("no classifiers configured"));
        }
        if self.task == Task::Binary
            && !self.exclusions().iter().any(|c| c == "Viral Pneumonia")
        {
            return Err(Error::config("the binary task must exclude `Viral Pneumonia`"));
        }
        self.autoencoder_train.validate()?;
        self.classifier.train.validate()?;
        Ok(())
    }

    pub fn exclusions(&self) -> Vec<String> {
        self.excluded_classes
            .clone()
            .unwrap_or_else(|| self.task.default_exclusions())
    }

    /// Registry specs with graph paths resolved against the file that held
    /// them.
    pub fn load_registry_specs(&self) -> Result<Vec<BackboneSpec>> {
        match &self.registry {
            None => Err(Error::config("no backbone registry configured")),
            Some(RegistrySource::Inline(specs)) => Ok(specs.clone()),
            Some(RegistrySource::File(path)) => read_registry_file(path),
        }
    }
}

pub fn read_registry_file(path: &Path) -> Result<Vec<BackboneSpec>> {
    let text = std::fs::read_to_string(path)?;
    let mut specs: Vec<BackboneSpec> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut specs {
        if let Some(p) = s.graph_path.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(specs)
}
