//! Evaluation heads over latent vectors behind one train/predict contract.

mod perceptron;
mod svm;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, TrainingSet};
use crate::error::Result;
use crate::nn::{DenseNetwork, TrainConfig};

pub use perceptron::{
    argmax, build_perceptron, one_hot, predict_perceptron, predict_perceptron_batch,
    train_perceptron, PerceptronConfig, PerceptronVariant,
};
pub use svm::{
    load_svm, read_svm, save_svm, svm_predict, svm_train, write_svm, Gamma, GammaRule, Kernel,
    KernelKind, SvmConfig, SvmHead, SvmModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Slp,
    Mlp,
    Svm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Slp, ClassifierKind::Mlp, ClassifierKind::Svm];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Slp => "slp",
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Svm => "svm",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by every head kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSettings {
    pub mlp_hidden_dim: usize,
    pub train: TrainConfig,
    pub svm: SvmConfig,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            mlp_hidden_dim: PerceptronConfig::mlp(2).hidden_dim,
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedClassifier {
    Perceptron(DenseNetwork),
    Svm(SvmModel),
}

impl TrainedClassifier {
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        match self {
            TrainedClassifier::Perceptron(net) => predict_perceptron_batch(net, x),
            TrainedClassifier::Svm(model) => model.predict_batch(x),
        }
    }

    pub fn predict_set(&self, set: &LabeledSet) -> Result<Vec<usize>> {
        self.predict_batch(set.features.view())
    }
}

pub fn train_classifier(
    kind: ClassifierKind,
    settings: &ClassifierSettings,
    train: &TrainingSet,
    seed: u64,
) -> Result<TrainedClassifier> {
    let k = train.n_classes;
    let perceptron = |cfg: PerceptronConfig| -> Result<TrainedClassifier> {
        let train_cfg = TrainConfig {
            shuffle_seed: seed,
            ..settings.train
        };
        let (net, _) = train_perceptron(&cfg, train, &train_cfg, seed)?;
        Ok(TrainedClassifier::Perceptron(net))
    };
    match kind {
        ClassifierKind::Slp => perceptron(PerceptronConfig::slp(k)),
        ClassifierKind::Mlp => perceptron(PerceptronConfig {
            hidden_dim: settings.mlp_hidden_dim,
            ..PerceptronConfig::mlp(k)
        }),
        ClassifierKind::Svm => {
            let cfg = SvmConfig {
                seed,
                ..settings.svm
            };
            Ok(TrainedClassifier::Svm(svm_train(&cfg, train)?))
        }
    }
}
