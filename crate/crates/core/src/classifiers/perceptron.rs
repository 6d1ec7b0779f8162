use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::nn::{fit, Activation, DenseNetwork, FitReport, Loss, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptronVariant {
    /// input → softmax
    Slp,
    /// input → ReLU hidden → softmax
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptronConfig {
    pub variant: PerceptronVariant,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    pub n_classes: usize,
}

fn default_hidden() -> usize {
    128
}

impl PerceptronConfig {
    pub fn slp(n_classes: usize) -> Self {
        Self {
            variant: PerceptronVariant::Slp,
            hidden_dim: default_hidden(),
            n_classes,
        }
    }

    pub fn mlp(n_classes: usize) -> Self {
        Self {
            variant: PerceptronVariant::Mlp,
            ..Self::slp(n_classes)
        }
    }
}

pub fn build_perceptron(cfg: &PerceptronConfig, input_dim: usize, seed: u64) -> Result<DenseNetwork> {
    if cfg.n_classes < 2 {
        return Err(Error::config("a classifier needs at least two classes"));
    }
    match cfg.variant {
        PerceptronVariant::Slp => {
            DenseNetwork::new(&[input_dim, cfg.n_classes], &[Activation::Softmax], seed)
        }
        PerceptronVariant::Mlp => DenseNetwork::new(
            &[input_dim, cfg.hidden_dim, cfg.n_classes],
            &[Activation::Relu, Activation::Softmax],
            seed,
        ),
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::input(format!(
                "label {l} is not one of {n_classes} classes"
            )));
        }
        y[[i, l]] = 1.0;
    }
    Ok(y)
}

/// Trains with categorical cross-entropy, whatever loss `train` names.
pub fn train_perceptron(
    cfg: &PerceptronConfig,
    latents: &TrainingSet,
    train: &TrainConfig,
    seed: u64,
) -> Result<(DenseNetwork, FitReport)> {
    let y = one_hot(&latents.labels, cfg.n_classes)?;
    let mut net = build_perceptron(cfg, latents.dim(), seed)?;
    let train = TrainConfig {
        loss: Loss::CategoricalCrossEntropy,
        ..*train
    };
    let report = fit(&mut net, latents.features.view(), y.view(), &train)?;
    Ok((net, report))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict_perceptron(net: &DenseNetwork, latent: &[f64]) -> Result<(usize, Vec<f64>)> {
    let (p, _) = net.forward(latent)?;
    Ok((argmax(&p), p))
}

pub fn predict_perceptron_batch(net: &DenseNetwork, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let p = net.predict_batch(x)?;
    Ok(p.rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("standard layout")))
        .collect())
}
