//! Three-hidden-layer autoencoder over standardized feature vectors.
//!
//! Layout `input → hidden → latent → hidden → input`: ReLU on the three
//! hidden layers, linear reconstruction. The encoder is the first two layers.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, TrainingSet};
use crate::error::{Error, Result};
use crate::nn::{fit, Activation, DenseNetwork, FitReport, Loss, TrainConfig};

pub const ENCODER_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 9984,
            hidden_dim: 1024,
            latent_dim: 256,
        }
    }
}

impl AutoencoderConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.latent_dim && self.latent_dim < self.hidden_dim && self.hidden_dim < self.input_dim) {
            return Err(Error::config(format!(
                "autoencoder needs 0 < latent ({}) < hidden ({}) < input ({})",
                self.latent_dim, self.hidden_dim, self.input_dim
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 5] {
        [
            self.input_dim,
            self.hidden_dim,
            self.latent_dim,
            self.hidden_dim,
            self.input_dim,
        ]
    }
}

const ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::Relu,
    Activation::Relu,
    Activation::Linear,
];

pub fn build_autoencoder(cfg: &AutoencoderConfig, seed: u64) -> Result<DenseNetwork> {
    cfg.validate()?;
    DenseNetwork::new(&cfg.dims(), &ACTIVATIONS, seed)
}

/// Bottleneck representation of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub values: Vec<f64>,
    pub sample_id: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    net: DenseNetwork,
}

impl Autoencoder {
    /// Wraps any four-layer network whose output width equals its input
    /// width. Dim ordering is not enforced here.
    pub fn from_network(net: DenseNetwork) -> Result<Self> {
        if net.layers().len() != 2 * ENCODER_LAYERS || net.input_dim() != net.output_dim() {
            return Err(Error::config(format!(
                "autoencoder needs four layers mapping back to the input width, got dims {:?}",
                net.dims()
            )));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    pub fn into_network(self) -> DenseNetwork {
        self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.layers()[ENCODER_LAYERS - 1].out_dim()
    }

    pub fn encode_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.forward_layers(x, 0..ENCODER_LAYERS)
    }

    pub fn decode_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net
            .forward_layers(z, ENCODER_LAYERS..2 * ENCODER_LAYERS)
    }

    pub fn reconstruct_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.predict_batch(x)
    }

    pub fn encode(&self, values: &[f64], sample_id: &str, label: usize) -> Result<LatentVector> {
        let x = ArrayView2::from_shape((1, values.len()), values)
            .map_err(|e| Error::shape(e.to_string()))?;
        let z = self.encode_batch(x)?;
        Ok(LatentVector {
            values: z.row(0).to_vec(),
            sample_id: sample_id.to_string(),
            label,
        })
    }

    /// Encodes every row, keeping ids and labels.
    pub fn encode_set(&self, set: &LabeledSet) -> Result<LabeledSet> {
        set.with_features(self.encode_batch(set.features.view())?)
    }

    /// Mean per-sample reconstruction MSE.
    pub fn reconstruction_error(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let out = self.reconstruct_batch(x)?;
        Loss::Mse.batch_value(out.view(), x)
    }
}

/// Trains `net` to reproduce its own input under MSE. The loss in `train`
/// is ignored.
pub fn train_autoencoder_network(
    net: DenseNetwork,
    features: &TrainingSet,
    train: &TrainConfig,
) -> Result<(Autoencoder, FitReport)> {
    let mut ae = Autoencoder::from_network(net)?;
    if features.dim() != ae.input_dim() {
        return Err(Error::shape(format!(
            "autoencoder input is {} wide, features are {}",
            ae.input_dim(),
            features.dim()
        )));
    }
    let cfg = TrainConfig {
        loss: Loss::Mse,
        ..*train
    };
    let x = features.features.view();
    let report = fit(&mut ae.net, x, x, &cfg)?;
    Ok((ae, report))
}

/// Builds and trains an autoencoder on the training split only.
pub fn train_autoencoder(
    features: &TrainingSet,
    cfg: &AutoencoderConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(Autoencoder, FitReport)> {
    if features.dim() != cfg.input_dim {
        return Err(Error::shape(format!(
            "config input_dim {} but features are {} wide",
            cfg.input_dim,
            features.dim()
        )));
    }
    train_autoencoder_network(build_autoencoder(cfg, seed)?, features, train)
}
