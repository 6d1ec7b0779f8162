//! Dense-network engine shared by the autoencoder and the perceptron heads:
//! activations, losses, backprop, Adam and minibatch training.

mod adam;
mod checkpoint;
mod network;
mod train;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use network::{glorot_limit, Activation, DenseLayer, DenseNetwork, ForwardCache, Gradients};
pub use train::{fit, FitReport, TrainConfig};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `(1/n) Σ (x - x̂)²`
pub fn mse_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::shape(format!(
            "mse over lengths {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    let s: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len() as f64)
}

/// `-Σ y · ln(clamp(p, 1e-12, 1))`
pub fn cce_loss(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&pv, &t)| -t * pv.clamp(PROB_FLOOR, 1.0).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CategoricalCrossEntropy,
}

impl Loss {
    /// Mean per-sample loss over a batch.
    pub fn batch_value(self, output: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
        if output.dim() != target.dim() {
            return Err(Error::shape(format!(
                "output {:?} vs target {:?}",
                output.dim(),
                target.dim()
            )));
        }
        let rows = output.nrows().max(1) as f64;
        let total: f64 = output
            .rows()
            .into_iter()
            .zip(target.rows())
            .map(|(o, t)| {
                let (o, t) = (o.to_vec(), t.to_vec());
                match self {
                    Loss::Mse => mse_loss(&t, &o).unwrap_or(0.0),
                    Loss::CategoricalCrossEntropy => cce_loss(&o, &t),
                }
            })
            .sum();
        Ok(total / rows)
    }

    /// d(batch mean loss)/d(output activations).
    pub fn output_gradient(self, output: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Array2<f64> {
        let rows = output.nrows().max(1) as f64;
        let mut g = Array2::zeros(output.raw_dim());
        match self {
            Loss::Mse => {
                let n = output.ncols() as f64;
                Zip::from(&mut g)
                    .and(&output)
                    .and(&target)
                    .for_each(|g, &o, &t| *g = 2.0 * (o - t) / (n * rows));
            }
            Loss::CategoricalCrossEntropy => {
                Zip::from(&mut g).and(&output).and(&target).for_each(|g, &p, &t| {
                    *g = if t == 0.0 || p < PROB_FLOOR {
                        0.0
                    } else {
                        -t / p / rows
                    };
                });
            }
        }
        g
    }
}
