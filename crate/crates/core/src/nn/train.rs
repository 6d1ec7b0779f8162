use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::network::{Activation, DenseNetwork};
use super::Loss;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Overridden by the autoencoder (MSE) and the perceptron heads (CCE).
    #[serde(default = "default_loss")]
    pub loss: Loss,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_batch() -> usize {
    32
}

fn default_epochs() -> usize {
    40
}

fn default_loss() -> Loss {
    Loss::Mse
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(default_loss(), 0)
    }
}

impl TrainConfig {
    /// Batch 32, 40 epochs, default Adam.
    pub fn new(loss: Loss, shuffle_seed: u64) -> Self {
        Self {
            batch_size: default_batch(),
            epochs: default_epochs(),
            loss,
            shuffle_seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be at least 1"));
        }
        if !(self.adam.learning_rate >= 0.0) {
            return Err(Error::config("learning rate must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean training loss of each epoch, measured before each batch's update.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

/// Minibatch Adam training. Each epoch visits every row once in an order
/// drawn from `cfg.shuffle_seed`.
///
/// A softmax output trained with cross-entropy uses the fused `p - y` delta.
pub fn fit(
    net: &mut DenseNetwork,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::input("cannot fit on an empty dataset"));
    }
    if targets.nrows() != n {
        return Err(Error::shape(format!(
            "{n} inputs but {} targets",
            targets.nrows()
        )));
    }
    if inputs.ncols() != net.input_dim() || targets.ncols() != net.output_dim() {
        return Err(Error::shape(format!(
            "data is {}→{}, network is {}→{}",
            inputs.ncols(),
            targets.ncols(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    let fused = cfg.loss == Loss::CategoricalCrossEntropy
        && net.layers().last().map(|l| l.activation) == Some(Activation::Softmax);

    let mut adam = AdamState::new(net, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), batch);
            let y = targets.select(Axis(0), batch);
            let (out, cache) = net.forward_batch(x.view())?;
            epoch_loss += cfg.loss.batch_value(out.view(), y.view())? * batch.len() as f64;
            let grads = if fused {
                let delta = (&out - &y) / batch.len() as f64;
                net.backward_from_logits(&cache, delta.view())?
            } else {
                let g = cfg.loss.output_gradient(out.view(), y.view());
                net.backward(&cache, g.view())?
            };
            adam.update(net, &grads)?;
        }
        history.push(epoch_loss / n as f64);
    }
    Ok(FitReport {
        loss_history: history,
        steps: adam.step_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNetwork};
    use ndarray::{array, Array2};

    fn data() -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((50, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let y = Array2::from_shape_fn((50, 2), |(i, j)| x[[i, j]] - 0.5 * x[[i, 2]]);
        (x, y)
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (x, y) = data();
        let run = || {
            let mut net =
                DenseNetwork::new(&[3, 6, 2], &[Activation::Relu, Activation::Linear], 4).unwrap();
            let mut cfg = TrainConfig::new(Loss::Mse, 17);
            cfg.epochs = 5;
            let r = fit(&mut net, x.view(), y.view(), &cfg).unwrap();
            (net, r)
        };
        let (n1, r1) = run();
        let (n2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(n1.layers(), n2.layers());
        assert_eq!(r1.loss_history.len(), 5);
        assert_eq!(r1.steps, 5 * 2); // ⌈50/32⌉ = 2 batches
    }

    #[test]
    fn single_sample_linear_mse_decreases() {
        let mut net = DenseNetwork::new(&[2, 1], &[Activation::Linear], 8).unwrap();
        let x = array![[1.0, -2.0]];
        let y = array![[3.0]];
        let mut cfg = TrainConfig::new(Loss::Mse, 0);
        cfg.epochs = 10;
        let r = fit(&mut net, x.view(), y.view(), &cfg).unwrap();
        for w in r.loss_history.windows(2) {
            assert!(w[1] < w[0], "{:?}", r.loss_history);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (x, y) = data();
        let mut net = DenseNetwork::new(&[3, 4, 2], &[Activation::Relu, Activation::Linear], 2).unwrap();
        let before = net.layers().to_vec();
        let mut cfg = TrainConfig::new(Loss::Mse, 0);
        cfg.adam.learning_rate = 0.0;
        cfg.epochs = 3;
        fit(&mut net, x.view(), y.view(), &cfg).unwrap();
        assert_eq!(net.layers(), &before[..]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut net = DenseNetwork::new(&[3, 2], &[Activation::Linear], 0).unwrap();
        let cfg = TrainConfig::new(Loss::Mse, 0);
        let x = Array2::zeros((4, 2));
        let y = Array2::zeros((4, 2));
        assert!(matches!(
            fit(&mut net, x.view(), y.view(), &cfg),
            Err(Error::InvalidShape(_))
        ));
        let empty = Array2::zeros((0, 3));
        assert!(fit(&mut net, empty.view(), Array2::zeros((0, 2)).view(), &cfg).is_err());
        let mut bad = cfg;
        bad.batch_size = 0;
        assert!(fit(&mut net, Array2::zeros((1, 3)).view(), Array2::zeros((1, 2)).view(), &bad).is_err());
    }
}
