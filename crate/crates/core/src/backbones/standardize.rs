use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STANDARDIZER_EPSILON: f64 = 1e-6;

/// Per-dimension z-score fitted on a training split.
///
/// Applies `(x - mean) / (deviation + epsilon)`, where `deviation` is the
/// population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub deviations: Vec<f64>,
    pub epsilon: f64,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(format!(
                "standardizer fitted on {} dims, got {}",
                self.dim(),
                v.len()
            )));
        }
        Ok(v
            .iter()
            .zip(self.means.iter().zip(&self.deviations))
            .map(|(x, (m, d))| (x - m) / (d + self.epsilon))
            .collect())
    }

    /// Row-wise [`Self::apply`].
    pub fn apply_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "standardizer fitted on {} dims, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let means = Array1::from(self.means.clone());
        let scale = Array1::from_iter(self.deviations.iter().map(|d| d + self.epsilon));
        Ok((&x - &means) / &scale)
    }
}

/// Fits per-dimension mean and population deviation over `train` rows.
pub fn fit_standardizer(train: ArrayView2<'_, f64>) -> Result<Standardizer> {
    if train.nrows() == 0 {
        return Err(Error::input("cannot fit a standardizer on an empty set"));
    }
    let means = train
        .mean_axis(Axis(0))
        .expect("non-empty rows checked above");
    let deviations = train.std_axis(Axis(0), 0.0);
    Ok(Standardizer {
        means: means.to_vec(),
        deviations: deviations.to_vec(),
        epsilon: STANDARDIZER_EPSILON,
    })
}

pub fn apply_standardizer(s: &Standardizer, v: &[f64]) -> Result<Vec<f64>> {
    s.apply(v)
}
