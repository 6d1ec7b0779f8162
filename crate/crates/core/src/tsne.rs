//! Exact t-SNE: perplexity-calibrated Gaussian affinities in the input
//! space, Student-t affinities in the embedding, gradient descent on the
//! KL divergence with momentum, per-parameter gains and early exaggeration.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub output_dim: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches and exaggeration ends.
    pub switch_iteration: usize,
    pub exaggeration: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            output_dim: 2,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            switch_iteration: 250,
            exaggeration: 12.0,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::input(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if !(self.perplexity > 0.0 && self.perplexity < (n as f64 - 1.0) / 3.0) {
            return Err(Error::config(format!(
                "perplexity {} must lie in (0, {}) for {n} points",
                self.perplexity,
                (n as f64 - 1.0) / 3.0
            )));
        }
        if self.iterations < 250 || self.output_dim == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "t-SNE needs at least 250 iterations, a positive output dim and learning rate",
            ));
        }
        Ok(())
    }
}

/// Symmetric joint affinities of the input points.
#[derive(Debug, Clone, PartialEq)]
pub struct PMatrix {
    pub p: Array2<f64>,
    /// Gaussian precision `β = 1 / (2σ²)` per row.
    pub betas: Vec<f64>,
    /// Rows whose target entropy was unreachable; these use uniform
    /// neighbour weights.
    pub fallback_rows: Vec<usize>,
}

const ENTROPY_TOL: f64 = 1e-10;
const MAX_BISECTION_STEPS: usize = 500;
/// Relative tolerance on `exp(H)` against the target perplexity.
pub const PERPLEXITY_TOL: f64 = 1e-3;

pub fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                x.row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    Array2::from_shape_vec((n, n), rows.concat()).expect("n×n")
}

/// Conditional neighbour distribution of row `i` at precision `beta` and its
/// Shannon entropy in nats.
pub fn conditional_row(dist: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { (-beta * (d - min)).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, v) in p.iter_mut().enumerate() {
        if j != i {
            weighted += *v * (dist[j] - min);
        }
        *v /= sum;
    }
    let entropy = sum.ln() + beta * weighted / sum;
    (p, entropy)
}

/// Bisection on β for one row. Returns the row, its β and whether the target
/// was met.
fn calibrate_row(dist: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64, bool) {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut beta = 1.0;
    for _ in 0..MAX_BISECTION_STEPS {
        let (p, h) = conditional_row(dist, i, beta);
        let diff = h - target;
        if diff.abs() < ENTROPY_TOL {
            return (p, beta, true);
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
        if hi.is_finite() && hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let (p, h) = conditional_row(dist, i, beta);
    if (h.exp() - perplexity).abs() <= PERPLEXITY_TOL * perplexity && beta.is_finite() {
        return (p, beta, true);
    }
    let (p, _) = conditional_row(dist, i, 0.0);
    (p, 0.0, false)
}

pub fn compute_p_matrix(x: ArrayView2<'_, f64>, perplexity: f64) -> Result<PMatrix> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::input(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(perplexity >= 1.0 && perplexity <= (n - 1) as f64) {
        return Err(Error::config(format!(
            "perplexity {perplexity} must lie in [1, {}]",
            n - 1
        )));
    }
    let d = squared_distances(x);
    let rows = par::map_range(n, |i| {
        calibrate_row(d.row(i).as_slice().expect("standard layout"), i, perplexity)
    });
    let mut cond = Array2::zeros((n, n));
    let mut betas = Vec::with_capacity(n);
    let mut fallback_rows = Vec::new();
    for (i, (p, beta, ok)) in rows.into_iter().enumerate() {
        cond.row_mut(i).assign(&ndarray::Array1::from(p));
        betas.push(beta);
        if !ok {
            fallback_rows.push(i);
        }
    }
    if !fallback_rows.is_empty() {
        log::warn!(
            "{} rows could not reach perplexity {perplexity}; using uniform neighbours",
            fallback_rows.len()
        );
    }
    let p = (&cond + &cond.t()) / (2.0 * n as f64);
    Ok(PMatrix {
        p,
        betas,
        fallback_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Array2<f64>,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Embedding,
    /// KL(P‖Q) of the embedding entering each iteration, against the
    /// unexaggerated P.
    pub kl_history: Vec<f64>,
    pub fallback_rows: Vec<usize>,
}

/// Gradient of KL(exaggeration · P ‖ Q) and the unexaggerated KL(P ‖ Q).
fn gradient_step(
    y: &Array2<f64>,
    p: &Array2<f64>,
    exaggeration: f64,
) -> (Array2<f64>, f64) {
    let (n, dim) = y.dim();
    let num_rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let d2: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    1.0 / (1.0 + d2)
                }
            })
            .collect::<Vec<f64>>()
    });
    let z: f64 = num_rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    let per_row = par::map_range(n, |i| {
        let mut g = vec![0.0; dim];
        let mut kl = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let num = num_rows[i][j];
            let q = (num / z).max(f64::MIN_POSITIVE);
            let pij = p[[i, j]];
            if pij > 0.0 {
                kl += pij * (pij / q).ln();
            }
            let coeff = 4.0 * (exaggeration * pij - q) * num;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += coeff * (y[[i, k]] - y[[j, k]]);
            }
        }
        (g, kl)
    });
    let mut grad = Array2::zeros((n, dim));
    let mut kl = 0.0;
    for (i, (g, k)) in per_row.into_iter().enumerate() {
        grad.row_mut(i).assign(&ndarray::Array1::from(g));
        kl += k;
    }
    (grad, kl)
}

pub fn tsne_embed(set: &LabeledSet, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = set.len();
    cfg.validate(n)?;
    let pm = compute_p_matrix(set.features.view(), cfg.perplexity)?;
    let normal = Normal::new(0.0, 1e-4).expect("valid deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = Array2::from_shape_simple_fn((n, cfg.output_dim), || normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros(y.raw_dim());
    let mut gains = Array2::<f64>::ones(y.raw_dim());
    let mut kl_history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let early = it < cfg.switch_iteration;
        let exaggeration = if early { cfg.exaggeration } else { 1.0 };
        let momentum = if early {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let (grad, kl) = gradient_step(&y, &pm.p, exaggeration);
        kl_history.push(kl);
        ndarray::Zip::from(&mut gains)
            .and(&mut update)
            .and(&grad)
            .for_each(|gain, u, &g| {
                *gain = if (g > 0.0) != (*u > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
                *u = momentum * *u - cfg.learning_rate * *gain * g;
            });
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("n ≥ 4");
        y -= &mean;
    }
    if kl_history.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("t-SNE produced a non-finite KL divergence".into()));
    }
    Ok(TsneResult {
        embedding: Embedding {
            points: y,
            sample_ids: set.ids.clone(),
            labels: set.labels.clone(),
        },
        kl_history,
        fallback_rows: pm.fallback_rows,
    })
}

/// KL(P‖Q) for the Student-t affinities of `y`.
pub fn kl_divergence(y: &Array2<f64>, p: &Array2<f64>) -> f64 {
    gradient_step(y, p, 1.0).1
}

impl Embedding {
    /// CSV with header `sample_id,label,x,y` (further columns for higher
    /// output dims are named `d2`, `d3`, ...).
    pub fn write_csv<W: Write>(&self, w: W, class_names: Option<&[String]>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample_id".to_string(), "label".into(), "x".into(), "y".into()];
        header.truncate(2 + self.points.ncols().min(2));
        header.extend((2..self.points.ncols()).map(|k| format!("d{k}")));
        out.write_record(&header)?;
        for ((id, &label), row) in self.sample_ids.iter().zip(&self.labels).zip(self.points.rows()) {
            let label = match class_names {
                Some(names) => names.get(label).cloned().unwrap_or_else(|| label.to_string()),
                None => label.to_string(),
            };
            let mut rec = vec![id.clone(), label];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, class_names: Option<&[String]>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, class_names)
    }
}
