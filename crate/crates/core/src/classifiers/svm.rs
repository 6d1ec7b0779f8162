//! Support vector machine trained by simplified sequential minimal
//! optimization on the dual, one-vs-rest for more than two classes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

/// RBF width: a fixed value or `"scale"`, i.e. `1 / (d · var(X))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Value(f64),
    Named(GammaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaRule {
    Scale,
}

impl Gamma {
    pub const SCALE: Gamma = Gamma::Named(GammaRule::Scale);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub kernel: KernelKind,
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    pub gamma: Gamma,
    pub tol: f64,
    /// Consecutive sweeps without an update before stopping.
    pub max_passes: usize,
    /// Hard cap on sweeps over the data.
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Rbf,
            c: 1.0,
            gamma: Gamma::SCALE,
            tol: 1e-3,
            max_passes: 10,
            max_sweeps: 10_000,
            seed: 0,
        }
    }
}

/// Kernel with its parameters resolved against the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    fn matrix(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = x.nrows();
        let rows = par::map_range(n, |i| {
            (0..n)
                .map(|j| self.eval(x.row(i), x.row(j)))
                .collect::<Vec<f64>>()
        });
        Array2::from_shape_vec((n, n), rows.concat()).expect("n×n")
    }
}

/// One binary decision function `f(x) = Σ coef_i K(sv_i, x) + bias`, where
/// `coef_i = α_i y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmHead {
    /// Class scored positive by this head.
    pub class: usize,
    pub support_vectors: Array2<f64>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

impl SvmHead {
    pub fn decision(&self, kernel: &Kernel, x: ArrayView1<'_, f64>) -> f64 {
        self.support_vectors
            .rows()
            .into_iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        self.coefficients.iter().map(|c| c.abs())
    }

    /// `Σ α_i y_i`, zero for a feasible dual point.
    pub fn alpha_y_sum(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    /// Dual objective `Σ α - ½ Σ α_i α_j y_i y_j K_ij`.
    pub fn dual_objective(&self, kernel: &Kernel) -> f64 {
        let mut quad = 0.0;
        for (i, a) in self.support_vectors.rows().into_iter().enumerate() {
            for (j, b) in self.support_vectors.rows().into_iter().enumerate() {
                quad += self.coefficients[i] * self.coefficients[j] * kernel.eval(a, b);
            }
        }
        self.alphas().sum::<f64>() - 0.5 * quad
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub dim: usize,
    pub n_classes: usize,
    /// Training count per class; breaks exact score ties toward the larger
    /// class.
    pub class_counts: Vec<usize>,
    pub heads: Vec<SvmHead>,
}

/// Output of the SMO solver for one binary problem.
struct DualSolution {
    alphas: Vec<f64>,
    bias: f64,
}

fn smo(k: &Array2<f64>, y: &[f64], cfg: &SvmConfig, seed: u64) -> DualSolution {
    let n = y.len();
    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    let mut b = 0.0;
    // f_no_bias[i] = Σ_k α_k y_k K_ik
    let mut f_no_bias = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passes = 0;
    let mut sweeps = 0;
    while passes < cfg.max_passes && sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut changed = 0;
        for i in 0..n {
            let e_i = f_no_bias[i] + b - y[i];
            let violates = (y[i] * e_i < -cfg.tol && alpha[i] < c) || (y[i] * e_i > cfg.tol && alpha[i] > 0.0);
            if !violates || n < 2 {
                continue;
            }
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let e_j = f_no_bias[j] + b - y[j];
            let Some((ai, aj)) = pair_update(k, y, &alpha, c, i, j, e_i - e_j, false) else {
                continue;
            };
            let (di, dj) = (ai - alpha[i], aj - alpha[j]);
            let b1 = b - e_i - y[i] * di * k[[i, i]] - y[j] * dj * k[[i, j]];
            let b2 = b - e_j - y[i] * di * k[[i, j]] - y[j] * dj * k[[j, j]];
            b = if ai > 0.0 && ai < c {
                b1
            } else if aj > 0.0 && aj < c {
                b2
            } else {
                0.5 * (b1 + b2)
            };
            apply_pair(k, y, &mut alpha, &mut f_no_bias, (i, ai), (j, aj));
            changed += 1;
        }
        passes = if changed == 0 { passes + 1 } else { 0 };
    }
    if sweeps >= cfg.max_sweeps {
        log::warn!("SMO stopped at the sweep cap ({}) before converging", cfg.max_sweeps);
    }
    polish(k, y, c, cfg.tol, cfg.max_sweeps.saturating_mul(n.max(1)), &mut alpha, &mut f_no_bias);
    DualSolution {
        bias: refine_bias(&alpha, &f_no_bias, y, c, b),
        alphas: alpha,
    }
}

/// Solves the two-variable subproblem on `(i, j)` given `E_i - E_j`, returning
/// the new multipliers. With `force` the step is taken along a flat or
/// degenerate direction as well.
#[allow(clippy::too_many_arguments)]
fn pair_update(
    k: &Array2<f64>,
    y: &[f64],
    alpha: &[f64],
    c: f64,
    i: usize,
    j: usize,
    e_diff: f64,
    force: bool,
) -> Option<(f64, f64)> {
    let (ai_old, aj_old) = (alpha[i], alpha[j]);
    let (lo, hi) = if y[i] != y[j] {
        ((aj_old - ai_old).max(0.0), c.min(c + aj_old - ai_old))
    } else {
        ((ai_old + aj_old - c).max(0.0), c.min(ai_old + aj_old))
    };
    if lo >= hi {
        return None;
    }
    let mut eta = 2.0 * k[[i, j]] - k[[i, i]] - k[[j, j]];
    if eta >= 0.0 {
        if !force {
            return None;
        }
        eta = -1e-12;
    }
    let aj = (aj_old - y[j] * e_diff / eta).clamp(lo, hi);
    if (aj - aj_old).abs() < if force { 1e-12 } else { 1e-5 } {
        return None;
    }
    let ai = (ai_old + y[i] * y[j] * (aj_old - aj)).clamp(0.0, c);
    Some((ai, aj))
}

fn apply_pair(
    k: &Array2<f64>,
    y: &[f64],
    alpha: &mut [f64],
    f_no_bias: &mut [f64],
    (i, ai): (usize, f64),
    (j, aj): (usize, f64),
) {
    let (di, dj) = (ai - alpha[i], aj - alpha[j]);
    alpha[i] = ai;
    alpha[j] = aj;
    for (t, f) in f_no_bias.iter_mut().enumerate() {
        *f += y[i] * di * k[[i, t]] + y[j] * dj * k[[j, t]];
    }
}

/// Updates the maximal violating pair until the KKT gap
/// `max_{I_low} F - min_{I_up} F` drops to `2·tol`, with `F = f_no_bias - y`.
fn polish(
    k: &Array2<f64>,
    y: &[f64],
    c: f64,
    tol: f64,
    max_steps: usize,
    alpha: &mut [f64],
    f_no_bias: &mut [f64],
) {
    for step in 0..max_steps {
        let (mut up, mut low) = (None::<(usize, f64)>, None::<(usize, f64)>);
        for t in 0..y.len() {
            let f = f_no_bias[t] - y[t];
            let can_rise = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            let can_fall = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if can_rise && up.is_none_or(|(_, v)| f < v) {
                up = Some((t, f));
            }
            if can_fall && low.is_none_or(|(_, v)| f > v) {
                low = Some((t, f));
            }
        }
        let (Some((i, f_up)), Some((j, f_low))) = (up, low) else {
            return;
        };
        if f_low - f_up <= 2.0 * tol || i == j {
            if step > 0 {
                log::debug!("SMO polish converged after {step} pair updates");
            }
            return;
        }
        let Some((ai, aj)) = pair_update(k, y, alpha, c, i, j, f_up - f_low, true) else {
            log::warn!("SMO polish stalled with KKT gap {:.3e}", f_low - f_up);
            return;
        };
        apply_pair(k, y, alpha, f_no_bias, (i, ai), (j, aj));
    }
    log::warn!("SMO polish hit its step cap ({max_steps})");
}

/// Recomputes the bias from the KKT conditions: the mean over free support
/// vectors of `y - f_no_bias`, or the midpoint of the feasible interval when
/// every multiplier sits at a bound.
fn refine_bias(alpha: &[f64], f_no_bias: &[f64], y: &[f64], c: f64, fallback: f64) -> f64 {
    let bound_tol = 1e-8 * c.max(1.0);
    let free: Vec<f64> = alpha
        .iter()
        .zip(f_no_bias.iter().zip(y))
        .filter(|(&a, _)| a > bound_tol && a < c - bound_tol)
        .map(|(_, (&f, &yi))| yi - f)
        .collect();
    if !free.is_empty() {
        return free.iter().sum::<f64>() / free.len() as f64;
    }
    // y_i (f_i + b) ≥ 1 at α = 0, ≤ 1 at α = C.
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for ((&a, &f), &yi) in alpha.iter().zip(f_no_bias).zip(y) {
        let at_zero = a <= bound_tol;
        let edge = yi - f;
        if (yi > 0.0) == at_zero {
            lo = lo.max(edge);
        } else {
            hi = hi.min(edge);
        }
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => fallback,
    }
}

fn resolve_kernel(cfg: &SvmConfig, x: ArrayView2<'_, f64>) -> Result<Kernel> {
    Ok(match cfg.kernel {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => {
            let gamma = match cfg.gamma {
                Gamma::Value(g) => g,
                Gamma::Named(GammaRule::Scale) => {
                    let var = x.var(0.0);
                    if var > 0.0 {
                        1.0 / (x.ncols() as f64 * var)
                    } else {
                        1.0
                    }
                }
            };
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::config(format!("rbf gamma must be positive, got {gamma}")));
            }
            Kernel::Rbf { gamma }
        }
    })
}

pub fn svm_train(cfg: &SvmConfig, train: &TrainingSet) -> Result<SvmModel> {
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(Error::config(format!("C must be positive, got {}", cfg.c)));
    }
    let counts = train.class_counts();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::input("svm training needs at least two classes present"));
    }
    let x = train.features.view();
    let kernel = resolve_kernel(cfg, x)?;
    let k = kernel.matrix(x);
    // Binary problems use one head scoring class 1 positive.
    let positives: Vec<usize> = if train.n_classes == 2 {
        vec![1]
    } else {
        (0..train.n_classes).collect()
    };
    let heads = par::map_slice(&positives, |h, &class| {
        let y: Vec<f64> = train
            .labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { -1.0 })
            .collect();
        let sol = smo(&k, &y, cfg, cfg.seed.wrapping_add(h as u64));
        let keep: Vec<usize> = (0..y.len()).filter(|&i| sol.alphas[i] > 0.0).collect();
        SvmHead {
            class,
            support_vectors: x.select(ndarray::Axis(0), &keep),
            coefficients: keep.iter().map(|&i| sol.alphas[i] * y[i]).collect(),
            bias: sol.bias,
        }
    });
    Ok(SvmModel {
        kernel,
        c: cfg.c,
        dim: train.dim(),
        n_classes: train.n_classes,
        class_counts: counts,
        heads,
    })
}

impl SvmModel {
    /// Raw decision value of every head.
    pub fn decision_values(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape(format!(
                "svm expects {} features, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(self.heads.iter().map(|h| h.decision(&self.kernel, x)).collect())
    }

    /// Among tied classes, the one seen most in training, then the lowest
    /// index.
    fn break_tie(&self, tied: impl Iterator<Item = usize>) -> usize {
        tied.min_by_key(|&c| (std::cmp::Reverse(self.class_counts[c]), c))
            .expect("at least one tied class")
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        let scores = self.decision_values(x)?;
        if self.heads.len() == 1 {
            let head = &self.heads[0];
            let other = 1 - head.class;
            return Ok(if scores[0] > 0.0 {
                head.class
            } else if scores[0] < 0.0 {
                other
            } else {
                self.break_tie([0, 1].into_iter())
            });
        }
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(self.break_tie(
            self.heads
                .iter()
                .zip(&scores)
                .filter(|(_, &s)| s == top)
                .map(|(h, _)| h.class),
        ))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}

pub fn svm_predict(model: &SvmModel, latent: &[f64]) -> Result<usize> {
    model.predict(ArrayView1::from(latent))
}

// Checkpoint: u32 header_len | JSON header | per head: n_sv×dim f32 support
// vectors, n_sv f32 coefficients.

#[derive(Serialize, Deserialize)]
struct SvmHeader {
    format: String,
    version: u32,
    kernel: Kernel,
    #[serde(rename = "C")]
    c: f64,
    dim: usize,
    n_classes: usize,
    class_counts: Vec<usize>,
    heads: Vec<HeadHeader>,
}

#[derive(Serialize, Deserialize)]
struct HeadHeader {
    class: usize,
    bias: f64,
    n_support: usize,
}

const SVM_FORMAT: &str = "drfg-svm";

pub fn write_svm<W: Write>(model: &SvmModel, mut w: W) -> Result<()> {
    let header = SvmHeader {
        format: SVM_FORMAT.into(),
        version: 1,
        kernel: model.kernel,
        c: model.c,
        dim: model.dim,
        n_classes: model.n_classes,
        class_counts: model.class_counts.clone(),
        heads: model
            .heads
            .iter()
            .map(|h| HeadHeader {
                class: h.class,
                bias: h.bias,
                n_support: h.coefficients.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for h in &model.heads {
        for v in h.support_vectors.iter().chain(&h.coefficients) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_svm<R: Read>(mut r: R, origin: &Path) -> Result<SvmModel> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::format(origin, "truncated header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::format(origin, "truncated header"))?;
    let header: SvmHeader = serde_json::from_slice(&json)?;
    if header.format != SVM_FORMAT || header.version != 1 {
        return Err(Error::format(origin, "not an svm checkpoint"));
    }
    let mut floats = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(origin, "truncated blob"))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    };
    let mut heads = Vec::with_capacity(header.heads.len());
    for h in &header.heads {
        let sv = Array2::from_shape_vec((h.n_support, header.dim), floats(h.n_support * header.dim)?)
            .map_err(|e| Error::format(origin, e.to_string()))?;
        heads.push(SvmHead {
            class: h.class,
            support_vectors: sv,
            coefficients: floats(h.n_support)?,
            bias: h.bias,
        });
    }
    Ok(SvmModel {
        kernel: header.kernel,
        c: header.c,
        dim: header.dim,
        n_classes: header.n_classes,
        class_counts: header.class_counts,
        heads,
    })
}

pub fn save_svm(model: &SvmModel, path: &Path) -> Result<()> {
    write_svm(model, BufWriter::new(File::create(path)?))
}

pub fn load_svm(path: &Path) -> Result<SvmModel> {
    read_svm(BufReader::new(File::open(path)?), path)
}
