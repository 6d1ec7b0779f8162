use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
    Linear,
}

impl Activation {
    /// Applies the activation to every row of `z` in place.
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    super::softmax_in_place(row.as_slice_mut().expect("standard layout"));
                }
            }
        }
    }

    /// Maps dL/da to dL/dz given the layer's pre-activation `z` and output `a`.
    fn chain(self, grad: &Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Linear => grad.clone(),
            Activation::Relu => {
                let mut out = grad.clone();
                Zip::from(&mut out).and(z).for_each(|g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                });
                out
            }
            Activation::Softmax => {
                // J^T g = a ⊙ (g - <g, a>) per row
                let mut out = Array2::zeros(grad.raw_dim());
                for ((mut o, g), p) in out.rows_mut().into_iter().zip(grad.rows()).zip(a.rows()) {
                    let dot = g.dot(&p);
                    Zip::from(&mut o)
                        .and(&g)
                        .and(&p)
                        .for_each(|o, &gv, &pv| *o = pv * (gv - dot));
                }
                out
            }
        }
    }
}

/// Fully connected layer: `a = act(W·h + b)` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn pre_activation(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let z = h.dot(&self.weights.t());
        // the product may come back column-major; rows are sliced downstream
        let mut z = if z.is_standard_layout() { z } else { z.as_standard_layout().into_owned() };
        z += &self.bias;
        z
    }
}

/// Half-width of the uniform initialization range for a layer.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A stack of dense layers.
///
/// Every parameter update bumps an internal version; caches from earlier
/// forward passes are then rejected by [`DenseNetwork::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    seed: u64,
    version: u64,
}

/// Intermediate values of one forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    dims: Vec<usize>,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

/// dL/dW and dL/db for every layer, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights and zero biases. `dims` has one more entry than
    /// `activations`.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.len() != activations.len() + 1 {
            return Err(Error::config(format!(
                "{} dims cannot chain {} layers",
                dims.len(),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::config("layer dims must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = glorot_limit(fan_in, fan_out);
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers, seed)
    }

    pub fn from_layers(layers: Vec<DenseLayer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::config(format!(
                    "layer {k}: bias length {} != out dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if k + 1 < layers.len() {
                if layers[k + 1].in_dim() != l.out_dim() {
                    return Err(Error::config(format!(
                        "layer {} expects {} inputs, layer {k} emits {}",
                        k + 1,
                        layers[k + 1].in_dim(),
                        l.out_dim()
                    )));
                }
                if l.activation == Activation::Softmax {
                    return Err(Error::config("softmax is only allowed on the final layer"));
                }
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::config(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            seed,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to one layer. Invalidates outstanding caches.
    pub fn layer_mut(&mut self, k: usize) -> &mut DenseLayer {
        self.version += 1;
        &mut self.layers[k]
    }

    pub(crate) fn layers_mut_for_update(&mut self) -> &mut [DenseLayer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// `[in, hidden..., out]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let batch = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::shape(e.to_string()))?;
        let (out, cache) = self.forward_batch(batch)?;
        Ok((out.row(0).to_vec(), cache))
    }

    /// Forward pass over a batch, one sample per row, keeping the cache.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x.ncols(), 0)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = layer.pre_activation(h.view());
            let mut a = z.clone();
            layer.activation.apply(&mut a);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        let cache = ForwardCache {
            version: self.version,
            dims: self.dims(),
            inputs,
            pre,
            output: h.clone(),
        };
        Ok((h, cache))
    }

    /// Forward pass without a cache.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_layers(x, 0..self.layers.len())
    }

    /// Runs only `layers[range]`. Composing consecutive ranges reproduces the
    /// full forward pass exactly.
    pub fn forward_layers(&self, x: ArrayView2<'_, f64>, range: Range<usize>) -> Result<Array2<f64>> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::config(format!(
                "layer range {range:?} outside 0..{}",
                self.layers.len()
            )));
        }
        self.check_input(x.ncols(), range.start)?;
        let mut h = x.to_owned();
        for layer in &self.layers[range] {
            let mut z = layer.pre_activation(h.view());
            layer.activation.apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    fn check_input(&self, got: usize, layer: usize) -> Result<()> {
        let want = self.layers[layer].in_dim();
        if got != want {
            return Err(Error::shape(format!(
                "layer {layer} expects {want} inputs, got {got}"
            )));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache, grad_shape: (usize, usize)) -> Result<()> {
        if cache.version != self.version || cache.dims != self.dims() {
            return Err(Error::Contract(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        if grad_shape != cache.output.dim() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_shape,
                cache.output.dim()
            )));
        }
        Ok(())
    }

    /// Backprop from dL/d(output activations).
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<'_, f64>) -> Result<Gradients> {
        self.check_cache(cache, output_grad.dim())?;
        let last = self.layers.len() - 1;
        let delta = self.layers[last].activation.chain(
            &output_grad.to_owned(),
            &cache.pre[last],
            &cache.output,
        );
        Ok(self.backprop(cache, delta))
    }

    /// Backprop from dL/dz of the final layer, e.g. the fused softmax +
    /// cross-entropy delta `p - y`.
    pub fn backward_from_logits(&self, cache: &ForwardCache, delta: ArrayView2<'_, f64>) -> Result<Gradients> {
        self.check_cache(cache, delta.dim())?;
        Ok(self.backprop(cache, delta.to_owned()))
    }

    fn backprop(&self, cache: &ForwardCache, mut delta: Array2<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let dw = delta.t().dot(&cache.inputs[k]).as_standard_layout().into_owned();
            let db = delta.sum_axis(Axis(0));
            if k > 0 {
                let upstream = delta.dot(&self.layers[k].weights);
                let below = &self.layers[k - 1];
                delta = below
                    .activation
                    .chain(&upstream, &cache.pre[k - 1], &cache.inputs[k]);
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}
