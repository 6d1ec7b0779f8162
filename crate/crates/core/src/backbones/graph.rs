//! Frozen feature-map producers: serialized ONNX graphs and deterministic
//! stand-ins used for tests and dry runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{PreparedTensor, CHANNELS};

/// Spatial feature map, height × width × channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }
}

/// Memory layout of a graph's input and output tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorLayout {
    /// `[1, H, W, C]`, the layout of Keras exports.
    #[default]
    Nhwc,
    /// `[1, C, H, W]`, the layout of torchvision exports.
    Nchw,
}

/// Anything that maps a prepared 224×224×3 tensor to a spatial feature map.
///
/// Implementations are immutable after construction and safe to share across
/// threads.
pub trait FeatureGraph: Send + Sync {
    fn run(&self, input: &PreparedTensor) -> Result<FeatureMap>;

    /// Channel count of the produced map.
    fn output_channels(&self) -> usize;
}

/// In-process stand-ins for real backbones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StubGraph {
    /// Emits `value` everywhere, independent of the input.
    Constant {
        value: f32,
        #[serde(default = "default_grid")]
        grid: usize,
    },
    /// Average-pools the input onto a `grid`×`grid` lattice and applies a
    /// seeded random 3→C affine map followed by ReLU at every cell.
    Projection {
        seed: u64,
        #[serde(default = "default_grid")]
        grid: usize,
    },
}

fn default_grid() -> usize {
    7
}

pub struct ConstantGraph {
    value: f32,
    grid: usize,
    channels: usize,
}

impl ConstantGraph {
    pub fn new(value: f32, grid: usize, channels: usize) -> Self {
        Self {
            value,
            grid,
            channels,
        }
    }
}

impl FeatureGraph for ConstantGraph {
    fn run(&self, _input: &PreparedTensor) -> Result<FeatureMap> {
        Ok(FeatureMap::constant(
            self.grid,
            self.grid,
            self.channels,
            self.value,
        ))
    }

    fn output_channels(&self) -> usize {
        self.channels
    }
}

pub struct ProjectionGraph {
    grid: usize,
    channels: usize,
    // channels × 3, row-major
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ProjectionGraph {
    pub fn new(seed: u64, grid: usize, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..channels * CHANNELS)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let bias = (0..channels).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        Self {
            grid: grid.max(1),
            channels,
            weights,
            bias,
        }
    }
}

impl FeatureGraph for ProjectionGraph {
    fn run(&self, input: &PreparedTensor) -> Result<FeatureMap> {
        let (h, w, g) = (input.height, input.width, self.grid);
        if h < g || w < g {
            return Err(Error::shape(format!(
                "input {h}x{w} smaller than projection grid {g}"
            )));
        }
        let mut cells = vec![[0.0f64; CHANNELS]; g * g];
        let mut counts = vec![0usize; g * g];
        for r in 0..h {
            let gr = r * g / h;
            for c in 0..w {
                let cell = gr * g + c * g / w;
                let px = &input.data[(r * w + c) * CHANNELS..][..CHANNELS];
                for ch in 0..CHANNELS {
                    cells[cell][ch] += f64::from(px[ch]);
                }
                counts[cell] += 1;
            }
        }
        let mut data = Vec::with_capacity(g * g * self.channels);
        for (sum, n) in cells.iter().zip(&counts) {
            let mean: Vec<f32> = sum.iter().map(|s| (s / *n as f64) as f32).collect();
            for k in 0..self.channels {
                let w = &self.weights[k * CHANNELS..][..CHANNELS];
                let z = self.bias[k] + w.iter().zip(&mean).map(|(a, b)| a * b).sum::<f32>();
                data.push(z.max(0.0));
            }
        }
        FeatureMap::new(g, g, self.channels, data)
    }

    fn output_channels(&self) -> usize {
        self.channels
    }
}

impl StubGraph {
    pub fn build(&self, channels: usize) -> Box<dyn FeatureGraph> {
        match *self {
            StubGraph::Constant { value, grid } => {
                Box::new(ConstantGraph::new(value, grid.max(1), channels))
            }
            StubGraph::Projection { seed, grid } => {
                Box::new(ProjectionGraph::new(seed, grid, channels))
            }
        }
    }
}

#[cfg(feature = "onnx")]
pub use onnx::OnnxGraph;

#[cfg(feature = "onnx")]
mod onnx {
    use super::*;
    use crate::imaging::QUADRANT_SIDE;
    use std::path::Path;
    use tract_onnx::prelude::*;

    type Plan = Arc<TypedRunnableModel>;

    /// A serialized inference graph executed with tract.
    ///
    /// The graph must take one `f32` image batch of size 1 at 224×224×3 and
    /// return one rank-4 feature map.
    pub struct OnnxGraph {
        plan: Plan,
        layout: TensorLayout,
        out_shape: (usize, usize, usize),
    }

    fn load_err(path: &Path, e: impl std::fmt::Display) -> Error {
        Error::GraphLoad {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    impl OnnxGraph {
        pub fn load(path: &Path, layout: TensorLayout, expected_channels: usize) -> Result<Self> {
            if !path.is_file() {
                return Err(load_err(path, "file not found"));
            }
            let s = QUADRANT_SIDE;
            let input_shape = match layout {
                TensorLayout::Nhwc => [1, s, s, CHANNELS],
                TensorLayout::Nchw => [1, CHANNELS, s, s],
            };
            let model = tract_onnx::onnx()
                .model_for_path(path)
                .and_then(|m| m.with_input_fact(0, f32::fact(input_shape).into()))
                .and_then(|m| m.into_optimized())
                .map_err(|e| load_err(path, e))?;
            let fact = model.output_fact(0).map_err(|e| load_err(path, e))?;
            let dims = fact
                .shape
                .as_concrete()
                .ok_or_else(|| load_err(path, "output shape is not concrete"))?
                .to_vec();
            if dims.len() != 4 || dims[0] != 1 {
                return Err(load_err(
                    path,
                    format!("expected a [1, ., ., .] feature map output, got {dims:?}"),
                ));
            }
            let out_shape = match layout {
                TensorLayout::Nhwc => (dims[1], dims[2], dims[3]),
                TensorLayout::Nchw => (dims[2], dims[3], dims[1]),
            };
            if out_shape.2 != expected_channels {
                return Err(Error::config(format!(
                    "{} produces {} channels but the registry declares {expected_channels}",
                    path.display(),
                    out_shape.2
                )));
            }
            let plan = model.into_runnable().map_err(|e| load_err(path, e))?;
            Ok(Self {
                plan,
                layout,
                out_shape,
            })
        }
    }

    impl FeatureGraph for OnnxGraph {
        fn run(&self, input: &PreparedTensor) -> Result<FeatureMap> {
            let (h, w) = (input.height, input.width);
            let run_err = |e: TractError| Error::input(format!("graph execution failed: {e}"));
            let tensor: Tensor = match self.layout {
                TensorLayout::Nhwc => {
                    tract_ndarray::Array4::from_shape_vec((1, h, w, CHANNELS), input.data.clone())
                        .map_err(|e| Error::shape(e.to_string()))?
                        .into()
                }
                TensorLayout::Nchw => tract_ndarray::Array4::from_shape_fn(
                    (1, CHANNELS, h, w),
                    |(_, c, y, x)| input.data[(y * w + x) * CHANNELS + c],
                )
                .into(),
            };
            let outputs = self.plan.run(tvec!(tensor.into())).map_err(run_err)?;
            let view = outputs[0]
                .to_plain_array_view::<f32>()
                .map_err(|e| Error::shape(e.to_string()))?;
            let (oh, ow, oc) = self.out_shape;
            let data: Vec<f32> = match self.layout {
                TensorLayout::Nhwc => view.iter().copied().collect(),
                TensorLayout::Nchw => {
                    let mut data = Vec::with_capacity(oh * ow * oc);
                    for y in 0..oh {
                        for x in 0..ow {
                            for c in 0..oc {
                                data.push(view[[0, c, y, x]]);
                            }
                        }
                    }
                    data
                }
            };
            FeatureMap::new(oh, ow, oc, data)
        }

        fn output_channels(&self) -> usize {
            self.out_shape.2
        }
    }
}
