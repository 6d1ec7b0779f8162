//! Backbone registry, quadrant assignment, global average pooling and
//! feature-vector assembly.

mod graph;
mod standardize;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use graph::{
    ConstantGraph, FeatureGraph, FeatureMap, ProjectionGraph, StubGraph, TensorLayout,
};
#[cfg(feature = "onnx")]
pub use graph::OnnxGraph;
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer, STANDARDIZER_EPSILON};

use crate::error::{Error, Result};
use crate::imaging::{
    preprocess, resize_bilinear, slice_quadrants, ImageTensor, PreparedTensor, PreprocessMode,
    QUADRANT_SIDE,
};

/// Channel counts a pooled ImageNet backbone can produce.
pub const KNOWN_CHANNEL_COUNTS: [usize; 5] = [512, 1024, 1280, 1536, 2048];

/// One entry of the backbone registry.
///
/// Exactly one of `graph_path` (a serialized ONNX graph with the classifier
/// head removed) or `stub` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    #[serde(default, alias = "path", skip_serializing_if = "Option::is_none")]
    pub graph_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub: Option<StubGraph>,
    #[serde(alias = "channels")]
    pub output_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessMode>,
    #[serde(default)]
    pub layout: TensorLayout,
}

impl BackboneSpec {
    pub fn onnx(name: &str, path: impl Into<PathBuf>, output_channels: usize) -> Self {
        Self {
            name: name.to_string(),
            graph_path: Some(path.into()),
            stub: None,
            output_channels,
            preprocess: None,
            layout: TensorLayout::Nhwc,
        }
    }

    pub fn stub(name: &str, stub: StubGraph, output_channels: usize) -> Self {
        Self {
            name: name.to_string(),
            graph_path: None,
            stub: Some(stub),
            output_channels,
            preprocess: None,
            layout: TensorLayout::Nhwc,
        }
    }

    /// The configured preprocess mode, or the family default for this name.
    pub fn preprocess_mode(&self) -> PreprocessMode {
        self.preprocess
            .unwrap_or_else(|| default_preprocess(&self.name))
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_channels == 0 {
            return Err(Error::config(format!("{}: zero output channels", self.name)));
        }
        match (&self.graph_path, &self.stub) {
            (Some(_), None) => {
                if !KNOWN_CHANNEL_COUNTS.contains(&self.output_channels) {
                    return Err(Error::config(format!(
                        "{}: {} output channels is not one of {KNOWN_CHANNEL_COUNTS:?}",
                        self.name, self.output_channels
                    )));
                }
                Ok(())
            }
            (None, Some(_)) => Ok(()),
            _ => Err(Error::config(format!(
                "{}: set exactly one of `graph_path` or `stub`",
                self.name
            ))),
        }
    }
}

/// Input convention of the published weights for each architecture family.
pub fn default_preprocess(name: &str) -> PreprocessMode {
    let n = name.to_ascii_lowercase().replace(['-', '_'], "");
    if n.starts_with("vgg") || n.starts_with("resnet") {
        PreprocessMode::MeanSubtractBgr
    } else if n.starts_with("densenet") {
        PreprocessMode::ScaleNormalize
    } else if n.starts_with("mobilenet") || n.starts_with("inception") {
        PreprocessMode::ScaleSymmetric
    } else {
        // EfficientNet exports carry their own rescaling layer.
        PreprocessMode::Identity
    }
}

/// `(name, pooled channel count)` of the eight default backbones, in
/// assignment order.
pub const DEFAULT_BACKBONES: [(&str, usize); 8] = [
    ("vgg19", 512),
    ("efficientnet_b0", 1280),
    ("resnet50", 2048),
    ("vgg16", 512),
    ("densenet121", 1024),
    ("mobilenet", 1024),
    ("inception_v3", 2048),
    ("inception_resnet_v2", 1536),
];

/// Default registry pointing at `graphs/<name>.onnx`.
pub fn default_registry() -> Vec<BackboneSpec> {
    DEFAULT_BACKBONES
        .iter()
        .map(|&(name, ch)| BackboneSpec::onnx(name, format!("graphs/{name}.onnx"), ch))
        .collect()
}

/// Default registry geometry backed by constant stubs. Useful for dry runs.
pub fn default_stub_registry() -> Vec<BackboneSpec> {
    DEFAULT_BACKBONES
        .iter()
        .enumerate()
        .map(|(i, &(name, ch))| {
            BackboneSpec::stub(
                name,
                StubGraph::Constant {
                    value: i as f32,
                    grid: 7,
                },
                ch,
            )
        })
        .collect()
}

/// Two backbones that both consume one quadrant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantPair {
    pub quadrant: usize,
    pub first: String,
    pub second: String,
}

/// Which backbone pair reads which quadrant. Pairs are concatenated in list
/// order, `first` before `second`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<QuadrantPair>", into = "Vec<QuadrantPair>")]
pub struct QuadrantAssignment {
    pairs: Vec<QuadrantPair>,
}

impl QuadrantAssignment {
    /// Checks that quadrant indices are in `0..4` and unique and that no
    /// backbone appears twice.
    pub fn new(pairs: Vec<QuadrantPair>) -> Result<Self> {
        if pairs.is_empty() || pairs.len() > 4 {
            return Err(Error::config(format!(
                "assignment needs 1 to 4 pairs, got {}",
                pairs.len()
            )));
        }
        let mut quads = HashSet::new();
        let mut names = HashSet::new();
        for p in &pairs {
            if p.quadrant >= 4 || !quads.insert(p.quadrant) {
                return Err(Error::config(format!(
                    "quadrant {} is out of range or assigned twice",
                    p.quadrant
                )));
            }
            for n in [&p.first, &p.second] {
                if !names.insert(n.as_str()) {
                    return Err(Error::config(format!("backbone `{n}` assigned twice")));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[QuadrantPair] {
        &self.pairs
    }

    /// Every quadrant covered, eight distinct backbones.
    pub fn is_complete(&self) -> bool {
        self.pairs.len() == 4
    }

    /// Backbone names in concatenation order.
    pub fn order(&self) -> impl Iterator<Item = &str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.first.as_str(), p.second.as_str()])
    }
}

impl Default for QuadrantAssignment {
    fn default() -> Self {
        let pair = |q: usize, a: &str, b: &str| QuadrantPair {
            quadrant: q,
            first: a.into(),
            second: b.into(),
        };
        Self {
            pairs: vec![
                pair(0, "vgg19", "efficientnet_b0"),
                pair(1, "resnet50", "vgg16"),
                pair(2, "densenet121", "mobilenet"),
                pair(3, "inception_v3", "inception_resnet_v2"),
            ],
        }
    }
}

impl TryFrom<Vec<QuadrantPair>> for QuadrantAssignment {
    type Error = Error;

    fn try_from(pairs: Vec<QuadrantPair>) -> Result<Self> {
        Self::new(pairs)
    }
}

impl From<QuadrantAssignment> for Vec<QuadrantPair> {
    fn from(a: QuadrantAssignment) -> Self {
        a.pairs
    }
}

/// A registry entry with its graph loaded.
pub struct Backbone {
    spec: BackboneSpec,
    graph: Box<dyn FeatureGraph>,
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backbone").field("spec", &self.spec).finish()
    }
}

impl Backbone {
    /// Loads the graph. Relative graph paths resolve against `base_dir`.
    pub fn load(spec: &BackboneSpec, base_dir: &Path) -> Result<Self> {
        spec.validate()?;
        let graph = match (&spec.graph_path, &spec.stub) {
            (_, Some(stub)) => stub.build(spec.output_channels),
            (Some(path), None) => load_graph(spec, &base_dir.join(path))?,
            (None, None) => unreachable!("validated above"),
        };
        Self::from_graph(spec.clone(), graph)
    }

    pub fn from_graph(spec: BackboneSpec, graph: Box<dyn FeatureGraph>) -> Result<Self> {
        if graph.output_channels() != spec.output_channels {
            return Err(Error::config(format!(
                "{}: graph yields {} channels, registry declares {}",
                spec.name,
                graph.output_channels(),
                spec.output_channels
            )));
        }
        Ok(Self { spec, graph })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Runs the graph on an already-preprocessed tile.
    pub fn run(&self, input: &PreparedTensor) -> Result<FeatureMap> {
        if input.height != QUADRANT_SIDE || input.width != QUADRANT_SIDE {
            return Err(Error::shape(format!(
                "backbone input must be {QUADRANT_SIDE}x{QUADRANT_SIDE}, got {}x{}",
                input.height, input.width
            )));
        }
        let map = self.graph.run(input)?;
        if map.channels != self.spec.output_channels {
            return Err(Error::config(format!(
                "graph produced {} channels, registry declares {}",
                map.channels, self.spec.output_channels
            )));
        }
        Ok(map)
    }

    /// Preprocess, run and pool one 224×224 tile.
    pub fn pooled_features(&self, tile: &ImageTensor) -> Result<Vec<f32>> {
        let wrap = |e| Error::Backbone {
            name: self.spec.name.clone(),
            source: Box::new(e),
        };
        let prepared = preprocess(tile, self.spec.preprocess_mode()).map_err(wrap)?;
        let map = self.run(&prepared).map_err(wrap)?;
        global_average_pool(&map).map_err(wrap)
    }
}

#[cfg(feature = "onnx")]
fn load_graph(spec: &BackboneSpec, path: &Path) -> Result<Box<dyn FeatureGraph>> {
    Ok(Box::new(OnnxGraph::load(
        path,
        spec.layout,
        spec.output_channels,
    )?))
}

#[cfg(not(feature = "onnx"))]
fn load_graph(spec: &BackboneSpec, path: &Path) -> Result<Box<dyn FeatureGraph>> {
    Err(Error::config(format!(
        "{}: cannot load {} without the `onnx` feature",
        spec.name,
        path.display()
    )))
}

/// Loads every spec in the registry.
pub fn load_registry(registry: &[BackboneSpec], base_dir: &Path) -> Result<Vec<Backbone>> {
    let mut seen = HashSet::new();
    for s in registry {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::config(format!("duplicate backbone `{}`", s.name)));
        }
    }
    registry.iter().map(|s| Backbone::load(s, base_dir)).collect()
}

/// Runs a loaded backbone on a prepared tile.
pub fn run_backbone(backbone: &Backbone, input: &PreparedTensor) -> Result<FeatureMap> {
    backbone.run(input)
}

/// Spatial mean per channel.
pub fn global_average_pool(map: &FeatureMap) -> Result<Vec<f32>> {
    let spatial = map.height * map.width;
    if spatial == 0 || map.channels == 0 || map.data.len() != spatial * map.channels {
        return Err(Error::shape(format!(
            "cannot pool a {}x{}x{} map",
            map.height, map.width, map.channels
        )));
    }
    let mut acc = vec![0.0f64; map.channels];
    for px in map.data.chunks_exact(map.channels) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += f64::from(v);
        }
    }
    Ok(acc.into_iter().map(|s| (s / spatial as f64) as f32).collect())
}

/// Length of the concatenated vector an assignment produces.
pub fn feature_dim(assignment: &QuadrantAssignment, registry: &[Backbone]) -> Result<usize> {
    assignment
        .order()
        .map(|n| find(registry, n).map(|b| b.spec.output_channels))
        .sum()
}

fn find<'a>(registry: &'a [Backbone], name: &str) -> Result<&'a Backbone> {
    registry
        .iter()
        .find(|b| b.spec.name == name)
        .ok_or_else(|| Error::config(format!("assignment names unknown backbone `{name}`")))
}

/// Slices the 448×448 image and concatenates the pooled output of every
/// assigned backbone, pair by pair, `first` before `second`.
pub fn extract_features(
    img: &ImageTensor,
    assignment: &QuadrantAssignment,
    registry: &[Backbone],
) -> Result<Vec<f32>> {
    let quadrants = slice_quadrants(img)?;
    let mut out = Vec::with_capacity(feature_dim(assignment, registry)?);
    for pair in assignment.pairs() {
        let tile = quadrants
            .get(pair.quadrant)
            .ok_or_else(|| Error::config(format!("quadrant {}", pair.quadrant)))?;
        for name in [&pair.first, &pair.second] {
            out.extend(find(registry, name)?.pooled_features(tile)?);
        }
    }
    Ok(out)
}

/// Single-backbone features of the whole scan resized to 224×224.
pub fn extract_whole_image(img: &ImageTensor, backbone: &Backbone) -> Result<Vec<f32>> {
    let small = resize_bilinear(img, QUADRANT_SIDE, QUADRANT_SIDE)?;
    backbone.pooled_features(&small)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blank() -> ImageTensor {
        ImageTensor::new(448, 448, vec![0.0; 448 * 448 * 3]).unwrap()
    }

    fn constant_backbone(name: &str, value: f32, channels: usize) -> Backbone {
        Backbone::load(
            &BackboneSpec::stub(name, StubGraph::Constant { value, grid: 7 }, channels),
            Path::new("."),
        )
        .unwrap()
    }

    #[test]
    fn default_registry_sums_to_9984() {
        let total: usize = DEFAULT_BACKBONES.iter().map(|b| b.1).sum();
        assert_eq!(total, 512 + 1280 + 2048 + 512 + 1024 + 1024 + 2048 + 1536);
        assert_eq!(total, 9984);
        for spec in default_registry() {
            spec.validate().unwrap();
        }
    }

    #[test]
    fn default_assignment_is_complete_and_covers_registry() {
        let a = QuadrantAssignment::default();
        assert!(a.is_complete());
        let names: Vec<&str> = a.order().collect();
        let reg: Vec<&str> = DEFAULT_BACKBONES.iter().map(|b| b.0).collect();
        assert_eq!(names, reg);
    }

    #[test]
    fn assignment_rejects_duplicates() {
        let p = |q, a: &str, b: &str| QuadrantPair {
            quadrant: q,
            first: a.into(),
            second: b.into(),
        };
        assert!(QuadrantAssignment::new(vec![p(0, "a", "b"), p(0, "c", "d")]).is_err());
        assert!(QuadrantAssignment::new(vec![p(0, "a", "b"), p(1, "a", "d")]).is_err());
        assert!(QuadrantAssignment::new(vec![p(4, "a", "b")]).is_err());
        let json = r#"[{"quadrant":1,"first":"x","second":"x"}]"#;
        assert!(serde_json::from_str::<QuadrantAssignment>(json).is_err());
    }

    #[test]
    fn stub_concatenation_order() {
        let reg = vec![constant_backbone("a", 1.0, 3), constant_backbone("b", 2.0, 5)];
        let assignment = QuadrantAssignment::new(vec![QuadrantPair {
            quadrant: 0,
            first: "a".into(),
            second: "b".into(),
        }])
        .unwrap();
        let v = extract_features(&blank(), &assignment, &reg).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn default_geometry_layout_with_distinct_constants() {
        let reg = load_registry(&default_stub_registry(), Path::new(".")).unwrap();
        let a = QuadrantAssignment::default();
        let v = extract_features(&blank(), &a, &reg).unwrap();
        assert_eq!(v.len(), 9984);
        let mut start = 0;
        for (k, (_, ch)) in DEFAULT_BACKBONES.iter().enumerate() {
            assert!(v[start..start + ch].iter().all(|&x| x == k as f32));
            start += ch;
        }
    }

    #[test]
    fn gap_examples() {
        let m = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_average_pool(&m).unwrap(), vec![2.5]);
        let m = FeatureMap::constant(7, 7, 512, 0.25);
        let v = global_average_pool(&m).unwrap();
        assert_eq!(v.len(), 512);
        assert!(v.iter().all(|&x| x == 0.25));
        assert!(global_average_pool(&FeatureMap::constant(0, 0, 3, 1.0)).is_err());
    }

    #[test]
    fn missing_graph_is_load_error_and_mismatch_is_config_error() {
        let spec = BackboneSpec::onnx("vgg19", "/nonexistent/vgg19.onnx", 512);
        let err = Backbone::load(&spec, Path::new(".")).unwrap_err();
        if cfg!(feature = "onnx") {
            assert!(matches!(err, Error::GraphLoad { .. }), "{err}");
        } else {
            assert!(matches!(err, Error::Config(_)));
        }
        let bad = Backbone::from_graph(
            BackboneSpec::stub("x", StubGraph::Constant { value: 0.0, grid: 7 }, 4),
            Box::new(ConstantGraph::new(0.0, 7, 5)),
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let odd = BackboneSpec::onnx("odd", "x.onnx", 768);
        assert!(odd.validate().is_err());
    }

    #[test]
    fn backbone_errors_carry_name() {
        let b = constant_backbone("named", 0.0, 2);
        let err = b
            .pooled_features(&ImageTensor::new(10, 10, vec![0.0; 300]).unwrap())
            .unwrap_err();
        assert!(err.to_string().starts_with("backbone `named`"), "{err}");
    }

    #[test]
    fn preprocess_defaults() {
        assert_eq!(default_preprocess("vgg16"), PreprocessMode::MeanSubtractBgr);
        assert_eq!(default_preprocess("ResNet-50"), PreprocessMode::MeanSubtractBgr);
        assert_eq!(default_preprocess("mobilenet"), PreprocessMode::ScaleSymmetric);
        assert_eq!(default_preprocess("inception_resnet_v2"), PreprocessMode::ScaleSymmetric);
        assert_eq!(default_preprocess("densenet121"), PreprocessMode::ScaleNormalize);
        assert_eq!(default_preprocess("efficientnet_b0"), PreprocessMode::Identity);
    }

    #[test]
    fn spec_json_accepts_short_aliases() {
        let s: BackboneSpec = serde_json::from_str(
            r#"{"name":"vgg19","path":"g/vgg19.onnx","channels":512,"preprocess":"identity"}"#,
        )
        .unwrap();
        assert_eq!(s.graph_path.as_deref(), Some(Path::new("g/vgg19.onnx")));
        assert_eq!(s.preprocess_mode(), PreprocessMode::Identity);
        assert_eq!(s.layout, TensorLayout::Nhwc);
    }

    proptest! {
        #[test]
        fn gap_commutes_with_channel_permutation(
            data in proptest::collection::vec(-10.0f32..10.0, 3 * 3 * 4),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let map = FeatureMap::new(3, 3, 4, data.clone()).unwrap();
            let pooled = global_average_pool(&map).unwrap();
            let permuted: Vec<f32> = data
                .chunks_exact(4)
                .flat_map(|px| perm.iter().map(|&p| px[p]).collect::<Vec<_>>())
                .collect();
            let pooled_perm = global_average_pool(&FeatureMap::new(3, 3, 4, permuted).unwrap()).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                prop_assert_eq!(pooled_perm[k], pooled[p]);
            }
        }
    }
}
