//! Image loading, canonical resize, quadrant slicing and per-backbone input
//! normalization.
//!
//! Tensors are height × width × 3, row-major, RGB, `f32` in `[0, 255]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
/// Side length every scan is resized to before slicing.
pub const CANONICAL_SIDE: usize = 448;
/// Side length of one quadrant, and of every backbone input.
pub const QUADRANT_SIDE: usize = 224;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input(format!("zero-area image ({height}x{width})")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(format!(
                "expected {height}x{width}x{CHANNELS} = {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::input(format!("pixel value {bad} outside [0, 255]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a tensor from `f(row, col, channel)`. Values are clamped to `[0, 255]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..CHANNELS {
                    data.push(f(r, c, ch).clamp(0.0, 255.0));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + channel]
    }

    fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| f32::from(b)).collect();
        Self::new(h as usize, w as usize, data)
    }
}

/// Decodes a PNG or JPEG file and resizes it to 448×448×3.
///
/// Grayscale sources are replicated across the three channels.
pub fn load_and_resize(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .with_guessed_format()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::input(format!(
            "{} is a zero-area image",
            path.display()
        )));
    }
    // to_rgb8 replicates luma into all three channels.
    let tensor = ImageTensor::from_rgb8(&decoded.to_rgb8())?;
    resize_bilinear(&tensor, CANONICAL_SIDE, CANONICAL_SIDE)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
///
/// Resizing to the current size returns an exact copy, and a 2× downscale is
/// an exact 2×2 box average.
pub fn resize_bilinear(src: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::input(format!(
            "cannot resize to zero-area {height}x{width}"
        )));
    }
    if src.height == height && src.width == width {
        return Ok(src.clone());
    }
    let rows: Vec<(usize, usize, f32)> = axis_taps(src.height, height);
    let cols: Vec<(usize, usize, f32)> = axis_taps(src.width, width);
    let mut data = Vec::with_capacity(height * width * CHANNELS);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            for ch in 0..CHANNELS {
                let p00 = src.get(r0, c0, ch);
                let p01 = src.get(r0, c1, ch);
                let p10 = src.get(r1, c0, ch);
                let p11 = src.get(r1, c1, ch);
                // a + (b - a) * t keeps constant regions exactly constant.
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                data.push((top + (bottom - top) * fy).clamp(0.0, 255.0));
            }
        }
    }
    ImageTensor::new(height, width, data)
}

fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Four 224×224×3 tiles in row-major order: top-left, top-right,
/// bottom-left, bottom-right.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantSet {
    quadrants: [ImageTensor; 4],
}

impl QuadrantSet {
    pub fn quadrants(&self) -> &[ImageTensor; 4] {
        &self.quadrants
    }

    pub fn get(&self, index: usize) -> Option<&ImageTensor> {
        self.quadrants.get(index)
    }

    /// Stitches the tiles back into the 448×448 source.
    pub fn reassemble(&self) -> ImageTensor {
        let side = QUADRANT_SIDE;
        let full = 2 * side;
        let mut data = vec![0.0; full * full * CHANNELS];
        for (q, tile) in self.quadrants.iter().enumerate() {
            let (r_off, c_off) = ((q / 2) * side, (q % 2) * side);
            for r in 0..side {
                let dst = ((r + r_off) * full + c_off) * CHANNELS;
                let src = r * side * CHANNELS;
                data[dst..dst + side * CHANNELS]
                    .copy_from_slice(&tile.data[src..src + side * CHANNELS]);
            }
        }
        ImageTensor {
            height: full,
            width: full,
            data,
        }
    }
}

/// Maps a canonical-image pixel to `(quadrant index, local row, local col)`.
pub fn quadrant_of(row: usize, col: usize) -> (usize, usize, usize) {
    let q = (row / QUADRANT_SIDE) * 2 + col / QUADRANT_SIDE;
    (q, row % QUADRANT_SIDE, col % QUADRANT_SIDE)
}

pub fn slice_quadrants(img: &ImageTensor) -> Result<QuadrantSet> {
    if img.height != CANONICAL_SIDE || img.width != CANONICAL_SIDE {
        return Err(Error::shape(format!(
            "quadrant slicing needs {CANONICAL_SIDE}x{CANONICAL_SIDE}x{CHANNELS}, got {}x{}x{CHANNELS}",
            img.height, img.width
        )));
    }
    let side = QUADRANT_SIDE;
    let tile = |q: usize| {
        let (r_off, c_off) = ((q / 2) * side, (q % 2) * side);
        let mut data = Vec::with_capacity(side * side * CHANNELS);
        for r in 0..side {
            let start = ((r + r_off) * CANONICAL_SIDE + c_off) * CHANNELS;
            data.extend_from_slice(&img.data[start..start + side * CHANNELS]);
        }
        ImageTensor {
            height: side,
            width: side,
            data,
        }
    };
    Ok(QuadrantSet {
        quadrants: [tile(0), tile(1), tile(2), tile(3)],
    })
}

/// Numeric input convention of a backbone family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// `x / 127.5 - 1`
    ScaleSymmetric,
    /// RGB → BGR, then subtract the ImageNet channel means (caffe style).
    MeanSubtractBgr,
    /// `x / 255`, then per-channel standardization with ImageNet statistics.
    ScaleNormalize,
    Identity,
}

const BGR_MEANS: [f32; 3] = [103.939, 116.779, 123.68];
const RGB_MEANS: [f32; 3] = [0.485, 0.456, 0.406];
const RGB_STDS: [f32; 3] = [0.229, 0.224, 0.225];

/// A normalized 224×224×3 tensor ready for a backbone graph. Channel order
/// follows the preprocess mode (BGR for [`PreprocessMode::MeanSubtractBgr`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

pub fn preprocess(q: &ImageTensor, mode: PreprocessMode) -> Result<PreparedTensor> {
    if q.height != QUADRANT_SIDE || q.width != QUADRANT_SIDE {
        return Err(Error::shape(format!(
            "backbone input must be {QUADRANT_SIDE}x{QUADRANT_SIDE}x{CHANNELS}, got {}x{}x{CHANNELS}",
            q.height, q.width
        )));
    }
    let data = match mode {
        PreprocessMode::Identity => q.data.clone(),
        PreprocessMode::ScaleSymmetric => q.data.iter().map(|&x| x / 127.5 - 1.0).collect(),
        PreprocessMode::MeanSubtractBgr => q
            .data
            .chunks_exact(CHANNELS)
            .flat_map(|px| {
                [
                    px[2] - BGR_MEANS[0],
                    px[1] - BGR_MEANS[1],
                    px[0] - BGR_MEANS[2],
                ]
            })
            .collect(),
        PreprocessMode::ScaleNormalize => q
            .data
            .chunks_exact(CHANNELS)
            .flat_map(|px| {
                let mut out = [0.0f32; CHANNELS];
                for ch in 0..CHANNELS {
                    out[ch] = (px[ch] / 255.0 - RGB_MEANS[ch]) / RGB_STDS[ch];
                }
                out
            })
            .collect(),
    };
    Ok(PreparedTensor {
        height: q.height,
        width: q.width,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(side: usize, v: f32) -> ImageTensor {
        ImageTensor::new(side, side, vec![v; side * side * CHANNELS]).unwrap()
    }

    fn ramp() -> ImageTensor {
        // value(r, c) = 448·r + c stored as base-256 digits across channels.
        let data: Vec<f32> = (0..CANONICAL_SIDE * CANONICAL_SIDE)
            .flat_map(|i| [(i % 256) as f32, ((i / 256) % 256) as f32, (i / 65536) as f32])
            .collect();
        ImageTensor::new(CANONICAL_SIDE, CANONICAL_SIDE, data).unwrap()
    }

    #[test]
    fn constant_upscale_stays_constant() {
        let src = constant(2, 7.0);
        let out = resize_bilinear(&src, CANONICAL_SIDE, CANONICAL_SIDE).unwrap();
        assert_eq!(out.height(), 448);
        assert!(out.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = ramp();
        assert_eq!(resize_bilinear(&img, 448, 448).unwrap(), img);
    }

    #[test]
    fn half_downscale_is_box_average() {
        let img = ImageTensor::from_fn(4, 4, |r, c, _| (r * 4 + c) as f32).unwrap();
        let out = resize_bilinear(&img, 2, 2).unwrap();
        // top-left block {0,1,4,5}
        assert!((out.get(0, 0, 0) - 2.5).abs() < 1e-6);
        assert!((out.get(1, 1, 1) - 12.5).abs() < 1e-6);
    }

    #[test]
    fn zero_area_rejected() {
        assert!(matches!(
            ImageTensor::new(0, 4, vec![]),
            Err(Error::InvalidInput(_))
        ));
        assert!(resize_bilinear(&constant(2, 1.0), 0, 3).is_err());
    }

    #[test]
    fn slicing_index_arithmetic() {
        assert_eq!(quadrant_of(300, 100), (2, 76, 100));
        assert_eq!(quadrant_of(0, 224), (1, 0, 0));
        assert_eq!(quadrant_of(447, 447), (3, 223, 223));
    }

    fn ramp_value(t: &ImageTensor, r: usize, c: usize) -> usize {
        t.get(r, c, 0) as usize + 256 * t.get(r, c, 1) as usize + 65536 * t.get(r, c, 2) as usize
    }

    #[test]
    fn quadrant_one_origin_reads_generator_at_0_224() {
        let img = ramp();
        let qs = slice_quadrants(&img).unwrap();
        assert_eq!(ramp_value(qs.get(1).unwrap(), 0, 0), 224);
        assert_eq!(ramp_value(qs.get(2).unwrap(), 76, 100), 448 * 300 + 100);
    }

    #[test]
    fn slicing_constant_image() {
        let qs = slice_quadrants(&constant(448, 42.0)).unwrap();
        for q in qs.quadrants() {
            assert_eq!(q.height(), 224);
            assert!(q.data().iter().all(|&v| v == 42.0));
        }
    }

    #[test]
    fn slicing_rejects_wrong_shape() {
        let err = slice_quadrants(&constant(256, 0.0)).unwrap_err();
        assert!(err.to_string().contains("256x256"));
    }

    #[test]
    fn reassembly_is_exact() {
        let img = ramp();
        assert_eq!(slice_quadrants(&img).unwrap().reassemble(), img);
    }

    #[test]
    fn scale_symmetric_endpoints() {
        let lo = preprocess(&constant(224, 0.0), PreprocessMode::ScaleSymmetric).unwrap();
        assert!(lo.data.iter().all(|&v| v == -1.0));
        let hi = preprocess(&constant(224, 255.0), PreprocessMode::ScaleSymmetric).unwrap();
        assert!(hi.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mean_subtract_bgr_red_pixel() {
        let red = ImageTensor::from_fn(224, 224, |_, _, ch| if ch == 0 { 255.0 } else { 0.0 })
            .unwrap();
        let out = preprocess(&red, PreprocessMode::MeanSubtractBgr).unwrap();
        let px = &out.data[..3];
        assert!((px[0] + 103.939).abs() < 1e-4);
        assert!((px[1] + 116.779).abs() < 1e-4);
        assert!((px[2] - 131.32).abs() < 1e-4);
    }

    #[test]
    fn scale_normalize_and_identity() {
        let img = constant(224, 255.0);
        let out = preprocess(&img, PreprocessMode::ScaleNormalize).unwrap();
        assert!((out.data[0] - (1.0 - 0.485) / 0.229).abs() < 1e-5);
        assert!((out.data[2] - (1.0 - 0.406) / 0.225).abs() < 1e-5);
        let id = preprocess(&img, PreprocessMode::Identity).unwrap();
        assert_eq!(id.data, img.data());
        assert!(preprocess(&constant(448, 0.0), PreprocessMode::Identity).is_err());
    }

    proptest! {
        #[test]
        fn scale_symmetric_range(v in 0.0f32..=255.0) {
            let out = preprocess(&constant(224, v), PreprocessMode::ScaleSymmetric).unwrap();
            prop_assert!(out.data.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }
}
