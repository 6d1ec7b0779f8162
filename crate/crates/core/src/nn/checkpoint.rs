//! Network checkpoints.
//!
//! ```text
//! u32 header_len (LE) | header_len bytes of JSON | per layer: out×in f32 weights (row-major), out f32 biases
//! ```
//!
//! Parameters are narrowed to `f32` on save.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{Activation, DenseLayer, DenseNetwork};
use crate::error::{Error, Result};

const FORMAT: &str = "drfg-dense";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    input: usize,
    output: usize,
    activation: Activation,
}

pub fn write_checkpoint<W: Write>(net: &DenseNetwork, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        seed: net.seed(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerHeader {
                input: l.in_dim(),
                output: l.out_dim(),
                activation: l.activation,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for l in net.layers() {
        for v in l.weights.iter().chain(l.bias.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<DenseNetwork> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::format(origin, "truncated header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::format(origin, "truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::format(origin, "not a dense-network checkpoint"));
    }
    let mut read_f32s = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(origin, "truncated parameter blob"))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for l in &header.layers {
        let weights = Array2::from_shape_vec((l.output, l.input), read_f32s(l.output * l.input)?)
            .map_err(|e| Error::format(origin, e.to_string()))?;
        let bias = Array1::from(read_f32s(l.output)?);
        layers.push(DenseLayer {
            weights,
            bias,
            activation: l.activation,
        });
    }
    DenseNetwork::from_layers(layers, header.seed)
}

pub fn save_checkpoint(net: &DenseNetwork, path: &Path) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<DenseNetwork> {
    read_checkpoint(BufReader::new(File::open(path)?), path)
}
