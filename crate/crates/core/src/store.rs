//! On-disk feature store.
//!
//! Binary body, little-endian:
//!
//! ```text
//! b"DRFG" | u32 version = 1 | u32 n_samples | u32 dim | u32 n_classes
//! n_samples × ( u32 label | dim × f32 )
//! ```
//!
//! A JSON sidecar at `<path>.json` names the classes and lists sample ids in
//! body order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DRFG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub id: String,
    pub label: u32,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    class_names: Vec<String>,
    samples: Vec<StoredSample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    dim: usize,
    classes: Vec<String>,
    sample_ids: Vec<String>,
}

impl FeatureStore {
    pub fn new(dim: usize, class_names: Vec<String>) -> Self {
        Self {
            dim,
            class_names,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: StoredSample) -> Result<()> {
        if sample.values.len() != self.dim {
            return Err(Error::shape(format!(
                "sample {} has {} values, store dim is {}",
                sample.id,
                sample.values.len(),
                self.dim
            )));
        }
        if sample.label as usize >= self.class_names.len() {
            return Err(Error::input(format!(
                "sample {} has label {} but only {} classes",
                sample.id,
                sample.label,
                self.class_names.len()
            )));
        }
        if sample.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("sample {} has non-finite values", sample.id)));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[StoredSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Builds a store from an in-memory set, narrowing values to `f32`.
    pub fn from_labeled(set: &LabeledSet, class_names: Vec<String>) -> Result<Self> {
        let mut store = Self::new(set.dim(), class_names);
        for (i, row) in set.features.rows().into_iter().enumerate() {
            store.push(StoredSample {
                id: set.ids[i].clone(),
                label: set.labels[i] as u32,
                values: row.iter().map(|&v| v as f32).collect(),
            })?;
        }
        Ok(store)
    }

    pub fn to_labeled(&self) -> Result<LabeledSet> {
        let mut features = Array2::zeros((self.len(), self.dim));
        for (mut row, s) in features.rows_mut().into_iter().zip(&self.samples) {
            for (dst, &v) in row.iter_mut().zip(&s.values) {
                *dst = f64::from(v);
            }
        }
        LabeledSet::new(
            self.samples.iter().map(|s| s.id.clone()).collect(),
            self.samples.iter().map(|s| s.label as usize).collect(),
            features,
            self.class_names.len(),
        )
    }

    pub fn write_body<W: Write>(&self, mut w: W) -> Result<()> {
        let count = |n: usize, what: &str| {
            u32::try_from(n).map_err(|_| Error::input(format!("{what} {n} exceeds u32")))
        };
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&count(self.len(), "sample count")?.to_le_bytes())?;
        w.write_all(&count(self.dim, "dim")?.to_le_bytes())?;
        w.write_all(&count(self.class_names.len(), "class count")?.to_le_bytes())?;
        for s in &self.samples {
            w.write_all(&s.label.to_le_bytes())?;
            for v in &s.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a body. Sample ids and class names are synthesized
    /// (`sample-<i>`, `class-<k>`) since they live in the sidecar.
    pub fn read_body<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(origin, "truncated header"))?;
        if magic != MAGIC {
            return Err(Error::format(origin, format!("bad magic {magic:?}")));
        }
        let mut u32_at = |what: &str| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| Error::format(origin, format!("truncated while reading {what}")))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_at("version")?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let n = u32_at("sample count")? as usize;
        let dim = u32_at("dim")? as usize;
        let k = u32_at("class count")? as usize;
        let mut store = Self::new(dim, (0..k).map(|i| format!("class-{i}")).collect());
        let mut buf = vec![0u8; 4 + 4 * dim];
        for i in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::format(origin, format!("truncated at sample {i}")))?;
            let label = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes"));
            let values = buf[4..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            store
                .push(StoredSample {
                    id: format!("sample-{i}"),
                    label,
                    values,
                })
                .map_err(|e| Error::format(origin, e.to_string()))?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format(origin, "trailing bytes after last sample"));
        }
        Ok(store)
    }

    /// Writes the body to `path` and the sidecar next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.write_body(BufWriter::new(File::create(path)?))?;
        let sidecar = Sidecar {
            format: String::from_utf8_lossy(&MAGIC).into_owned(),
            version: VERSION,
            dim: self.dim,
            classes: self.class_names.clone(),
            sample_ids: self.samples.iter().map(|s| s.id.clone()).collect(),
        };
        let f = BufWriter::new(File::create(Self::sidecar_path(path))?);
        serde_json::to_writer_pretty(f, &sidecar)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut store = Self::read_body(BufReader::new(File::open(path)?), path)?;
        let side_path = Self::sidecar_path(path);
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(
            File::open(&side_path).map_err(|e| {
                Error::format(&side_path, format!("missing sidecar manifest: {e}"))
            })?,
        ))?;
        if sidecar.dim != store.dim
            || sidecar.classes.len() != store.class_names.len()
            || sidecar.sample_ids.len() != store.len()
        {
            return Err(Error::format(
                &side_path,
                "sidecar does not match the binary header",
            ));
        }
        store.class_names = sidecar.classes;
        for (s, id) in store.samples.iter_mut().zip(sidecar.sample_ids) {
            s.id = id;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str, label: u32, values: Vec<f32>) -> StoredSample {
        StoredSample {
            id: id.into(),
            label,
            values,
        }
    }

    #[test]
    fn exact_byte_layout() {
        let mut s = FeatureStore::new(2, vec!["a".into(), "b".into()]);
        s.push(sample("x", 1, vec![1.0, -2.5])).unwrap();
        let mut bytes = Vec::new();
        s.write_body(&mut bytes).unwrap();
        let mut expected = b"DRFG".to_vec();
        for v in [1u32, 1, 2, 2, 1] {
            expected.extend(v.to_le_bytes());
        }
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_samples() {
        let mut s = FeatureStore::new(2, vec!["a".into()]);
        assert!(s.push(sample("x", 0, vec![1.0])).is_err());
        assert!(s.push(sample("x", 1, vec![1.0, 2.0])).is_err());
        assert!(s.push(sample("x", 0, vec![f32::NAN, 2.0])).is_err());
    }

    #[test]
    fn rejects_corrupt_bodies() {
        let p = Path::new("mem");
        assert!(FeatureStore::read_body(&b"NOPE"[..], p).is_err());
        let mut s = FeatureStore::new(1, vec!["a".into()]);
        s.push(sample("x", 0, vec![1.0])).unwrap();
        let mut bytes = Vec::new();
        s.write_body(&mut bytes).unwrap();
        assert!(FeatureStore::read_body(&bytes[..bytes.len() - 1], p).is_err());
        bytes.push(0);
        assert!(FeatureStore::read_body(&bytes[..], p).is_err());
    }

    #[test]
    fn file_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.drfg");
        let mut s = FeatureStore::new(3, vec!["COVID".into(), "Normal".into()]);
        s.push(sample("COVID/1.png", 0, vec![0.0, 1.0, 2.0])).unwrap();
        s.push(sample("Normal/7.png", 1, vec![3.0, 4.0, 5.0])).unwrap();
        s.write(&path).unwrap();
        assert!(dir.path().join("feat.drfg.json").is_file());
        assert_eq!(FeatureStore::read(&path).unwrap(), s);
        let set = s.to_labeled().unwrap();
        assert_eq!(set.labels, vec![0, 1]);
        assert_eq!(set.features[[1, 2]], 5.0);
    }

    proptest! {
        #[test]
        fn body_roundtrip(
            dim in 1usize..6,
            rows in proptest::collection::vec((0u32..3, proptest::collection::vec(-1e6f32..1e6, 6)), 0..8),
        ) {
            let mut s = FeatureStore::new(dim, vec!["a".into(), "b".into(), "c".into()]);
            for (i, (label, vals)) in rows.iter().enumerate() {
                s.push(sample(&format!("sample-{i}"), *label, vals[..dim].to_vec())).unwrap();
            }
            let mut bytes = Vec::new();
            s.write_body(&mut bytes).unwrap();
            prop_assert_eq!(bytes.len(), 20 + rows.len() * (4 + 4 * dim));
            let back = FeatureStore::read_body(&bytes[..], Path::new("mem")).unwrap();
            prop_assert_eq!(back.samples(), s.samples());
        }
    }
}
