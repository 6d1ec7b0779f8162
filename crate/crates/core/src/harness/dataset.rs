use std::path::{Path, PathBuf};

use crate::backbones::{extract_features, extract_whole_image, Backbone, QuadrantAssignment};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::imaging::{load_and_resize, ImageTensor};
use crate::par;
use crate::store::{FeatureStore, StoredSample};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassImages {
    pub name: String,
    pub files: Vec<PathBuf>,
}

/// Image files grouped by class, classes and files in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<ClassImages>,
}

impl DatasetManifest {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn counts(&self) -> Vec<(String, usize)> {
        self.classes
            .iter()
            .map(|c| (c.name.clone(), c.files.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.files.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops the named classes. Every name must exist.
    pub fn without(&self, excluded: &[String]) -> Result<Self> {
        for name in excluded {
            if !self.classes.iter().any(|c| &c.name == name) {
                return Err(Error::config(format!(
                    "class directory `{name}` not found under {}",
                    self.root.display()
                )));
            }
        }
        Ok(Self {
            root: self.root.clone(),
            classes: self
                .classes
                .iter()
                .filter(|c| !excluded.contains(&c.name))
                .cloned()
                .collect(),
        })
    }

    /// `(id, label, path)` for every image; ids are `<class>/<file name>`.
    pub fn entries(&self) -> Vec<(String, usize, &Path)> {
        let mut out = Vec::with_capacity(self.len());
        for (label, class) in self.classes.iter().enumerate() {
            for f in &class.files {
                let file = f.file_name().map(|s| s.to_string_lossy()).unwrap_or_default();
                out.push((format!("{}/{}", class.name, file), label, f.as_path()));
            }
        }
        out
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn ingest_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::config(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::config(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let mut classes = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if files.is_empty() {
            return Err(Error::input(format!("class `{name}` has no images")));
        }
        log::info!("class `{name}`: {} images", files.len());
        classes.push(ClassImages { name, files });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes,
    })
}

fn build_store<F>(manifest: &DatasetManifest, dim: usize, extract: F) -> Result<FeatureStore>
where
    F: Fn(&ImageTensor) -> Result<Vec<f32>> + Sync,
{
    let entries = manifest.entries();
    let vectors = par::map_slice(&entries, |_, (_, _, path)| {
        let img = load_and_resize(path)?;
        extract(&img)
    });
    let mut store = FeatureStore::new(dim, manifest.class_names());
    for ((id, label, _), values) in entries.into_iter().zip(vectors) {
        store.push(StoredSample {
            id,
            label: label as u32,
            values: values?,
        })?;
    }
    Ok(store)
}

/// Runs the quadrant pipeline over every image of the manifest.
pub fn extract_dataset(
    manifest: &DatasetManifest,
    assignment: &QuadrantAssignment,
    registry: &[Backbone],
) -> Result<FeatureStore> {
    let dim = crate::backbones::feature_dim(assignment, registry)?;
    build_store(manifest, dim, |img| extract_features(img, assignment, registry))
}

/// Single-backbone features of every whole image.
pub fn extract_dataset_whole(manifest: &DatasetManifest, backbone: &Backbone) -> Result<FeatureStore> {
    build_store(manifest, backbone.spec().output_channels, |img| {
        extract_whole_image(img, backbone)
    })
}

/// Keeps the named classes of a store, relabeled `0..k` in store order.
pub fn select_classes(store: &FeatureStore, excluded: &[String]) -> Result<(LabeledSet, Vec<String>)> {
    for name in excluded {
        if !store.class_names().contains(name) {
            return Err(Error::config(format!("class `{name}` is not in the feature store")));
        }
    }
    let full = store.to_labeled()?;
    let kept: Vec<usize> = (0..store.class_names().len())
        .filter(|&c| !excluded.contains(&store.class_names()[c]))
        .collect();
    let names: Vec<String> = kept.iter().map(|&c| store.class_names()[c].clone()).collect();
    let rows: Vec<usize> = (0..full.len())
        .filter(|&i| kept.contains(&full.labels[i]))
        .collect();
    let mut set = full.select(&rows);
    set.labels = set
        .labels
        .iter()
        .map(|l| kept.iter().position(|k| k == l).expect("kept label"))
        .collect();
    set.n_classes = kept.len();
    Ok((set, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), b"").unwrap();
    }

    #[test]
    fn ingest_orders_and_filters() {
        let root = tempfile::tempdir().unwrap();
        for class in ["b_class", "a_class"] {
            let d = root.path().join(class);
            std::fs::create_dir(&d).unwrap();
            for f in ["z.png", "a.JPG", "m.jpeg", "notes.txt"] {
                touch(&d, f);
            }
        }
        let m = ingest_dataset(root.path()).unwrap();
        assert_eq!(m.class_names(), vec!["a_class", "b_class"]);
        assert_eq!(m.len(), 6);
        let ids: Vec<String> = m.entries().into_iter().map(|e| e.0).collect();
        assert_eq!(ids[..3], ["a_class/a.JPG", "a_class/m.jpeg", "a_class/z.png"]);
        assert_eq!(ingest_dataset(root.path()).unwrap(), m);
        assert!(m.without(&["missing".into()]).is_err());
        assert_eq!(m.without(&["a_class".into()]).unwrap().class_names(), vec!["b_class"]);
    }

    #[test]
    fn ingest_errors() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_dataset(&root.path().join("nope")), Err(Error::Config(_))));
        assert!(matches!(ingest_dataset(root.path()), Err(Error::Config(_))));
        std::fs::create_dir(root.path().join("empty")).unwrap();
        assert!(matches!(ingest_dataset(root.path()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn select_relabels() {
        let mut store = FeatureStore::new(1, vec!["A".into(), "B".into(), "C".into()]);
        for (i, l) in [0u32, 1, 2, 1, 0].into_iter().enumerate() {
            store
                .push(StoredSample { id: format!("s{i}"), label: l, values: vec![i as f32] })
                .unwrap();
        }
        let (set, names) = select_classes(&store, &["B".into()]).unwrap();
        assert_eq!(names, vec!["A", "C"]);
        assert_eq!(set.labels, vec![0, 1, 0]);
        assert_eq!(set.ids, vec!["s0", "s2", "s4"]);
        assert_eq!(set.n_classes, 2);
        assert!(select_classes(&store, &["Z".into()]).is_err());
    }
}
