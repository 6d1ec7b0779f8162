#![allow(dead_code)]

use std::path::{Path, PathBuf};

use drfg::backbones::{BackboneSpec, StubGraph, DEFAULT_BACKBONES};
use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [&str; 3] = ["COVID", "Normal", "Viral Pneumonia"];

/// Writes `per_class` 256×256 grayscale PNGs per class under `root`. Each
/// class has its own stripe orientation plus seeded noise.
pub fn write_stub_dataset(root: &Path, per_class: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (c, class) in CLASSES.iter().enumerate() {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let phase: f32 = rng.random_range(0.0..6.28);
            let noise_seed: u64 = rng.random();
            let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
            let img = GrayImage::from_fn(256, 256, |x, y| {
                let t = match c {
                    0 => x as f32,
                    1 => y as f32,
                    _ => (x + y) as f32 * 0.7,
                };
                let v = 128.0 + 70.0 * (t / 9.0 + phase).sin() + noise.random_range(-25.0..25.0);
                Luma([v.clamp(0.0, 255.0) as u8])
            });
            img.save(dir.join(format!("img_{i:03}.png"))).unwrap();
        }
    }
}

/// The eight default backbone names as seeded projection stubs.
pub fn projection_registry(channels: usize) -> Vec<BackboneSpec> {
    DEFAULT_BACKBONES
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            BackboneSpec::stub(
                name,
                StubGraph::Projection {
                    seed: 100 + i as u64,
                    grid: 7,
                },
                channels,
            )
        })
        .collect()
}

/// Writes a small three-class experiment config next to a stub dataset and
/// returns its path.
pub fn write_stub_config(dir: &Path, n_trials: usize, master_seed: u64) -> PathBuf {
    let registry = serde_json::to_value(projection_registry(16)).unwrap();
    let cfg = serde_json::json!({
        "task": "three_class",
        "n_trials": n_trials,
        "master_seed": master_seed,
        "dataset_dir": "data",
        "feature_store": "features.drfg",
        "registry": registry,
        "autoencoder": { "hidden_dim": 32, "latent_dim": 8 },
        "autoencoder_train": { "epochs": 5 },
        "classifier": { "train": { "epochs": 10 }, "mlp_hidden_dim": 16 },
        "tsne": { "iterations": 250 },
        "output_dir": "runs"
    });
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}
