//! Chest X-ray classification from quadrant-sliced multi-backbone features.
//!
//! A 448×448 scan is cut into four 224×224 tiles; each tile feeds two frozen
//! pretrained backbones whose globally pooled outputs concatenate into one
//! long vector. An autoencoder compresses the standardized vector and
//! shallow classifiers (softmax perceptrons, an SMO-trained SVM) read the
//! latent code. The [`harness`] repeats split, fit and evaluation over many
//! seeded trials.

pub mod autoencoder;
pub mod backbones;
pub mod classifiers;
pub mod data;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod store;
pub mod tsne;

pub use error::{Error, Result};
