//! Hybrid CNN + multi-well Hopfield energy classifier for MNIST.
//!
//! The pipeline has four stages:
//!
//! 1. [`dataio`] parses the MNIST IDX files and produces normalized,
//!    deterministically shuffled image batches.
//! 2. [`cnn`] trains a small convolutional network on CPU and turns images
//!    into unit-norm feature vectors.
//! 3. [`kmeans`] clusters per-class features into prototype "wells"
//!    (normalized centroid + one-hot class vector).
//! 4. [`energy`] classifies a feature vector by gradient descent of a
//!    multi-well energy surface over the 10-dimensional class output.
//!
//! [`harness`] orchestrates the stages into reproducible experiments,
//! hyperparameter sweeps and a self-contained verification suite.

pub mod cnn;
pub mod dataio;
pub mod energy;
pub mod harness;
pub mod kmeans;
pub mod seeds;

pub use cnn::{Arch, CnnConfig, CnnModel, FeatureVector, TrainConfig};
pub use dataio::{DatasetSplit, ImageBatch};
pub use energy::{EnergyParams, Prediction};
pub use harness::{ExperimentConfig, ExperimentReport};
pub use kmeans::{KmeansConfig, Well, WellSet};
