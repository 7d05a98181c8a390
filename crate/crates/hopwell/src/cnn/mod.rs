//! Convolutional feature extractor: architecture presets, training,
//! unit-norm feature extraction and checkpointing.

mod checkpoint;
mod layers;
mod network;
mod scalar;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use network::{mnist_stack, Cnn, ConvSpec, DropoutPlan, ForwardTape, Gradients, StackSpec};
pub use scalar::Scalar;
pub use train::{accuracy, cross_entropy, softmax_ce_grad, train_cnn, AdamState, EpochLog};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DataError;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Architecture presets named by their filter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// conv(1→32) → ReLU → pool; feature dim 6272.
    OneLayer,
    /// 16→32→64; feature dim 3136.
    ThreeLayer,
    /// 32→64→128; feature dim 6272.
    ThreeLayerWide,
    /// 32→64→128→256 with batch norm and dropout; feature dim 2304.
    FourLayer,
}

impl Arch {
    pub fn filters(self) -> &'static [usize] {
        match self {
            Arch::OneLayer => &[32],
            Arch::ThreeLayer => &[16, 32, 64],
            Arch::ThreeLayerWide => &[32, 64, 128],
            Arch::FourLayer => &[32, 64, 128, 256],
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            Arch::OneLayer => 6272,
            Arch::ThreeLayer => 3136,
            Arch::ThreeLayerWide => 6272,
            Arch::FourLayer => 2304,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Arch::OneLayer => 0,
            Arch::ThreeLayer => 1,
            Arch::ThreeLayerWide => 2,
            Arch::FourLayer => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Arch::OneLayer),
            1 => Some(Arch::ThreeLayer),
            2 => Some(Arch::ThreeLayerWide),
            3 => Some(Arch::FourLayer),
            _ => None,
        }
    }
}

impl std::fmt::Display for Arch {
    /// Table-style filter notation, e.g. `16→32→64`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.filters().iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join("→"))
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one_layer" => Ok(Arch::OneLayer),
            "three_layer" => Ok(Arch::ThreeLayer),
            "three_layer_wide" => Ok(Arch::ThreeLayerWide),
            "four_layer" => Ok(Arch::FourLayer),
            other => Err(format!(
                "unknown arch '{other}' (expected one_layer, three_layer, three_layer_wide or four_layer)"
            )),
        }
    }
}

/// Feature-extractor configuration.
///
/// Defaults follow the architecture: batch norm and dropout 0.25 for the
/// four-layer stack, both off elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub arch: Arch,
    pub use_batchnorm: bool,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl CnnConfig {
    pub fn new(arch: Arch, seed: u64) -> Self {
        let four = matches!(arch, Arch::FourLayer);
        Self {
            arch,
            use_batchnorm: four,
            dropout_rate: if four { 0.25 } else { 0.0 },
            seed,
        }
    }

    /// Expands the preset into the block-level stack description.
    /// Pooling runs after every conv except the last of the multi-layer
    /// stacks (28→14→7 for three layers, 28→14→7→3 for four); dropout
    /// applies only after pooled blocks.
    pub fn stack_spec(&self) -> StackSpec {
        assert!(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout_rate must be in [0, 1)"
        );
        let filters = self.arch.filters();
        let convs = filters
            .iter()
            .enumerate()
            .map(|(i, &out_channels)| {
                let pool = match self.arch {
                    Arch::OneLayer => true,
                    _ => i + 1 < filters.len(),
                };
                ConvSpec {
                    out_channels,
                    batchnorm: self.use_batchnorm,
                    pool,
                    dropout: if pool { self.dropout_rate } else { 0.0 },
                }
            })
            .collect();
        mnist_stack(convs)
    }
}

/// Pre-training hyperparameters (standard Adam defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate: 0.001,
            batch_size: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed,
        }
    }
}

/// A trained feature extractor plus the configuration that built it.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub net: Cnn<f32>,
}

impl CnnModel {
    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim()
    }
}

/// Glorot-initialized model from a config (deterministic under its seed).
pub fn init_glorot(config: &CnnConfig) -> CnnModel {
    let net = Cnn::<f32>::glorot(
        config.stack_spec(),
        crate::seeds::derive_seed(config.seed, "glorot-init"),
    );
    CnnModel {
        config: config.clone(),
        net,
    }
}

/// A unit-norm feature vector; `degenerate` marks the zero-guard case.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub degenerate: bool,
}

/// Norm threshold below which a feature vector is zeroed and flagged.
/// At this cutoff the `+1e-8` in the denominator shifts the output norm by
/// at most 1e-5, which keeps non-degenerate outputs unit within 1e-5.
const DEGENERATE_NORM: f64 = 1e-3;

/// Scales a raw feature vector to unit norm: `f / (||f|| + 1e-8)`.
/// Near-zero vectors come back as exact zeros with the degenerate flag.
pub fn normalize_feature(raw: &[f32]) -> Result<FeatureVector, CnnError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(CnnError::NonFiniteInput);
    }
    let norm = raw.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        return Ok(FeatureVector {
            values: vec![0.0; raw.len()],
            degenerate: true,
        });
    }
    let scale = (1.0 / (norm + 1e-8)) as f32;
    Ok(FeatureVector {
        values: raw.iter().map(|&v| v * scale).collect(),
        degenerate: false,
    })
}

/// Row-wise in-place normalization of a feature matrix; returns per-row
/// degenerate flags.
pub fn normalize_features_in_place(feats: &mut Array2<f32>) -> Result<Vec<bool>, CnnError> {
    let mut flags = Vec::with_capacity(feats.nrows());
    for mut row in feats.rows_mut() {
        let slice = row.as_slice_mut().expect("contiguous feature row");
        if slice.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::NonFiniteInput);
        }
        let norm = slice.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            slice.fill(0.0);
            flags.push(true);
        } else {
            let scale = (1.0 / (norm + 1e-8)) as f32;
            for v in slice.iter_mut() {
                *v *= scale;
            }
            flags.push(false);
        }
    }
    Ok(flags)
}
