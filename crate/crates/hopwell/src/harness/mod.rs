//! Experiment orchestration: configuration, the train → wells → evaluate
//! pipeline, hyperparameter sweeps, reporting and the verification suite.

mod report;
mod sweep;
pub mod verify;

pub use report::{emit_report, render_table};
pub use sweep::{run_sweep, SweepCell, SweepGrid, SweepOutcome};
pub use verify::{run_verification, VerificationReport, VerifyOptions};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnn::{
    normalize_features_in_place, save_checkpoint, train_cnn, Arch, CnnConfig, CnnError, CnnModel,
    EpochLog, TrainConfig,
};
use crate::dataio::{make_batches, DataError, DatasetSplit, SplitPart};
use crate::energy::{evaluate_batch, EnergyError, EnergyParams, PredictionRecord};
use crate::kmeans::{
    build_wells, group_by_class, well_distances, KmeansConfig, KmeansError, WellDistances, WellSet,
};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Kmeans(#[from] KmeansError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad configuration: {0}")]
    Config(String),
}

fn default_data_dir() -> PathBuf {
    std::env::var_os("HOPWELL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    42
}

fn default_subset_train() -> Option<usize> {
    Some(8000)
}

fn default_subset_test() -> Option<usize> {
    Some(2000)
}

fn default_arch() -> Arch {
    Arch::ThreeLayer
}

fn default_epochs() -> usize {
    3
}

fn default_learning_rate() -> f64 {
    0.001
}

fn default_batch_size() -> usize {
    128
}

fn default_adam_beta1() -> f64 {
    0.9
}

fn default_adam_beta2() -> f64 {
    0.999
}

fn default_adam_epsilon() -> f64 {
    1e-8
}

fn default_wells_per_class() -> usize {
    5
}

fn default_kmeans_n_init() -> usize {
    3
}

fn default_kmeans_max_iter() -> usize {
    300
}

fn default_kmeans_tol() -> f64 {
    1e-4
}

fn default_beta() -> f64 {
    0.01
}

fn default_lambda() -> f64 {
    0.001
}

fn default_eta() -> f64 {
    0.1
}

fn default_descent_max_iter() -> usize {
    50
}

fn default_descent_tol() -> f64 {
    1e-3
}

/// Flat experiment configuration. Unset JSON fields fall back to the
/// desk-scale defaults (8,000/2,000 subsets, three-layer CNN, 3 epochs,
/// K = 5, λ = 0.001, β = 0.01, η = 0.1); `subset_train`/`subset_test`
/// of `null` mean the full splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Master seed; every stage derives its own from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_subset_train")]
    pub subset_train: Option<usize>,
    #[serde(default = "default_subset_test")]
    pub subset_test: Option<usize>,
    #[serde(default = "default_arch")]
    pub arch: Arch,
    /// Architecture default when absent (on for the four-layer stack).
    #[serde(default)]
    pub use_batchnorm: Option<bool>,
    /// Architecture default when absent (0.25 for the four-layer stack).
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_adam_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_epsilon")]
    pub adam_epsilon: f64,
    /// K: clusters per class, so the well count is 10·K.
    #[serde(default = "default_wells_per_class")]
    pub wells_per_class: usize,
    #[serde(default = "default_kmeans_n_init")]
    pub kmeans_n_init: usize,
    #[serde(default = "default_kmeans_max_iter")]
    pub kmeans_max_iter: usize,
    #[serde(default = "default_kmeans_tol")]
    pub kmeans_tol: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_descent_max_iter")]
    pub descent_max_iter: usize,
    #[serde(default = "default_descent_tol")]
    pub descent_tol: f64,
    /// Forces sequential evaluation on top of the already fixed reduction
    /// orders. Runs are bitwise deterministic either way.
    #[serde(default)]
    pub strict_determinism: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults cover every field")
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn cnn_config(&self) -> CnnConfig {
        let mut cfg = CnnConfig::new(self.arch, derive_seed(self.seed, "cnn"));
        if let Some(bn) = self.use_batchnorm {
            cfg.use_batchnorm = bn;
        }
        if let Some(rate) = self.dropout {
            cfg.dropout_rate = rate;
        }
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            seed: derive_seed(self.seed, "train"),
        }
    }

    pub fn kmeans_config(&self) -> KmeansConfig {
        KmeansConfig {
            k: self.wells_per_class,
            n_init: self.kmeans_n_init,
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            seed: derive_seed(self.seed, "kmeans"),
        }
    }

    pub fn energy_params(&self) -> EnergyParams {
        EnergyParams {
            beta: self.beta,
            lambda: self.lambda,
            eta: self.eta,
            max_iter: self.descent_max_iter,
            tol: self.descent_tol,
        }
    }

    pub fn load_split(&self) -> Result<DatasetSplit, DataError> {
        DatasetSplit::load(
            &self.data_dir,
            self.subset_train,
            self.subset_test,
            derive_seed(self.seed, "data"),
        )
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 {
            return Err(PipelineError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        if self.wells_per_class == 0 {
            return Err(PipelineError::Config("wells_per_class must be >= 1".into()));
        }
        if let Some(rate) = self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return Err(PipelineError::Config("dropout must be in [0, 1)".into()));
            }
        }
        self.energy_params()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Cells sharing this key can reuse a trained checkpoint and its
    /// extracted features during a sweep.
    pub(crate) fn training_key(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{}|{:?}|{:?}|{}|{}|{}|{}|{}|{}",
            self.data_dir,
            self.subset_train,
            self.subset_test,
            self.seed,
            self.arch,
            (self.use_batchnorm, self.dropout),
            self.epochs,
            self.learning_rate,
            self.batch_size,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
        )
    }

    /// Cells sharing this key (and a training key) reuse the same wells.
    pub(crate) fn wells_key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.wells_per_class, self.kmeans_n_init, self.kmeans_max_iter, self.kmeans_tol
        )
    }
}

/// Wall-clock seconds per pipeline stage. Excluded from determinism
/// comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load_s: f64,
    pub train_s: f64,
    pub features_s: f64,
    pub wells_s: f64,
    pub eval_s: f64,
}

/// One Table-style result row plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub num_wells: usize,
    pub test_accuracy: f64,
    pub well_min_distance: f64,
    pub well_mean_distance: f64,
    pub convergence_rate: f64,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub train_log: Vec<EpochLog>,
    pub timings: StageTimings,
}

impl ExperimentReport {
    /// Serialized form with timings zeroed; two strict-determinism runs of
    /// the same config must agree on this byte-for-byte.
    pub fn determinism_key(&self) -> String {
        let mut clone = self.clone();
        clone.timings = StageTimings::default();
        serde_json::to_string(&clone).expect("report serializes")
    }
}

/// Extracts evaluation-mode features for a whole split part, row order
/// preserved, each row normalized to unit length. Returns the per-row
/// degenerate flags alongside.
pub fn extract_features(
    model: &CnnModel,
    part: &SplitPart,
    batch_size: usize,
) -> Result<(Array2<f32>, Vec<bool>), CnnError> {
    let batches = make_batches(part, batch_size, None)?;
    let chunks: Vec<Array2<f32>> = batches
        .par_iter()
        .map(|batch| model.net.forward_features(batch.pixels.view()))
        .collect::<Result<_, _>>()?;
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    let mut features =
        concatenate(Axis(0), &views).expect("feature chunks share their column count");
    let flags = normalize_features_in_place(&mut features)?;
    Ok((features, flags))
}

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let wrap = |source: std::io::Error| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(wrap)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| PipelineError::Config(format!("bad artifact path {path:?}")))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(wrap)?;
    fs::rename(&tmp, path).map_err(wrap)?;
    Ok(())
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>, PipelineError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub(crate) struct EvalSummary {
    pub accuracy: f64,
    pub convergence_rate: f64,
    pub records: Vec<PredictionRecord>,
}

pub(crate) fn evaluate_features(
    features: &Array2<f32>,
    labels: &[u8],
    wells: &WellSet,
    params: &EnergyParams,
    strict: bool,
) -> Result<EvalSummary, EnergyError> {
    let run = || evaluate_batch(features.view(), labels, wells, params);
    let eval = if strict {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        pool.install(run)?
    } else {
        run()?
    };
    let records = eval
        .predictions
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (p, &label))| PredictionRecord {
            index,
            label,
            pred: p.class,
            converged: p.converged,
            iters: p.iterations_used,
        })
        .collect();
    Ok(EvalSummary {
        accuracy: eval.accuracy,
        convergence_rate: eval.convergence_rate,
        records,
    })
}

pub(crate) struct PipelineArtifacts {
    pub model: CnnModel,
    pub train_log: Vec<EpochLog>,
    pub wells: WellSet,
    pub distances: WellDistances,
    pub eval: EvalSummary,
    pub timings: StageTimings,
}

pub(crate) fn run_pipeline_in_memory(
    cfg: &ExperimentConfig,
) -> Result<PipelineArtifacts, PipelineError> {
    cfg.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let split = cfg.load_split()?;
    timings.load_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (model, train_log) = train_cnn(&split, &cfg.cnn_config(), &cfg.train_config())?;
    timings.train_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (train_features, _) = extract_features(&model, &split.train, cfg.batch_size)?;
    let (test_features, _) = extract_features(&model, &split.test, cfg.batch_size)?;
    timings.features_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let by_class = group_by_class(train_features.view(), &split.train.labels);
    let wells = build_wells(&by_class, &cfg.kmeans_config())?;
    let distances = well_distances(&wells)?;
    timings.wells_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let eval = evaluate_features(
        &test_features,
        &split.test.labels,
        &wells,
        &cfg.energy_params(),
        cfg.strict_determinism,
    )?;
    timings.eval_s = t.elapsed().as_secs_f64();

    Ok(PipelineArtifacts {
        model,
        train_log,
        wells,
        distances,
        eval,
        timings,
    })
}

/// Full experiment: train → extract features → build wells → evaluate →
/// well distances. Writes checkpoint, wells, logs, predictions and the
/// report under `cfg.out_dir` (each file atomically), then returns the
/// report.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    let artifacts = run_pipeline_in_memory(cfg)?;
    let report = report_from_artifacts(cfg, &artifacts);

    let out = &cfg.out_dir;
    write_atomic(&out.join("cnn.hwcn"), &save_checkpoint(&artifacts.model))?;
    write_atomic(&out.join("wells.hwwl"), &artifacts.wells.to_bytes())?;
    write_atomic(&out.join("train_log.jsonl"), &jsonl(&artifacts.train_log)?)?;
    write_atomic(&out.join("predictions.jsonl"), &jsonl(&artifacts.eval.records)?)?;
    write_atomic(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    write_atomic(
        &out.join("report.txt"),
        render_table(std::slice::from_ref(&report)).as_bytes(),
    )?;
    Ok(report)
}

pub(crate) fn report_from_artifacts(
    cfg: &ExperimentConfig,
    artifacts: &PipelineArtifacts,
) -> ExperimentReport {
    let last = artifacts.train_log.last();
    ExperimentReport {
        config: cfg.clone(),
        num_wells: artifacts.wells.len(),
        test_accuracy: artifacts.eval.accuracy,
        well_min_distance: artifacts.distances.min,
        well_mean_distance: artifacts.distances.mean,
        convergence_rate: artifacts.eval.convergence_rate,
        final_train_loss: last.map(|l| l.train_loss).unwrap_or(f64::NAN),
        final_train_acc: last.map(|l| l.train_acc).unwrap_or(f64::NAN),
        train_log: artifacts.train_log.clone(),
        timings: artifacts.timings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.subset_train, Some(8000));
        assert_eq!(cfg.subset_test, Some(2000));
        assert_eq!(cfg.arch, Arch::ThreeLayer);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.wells_per_class, 5);
        assert_eq!(cfg.lambda, 0.001);
        assert_eq!(cfg.beta, 0.01);
        assert_eq!(cfg.eta, 0.1);
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_uses_defaults_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::from_json(r#"{"beta": 0.05, "epochs": 7}"#).unwrap();
        assert_eq!(cfg.beta, 0.05);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lambda, 0.001);
        assert!(ExperimentConfig::from_json(r#"{"betaa": 0.05}"#).is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = ExperimentConfig::default();
        let cnn = cfg.cnn_config().seed;
        let train = cfg.train_config().seed;
        let km = cfg.kmeans_config().seed;
        assert_ne!(cnn, train);
        assert_ne!(train, km);
        assert_ne!(cnn, km);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.bin");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        // no temp litter left behind
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let bad = [
            ExperimentConfig { epochs: 0, ..ExperimentConfig::default() },
            ExperimentConfig { beta: -1.0, ..ExperimentConfig::default() },
            ExperimentConfig { dropout: Some(1.0), ..ExperimentConfig::default() },
            ExperimentConfig { wells_per_class: 0, ..ExperimentConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        }
    }
}
