//! Hyperparameter sweeps: Cartesian grids over the tuning dimensions, with
//! the CNN retrained only when its inputs change. Energy-only cells reuse
//! both the checkpoint and the wells.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_features, extract_features, report_from_artifacts, ExperimentConfig,
    ExperimentReport, PipelineArtifacts, PipelineError, StageTimings,
};
use crate::cnn::{train_cnn, Arch, CnnModel, EpochLog};
use crate::kmeans::{build_wells, group_by_class, well_distances, WellDistances, WellSet};

/// Parameter lists to sweep; absent fields keep the base config's value.
/// The Cartesian product runs in a fixed nested order (arch, epochs,
/// learning rate, wells, λ, β, η).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub arch: Option<Vec<Arch>>,
    #[serde(default)]
    pub epochs: Option<Vec<usize>>,
    #[serde(default)]
    pub learning_rate: Option<Vec<f64>>,
    #[serde(default)]
    pub wells_per_class: Option<Vec<usize>>,
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
}

impl SweepGrid {
    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(json)?)
    }

    fn is_empty(&self) -> bool {
        fn empty<T>(v: &Option<Vec<T>>) -> bool {
            v.as_ref().map(|v| v.is_empty()).unwrap_or(true)
        }
        empty(&self.arch)
            && empty(&self.epochs)
            && empty(&self.learning_rate)
            && empty(&self.wells_per_class)
            && empty(&self.lambda)
            && empty(&self.beta)
            && empty(&self.eta)
    }

    /// Expands the grid against a base config into the full cell list.
    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>, PipelineError> {
        if self.is_empty() {
            return Err(PipelineError::Config("sweep grid is empty".into()));
        }
        fn axis<T: Clone>(list: &Option<Vec<T>>, fallback: T) -> Vec<T> {
            match list {
                Some(v) if !v.is_empty() => v.clone(),
                _ => vec![fallback],
            }
        }
        let mut cells = Vec::new();
        for &arch in &axis(&self.arch, base.arch) {
            for &epochs in &axis(&self.epochs, base.epochs) {
                for &learning_rate in &axis(&self.learning_rate, base.learning_rate) {
                    for &wells_per_class in &axis(&self.wells_per_class, base.wells_per_class) {
                        for &lambda in &axis(&self.lambda, base.lambda) {
                            for &beta in &axis(&self.beta, base.beta) {
                                for &eta in &axis(&self.eta, base.eta) {
                                    let mut cfg = base.clone();
                                    cfg.arch = arch;
                                    cfg.epochs = epochs;
                                    cfg.learning_rate = learning_rate;
                                    cfg.wells_per_class = wells_per_class;
                                    cfg.lambda = lambda;
                                    cfg.beta = beta;
                                    cfg.eta = eta;
                                    cells.push(cfg);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One sweep cell: its config and either a report or the error that
/// stopped it (the sweep continues past failures).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub config: ExperimentConfig,
    pub report: Option<ExperimentReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// How many times the CNN was actually trained.
    pub trainings: usize,
}

impl SweepOutcome {
    pub fn reports(&self) -> Vec<ExperimentReport> {
        self.cells.iter().filter_map(|c| c.report.clone()).collect()
    }
}

struct TrainedCache {
    key: String,
    model: CnnModel,
    train_log: Vec<EpochLog>,
    train_features: Array2<f32>,
    train_labels: Vec<u8>,
    test_features: Array2<f32>,
    test_labels: Vec<u8>,
}

struct WellsCache {
    key: String,
    wells: WellSet,
    distances: WellDistances,
}

/// Runs the Cartesian product of `grid` over `base`. Consecutive cells
/// sharing training inputs reuse the checkpoint and features; cells that
/// also share clustering inputs reuse the wells.
pub fn run_sweep(
    base: &ExperimentConfig,
    grid: &SweepGrid,
) -> Result<SweepOutcome, PipelineError> {
    let cells = grid.cells(base)?;
    let mut out = Vec::with_capacity(cells.len());
    let mut trained: Option<TrainedCache> = None;
    let mut wells_cache: Option<WellsCache> = None;
    let mut trainings = 0usize;
    for cfg in cells {
        match run_cell(&cfg, &mut trained, &mut wells_cache, &mut trainings) {
            Ok(report) => out.push(SweepCell {
                config: cfg,
                report: Some(report),
                error: None,
            }),
            Err(err) => out.push(SweepCell {
                config: cfg,
                report: None,
                error: Some(err.to_string()),
            }),
        }
    }
    Ok(SweepOutcome {
        cells: out,
        trainings,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    trained: &mut Option<TrainedCache>,
    wells_cache: &mut Option<WellsCache>,
    trainings: &mut usize,
) -> Result<ExperimentReport, PipelineError> {
    let mut timings = StageTimings::default();
    let train_key = cfg.training_key();
    if trained.as_ref().map(|t| t.key != train_key).unwrap_or(true) {
        *wells_cache = None;
        let t = Instant::now();
        let split = cfg.load_split()?;
        timings.load_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (model, train_log) = train_cnn(&split, &cfg.cnn_config(), &cfg.train_config())?;
        *trainings += 1;
        timings.train_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let (train_features, _) = extract_features(&model, &split.train, cfg.batch_size)?;
        let (test_features, _) = extract_features(&model, &split.test, cfg.batch_size)?;
        timings.features_s = t.elapsed().as_secs_f64();
        *trained = Some(TrainedCache {
            key: train_key.clone(),
            model,
            train_log,
            train_features,
            train_labels: split.train.labels.clone(),
            test_features,
            test_labels: split.test.labels.clone(),
        });
    }
    let cache = trained.as_ref().expect("populated above");

    let wells_key = format!("{}|{}", train_key, cfg.wells_key());
    if wells_cache
        .as_ref()
        .map(|w| w.key != wells_key)
        .unwrap_or(true)
    {
        let t = Instant::now();
        let by_class = group_by_class(cache.train_features.view(), &cache.train_labels);
        let wells = build_wells(&by_class, &cfg.kmeans_config())?;
        let distances = well_distances(&wells)?;
        timings.wells_s = t.elapsed().as_secs_f64();
        *wells_cache = Some(WellsCache {
            key: wells_key,
            wells,
            distances,
        });
    }
    let wc = wells_cache.as_ref().expect("populated above");

    let t = Instant::now();
    let eval = evaluate_features(
        &cache.test_features,
        &cache.test_labels,
        &wc.wells,
        &cfg.energy_params(),
        cfg.strict_determinism,
    )?;
    timings.eval_s = t.elapsed().as_secs_f64();

    let artifacts = PipelineArtifacts {
        model: cache.model.clone(),
        train_log: cache.train_log.clone(),
        wells: wc.wells.clone(),
        distances: wc.distances,
        eval,
        timings,
    };
    Ok(report_from_artifacts(cfg, &artifacts))
}
