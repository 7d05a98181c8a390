//! Pipeline/sweep cross-checks on small real-data subsets (skipped
//! without MNIST).

mod common;

use hopwell::harness::{run_pipeline, run_sweep, ExperimentConfig, SweepGrid};

fn small_cfg(dir: std::path::PathBuf, out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        data_dir: dir,
        out_dir: out.to_path_buf(),
        subset_train: Some(900),
        subset_test: Some(200),
        epochs: 1,
        wells_per_class: 2,
        ..ExperimentConfig::default()
    }
}

#[test]
fn cached_sweep_cells_match_fresh_pipelines() {
    let dir = require_mnist!();
    let out = tempfile::tempdir().unwrap();

    // sweep over two beta values: the second cell reuses checkpoint,
    // features and wells from the first
    let base = small_cfg(dir.clone(), out.path());
    let grid = SweepGrid {
        beta: Some(vec![0.01, 0.1]),
        ..SweepGrid::default()
    };
    let outcome = run_sweep(&base, &grid).unwrap();
    assert_eq!(outcome.trainings, 1);
    let sweep_reports = outcome.reports();
    assert_eq!(sweep_reports.len(), 2);

    // fresh standalone pipelines of the same two configs
    for (i, beta) in [0.01, 0.1].iter().enumerate() {
        let fresh_out = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.clone(), fresh_out.path());
        cfg.beta = *beta;
        let fresh = run_pipeline(&cfg).unwrap();
        let cell = &sweep_reports[i];
        assert_eq!(cell.test_accuracy, fresh.test_accuracy, "beta {beta}");
        assert_eq!(cell.well_min_distance, fresh.well_min_distance);
        assert_eq!(cell.well_mean_distance, fresh.well_mean_distance);
        assert_eq!(cell.convergence_rate, fresh.convergence_rate);
        assert_eq!(cell.final_train_loss, fresh.final_train_loss);
    }
}

#[test]
fn pipeline_report_files_are_consistent() {
    let dir = require_mnist!();
    let out = tempfile::tempdir().unwrap();
    let cfg = small_cfg(dir, out.path());
    let report = run_pipeline(&cfg).unwrap();

    let json: hopwell::harness::ExperimentReport = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json, report);

    // wells file loads back to K wells per class
    let wells =
        hopwell::kmeans::WellSet::from_bytes(&std::fs::read(out.path().join("wells.hwwl")).unwrap())
            .unwrap();
    assert_eq!(wells.len(), 20);
    assert_eq!(wells.k, 2);

    // checkpoint loads and matches the configured architecture
    let model =
        hopwell::cnn::load_checkpoint(&std::fs::read(out.path().join("cnn.hwcn")).unwrap())
            .unwrap();
    assert_eq!(model.feature_dim(), 3136);

    // prediction log has one line per test sample, accuracy agrees
    let lines = std::fs::read_to_string(out.path().join("predictions.jsonl")).unwrap();
    let records: Vec<hopwell::energy::PredictionRecord> = lines
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 200);
    let hits = records.iter().filter(|r| r.pred == r.label).count();
    assert!((hits as f64 / 200.0 - report.test_accuracy).abs() < 1e-12);
}
