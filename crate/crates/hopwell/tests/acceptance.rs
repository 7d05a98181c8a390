//! Acceptance suite. Each test enforces one release criterion at its
//! stated tolerance and prints a `[PASS]`/`[FAIL]` line. Criteria needing
//! MNIST skip with a note when the data directory is absent; the
//! full-scale reproduction is opt-in via `--ignored` (multi-hour CPU run).

mod common;

use std::time::Instant;

use hopwell::cnn::{train_cnn, Arch};
use hopwell::energy::{evaluate_batch, minimize, nearest_centroid_class, EnergyParams};
use hopwell::harness::verify::{
    cnn_gradient_max_rel_error, kmeans_oracle_max_gap, energy_gradient_max_rel_error,
    random_unit, random_wells, tiny_cnn_fixture,
};
use hopwell::harness::{extract_features, run_pipeline, ExperimentConfig};
use hopwell::kmeans::{build_wells, group_by_class, well_distances, KmeansConfig};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn verdict(name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(passed, "{name}: {detail}");
}

#[test]
fn criterion_cnn_gradient_correctness() {
    let start = Instant::now();
    let (net, x, labels) = tiny_cnn_fixture::<f64>(false, 2024);
    let (max_rel, params) = cnn_gradient_max_rel_error(&net, &x, &labels, 1e-5, 1e-10, 0.0);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "cnn-gradient-correctness",
        max_rel < 1e-5 && elapsed < 60.0,
        &format!("max rel err {max_rel:.3e} over {params} params in {elapsed:.1}s (tol 1e-5, budget 60s)"),
    );
}

#[test]
fn criterion_energy_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut fixtures = 0usize;
    for (m, d, n) in [
        (1, 4, 17),
        (3, 4, 17),
        (50, 4, 17),
        (1, 3136, 17),
        (3, 3136, 16),
        (50, 3136, 16),
    ] {
        worst = worst.max(energy_gradient_max_rel_error(m, d, n, 777));
        fixtures += n;
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "energy-gradient-correctness",
        worst < 1e-5 && elapsed < 30.0,
        &format!("max rel err {worst:.3e} over {fixtures} fixtures in {elapsed:.1}s (tol 1e-5, budget 30s)"),
    );
}

#[test]
fn criterion_kmeans_oracle() {
    let start = Instant::now();
    let gap = kmeans_oracle_max_gap(20, 888);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "kmeans-oracle",
        gap < 1e-9 && elapsed < 10.0,
        &format!("max inertia gap {gap:.3e} over 20 fixtures in {elapsed:.1}s (tol 1e-9, budget 10s)"),
    );
}

#[test]
fn criterion_zero_iteration_identity() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(999);
    let wells = random_wells(40, 48, &mut rng);
    let params = EnergyParams {
        max_iter: 0,
        ..EnergyParams::defaults()
    };
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let s_x = random_unit(48, &mut rng);
        let pred = minimize(&s_x, &wells, &params).unwrap();
        let nearest = nearest_centroid_class(&s_x, &wells).unwrap();
        if pred.class != nearest {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "zero-iteration-identity",
        mismatches == 0 && elapsed < 10.0,
        &format!("{mismatches} of 1000 samples diverged from nearest centroid in {elapsed:.1}s (budget 10s)"),
    );
}

#[test]
fn criterion_batching_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(1234);
    let wells = random_wells(50, 64, &mut rng);
    let n = 512;
    let mut features = Array2::<f32>::zeros((n, 64));
    for mut row in features.rows_mut() {
        for (dst, v) in row.iter_mut().zip(random_unit(64, &mut rng)) {
            *dst = v;
        }
    }
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let params = EnergyParams::defaults();
    let batch = evaluate_batch(features.view(), &labels, &wells, &params).unwrap();
    let mut class_mismatches = 0usize;
    let mut max_weight_diff = 0.0f64;
    for (i, pred) in batch.predictions.iter().enumerate() {
        let single = minimize(features.row(i).as_slice().unwrap(), &wells, &params).unwrap();
        if single.class != pred.class {
            class_mismatches += 1;
        }
        for (a, b) in single.weights.iter().zip(&pred.weights) {
            max_weight_diff = max_weight_diff.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "batching-equivalence",
        class_mismatches == 0 && max_weight_diff <= 1e-6 && elapsed < 30.0,
        &format!(
            "{class_mismatches} class mismatches, max weight diff {max_weight_diff:.3e} over 512 samples in {elapsed:.1}s (tol 1e-6, budget 30s)"
        ),
    );
}

#[test]
fn criterion_desk_scale_end_to_end() {
    let Some(dir) = common::data_dir() else {
        eprintln!("skipping desk-scale criterion: MNIST data not found");
        return;
    };
    let start = Instant::now();
    let out = tempfile::tempdir().unwrap();
    // defaults are the desk-scale row: 8k/2k, three-layer, 3 epochs, K=5
    let cfg = ExperimentConfig {
        data_dir: dir,
        out_dir: out.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    assert_eq!((cfg.lambda, cfg.beta, cfg.eta), (0.001, 0.01, 0.1));
    let report = run_pipeline(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "desk-scale-end-to-end",
        report.test_accuracy >= 0.93 && elapsed < 1800.0,
        &format!(
            "test accuracy {:.2}% (threshold 93%), final-epoch train accuracy {:.2}%, {elapsed:.0}s (budget 30min)",
            report.test_accuracy * 100.0,
            report.final_train_acc * 100.0
        ),
    );
    // training itself must have reached the expected regime
    assert!(
        report.final_train_acc > 0.95,
        "final-epoch train accuracy {:.4} <= 0.95",
        report.final_train_acc
    );
}

#[test]
fn criterion_well_separation_trend() {
    let Some(dir) = common::data_dir() else {
        eprintln!("skipping well-separation criterion: MNIST data not found");
        return;
    };
    let mut all_hold = true;
    let mut detail = String::new();
    for seed in [11u64, 22, 33] {
        let cfg = ExperimentConfig {
            data_dir: dir.clone(),
            seed,
            ..ExperimentConfig::default()
        };
        let split = cfg.load_split().unwrap();
        let (model, _) = train_cnn(&split, &cfg.cnn_config(), &cfg.train_config()).unwrap();
        let (features, _) = extract_features(&model, &split.train, cfg.batch_size).unwrap();
        let by_class = group_by_class(features.view(), &split.train.labels);
        let base = cfg.kmeans_config();
        let min_at = |k: usize| {
            let wells = build_wells(&by_class, &KmeansConfig { k, ..base.clone() }).unwrap();
            well_distances(&wells).unwrap().min
        };
        let min5 = min_at(5);
        let min12 = min_at(12);
        let holds = min12 < min5;
        all_hold &= holds;
        detail.push_str(&format!("seed {seed}: K=5 min {min5:.4} -> K=12 min {min12:.4}; "));
    }
    verdict(
        "well-separation-trend",
        all_hold,
        &format!("{detail}(K=12 must be strictly smaller)"),
    );
}

#[test]
fn criterion_determinism() {
    let Some(dir) = common::data_dir() else {
        eprintln!("skipping determinism criterion: MNIST data not found");
        return;
    };
    // identical ExperimentConfig end to end: same out_dir, two runs
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        data_dir: dir.clone(),
        out_dir: out.path().to_path_buf(),
        subset_train: Some(1200),
        subset_test: Some(300),
        epochs: 1,
        wells_per_class: 3,
        strict_determinism: true,
        ..ExperimentConfig::default()
    };
    let artifact_names = ["cnn.hwcn", "wells.hwwl", "predictions.jsonl"];
    let a = run_pipeline(&cfg).unwrap();
    let first_artifacts: Vec<Vec<u8>> = artifact_names
        .iter()
        .map(|f| std::fs::read(out.path().join(f)).unwrap())
        .collect();
    let b = run_pipeline(&cfg).unwrap();
    let identical = a.determinism_key() == b.determinism_key();
    let artifacts_identical = artifact_names
        .iter()
        .zip(&first_artifacts)
        .all(|(f, first)| &std::fs::read(out.path().join(f)).unwrap() == first);
    verdict(
        "determinism",
        identical && artifacts_identical,
        &format!(
            "reports bitwise-identical: {identical}; checkpoint/wells/predictions identical: {artifacts_identical}"
        ),
    );
}

/// Full-scale well-count sweep: accuracy should climb with K and flatten
/// out by K = 15. Shares one training run across the grid. Opt-in.
#[test]
#[ignore = "full-scale 60k/10k sweep takes ~45 min on CPU; opt-in"]
fn criterion_full_scale_well_sweep_pattern() {
    use hopwell::harness::{run_sweep, SweepGrid};
    let Some(dir) = common::data_dir() else {
        panic!("full-scale sweep requires the MNIST data directory");
    };
    let base = ExperimentConfig {
        data_dir: dir,
        out_dir: std::env::temp_dir().join("hopwell-full-sweep"),
        subset_train: None,
        subset_test: None,
        epochs: 10,
        ..ExperimentConfig::default()
    };
    let grid = SweepGrid {
        wells_per_class: Some(vec![5, 7, 10, 12, 15]),
        ..SweepGrid::default()
    };
    let outcome = run_sweep(&base, &grid).unwrap();
    assert_eq!(outcome.trainings, 1, "grid must share one training run");
    let acc: Vec<f64> = outcome
        .reports()
        .iter()
        .map(|r| r.test_accuracy)
        .collect();
    assert_eq!(acc.len(), 5);
    let (a5, a7, a10, a12, a15) = (acc[0], acc[1], acc[2], acc[3], acc[4]);
    let plateau = a12.max(a10);
    verdict(
        "full-scale-well-sweep-pattern",
        a10 > a5 && a15 <= plateau + 0.002,
        &format!(
            "accuracy by K: 5={:.2}% 7={:.2}% 10={:.2}% 12={:.2}% 15={:.2}% (rise then plateau)",
            a5 * 100.0,
            a7 * 100.0,
            a10 * 100.0,
            a12 * 100.0,
            a15 * 100.0
        ),
    );
}

/// Full-scale reproduction of the two headline tuning rows. Multi-hour CPU
/// run; execute with `cargo test -p hopwell --test acceptance -- --ignored`.
#[test]
#[ignore = "full-scale 60k/10k reproduction takes hours on CPU; opt-in"]
fn criterion_full_scale_reproduction() {
    let Some(dir) = common::data_dir() else {
        panic!("full-scale run requires the MNIST data directory");
    };

    // three-layer row: 50 wells, 10 epochs, lambda 0.01, beta 0.01 -> 97.52%
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        data_dir: dir.clone(),
        out_dir: out.path().join("three_layer"),
        subset_train: None,
        subset_test: None,
        epochs: 10,
        wells_per_class: 5,
        lambda: 0.01,
        beta: 0.01,
        ..ExperimentConfig::default()
    };
    let three = run_pipeline(&cfg).unwrap();
    verdict(
        "full-scale-three-layer",
        (three.test_accuracy - 0.9752).abs() <= 0.007
            && (three.well_min_distance - 0.4898).abs() <= 0.1
            && (three.well_mean_distance - 1.1110).abs() <= 0.1,
        &format!(
            "accuracy {:.2}% vs 97.52% +/- 0.7; min dist {:.4} vs 0.4898 +/- 0.1; mean {:.4} vs 1.1110 +/- 0.1",
            three.test_accuracy * 100.0,
            three.well_min_distance,
            three.well_mean_distance
        ),
    );

    // four-layer row: 120 wells, 25 epochs, lambda 0.001, beta 0.003 -> 99.44%
    let cfg = ExperimentConfig {
        data_dir: dir,
        out_dir: out.path().join("four_layer"),
        subset_train: None,
        subset_test: None,
        arch: Arch::FourLayer,
        epochs: 25,
        wells_per_class: 12,
        lambda: 0.001,
        beta: 0.003,
        ..ExperimentConfig::default()
    };
    let four = run_pipeline(&cfg).unwrap();
    verdict(
        "full-scale-four-layer",
        four.test_accuracy >= 0.99,
        &format!("accuracy {:.2}% (threshold 99%)", four.test_accuracy * 100.0),
    );
}
