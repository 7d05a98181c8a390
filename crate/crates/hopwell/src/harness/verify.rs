//! Self-contained verification suite: gradient checks against central
//! finite differences, a brute-force k-means oracle, batching identity,
//! and normalization round-trips. Runs on bundled fixtures only (no
//! dataset needed) and is deterministic from run to run.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::{cross_entropy, mnist_stack, softmax_ce_grad, Cnn, ConvSpec, DropoutPlan, Scalar};
use crate::dataio::{denormalize_pixel, normalize_pixel, NUM_CLASSES};
use crate::energy::{
    descent_direction, energy, evaluate_batch, minimize, nearest_centroid_class, EnergyParams,
    HopfieldState,
};
use crate::kmeans::{lloyd_from_centroids, Well, WellSet};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One `[PASS]`/`[FAIL]` line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for check in &self.checks {
            let tag = if check.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("[{tag}] {} — {}\n", check.name, check.detail));
        }
        let verdict = if self.all_passed() { "OK" } else { "FAILED" };
        out.push_str(&format!(
            "{} of {} checks passed: {verdict}\n",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Test hook: added to the first analytic CNN gradient entry so the
    /// suite's sensitivity can itself be checked. Zero in normal runs.
    pub grad_perturbation: f64,
}

/// Builds the small fixture net used by gradient checks — a three-block
/// stack truncated to 2 filters per layer (plus an optional batch-norm
/// four-block variant) — together with a 2-sample input batch. Generic so
/// the same fixture runs in f32 and f64.
pub fn tiny_cnn_fixture<T: Scalar>(with_bn: bool, seed: u64) -> (Cnn<T>, Array4<T>, Vec<u8>) {
    let convs = if with_bn {
        vec![
            ConvSpec { out_channels: 2, batchnorm: true, pool: true, dropout: 0.0 },
            ConvSpec { out_channels: 2, batchnorm: true, pool: true, dropout: 0.0 },
            ConvSpec { out_channels: 2, batchnorm: true, pool: true, dropout: 0.0 },
            ConvSpec { out_channels: 2, batchnorm: true, pool: false, dropout: 0.0 },
        ]
    } else {
        vec![
            ConvSpec { out_channels: 2, batchnorm: false, pool: true, dropout: 0.0 },
            ConvSpec { out_channels: 2, batchnorm: false, pool: true, dropout: 0.0 },
            ConvSpec { out_channels: 2, batchnorm: false, pool: false, dropout: 0.0 },
        ]
    };
    let net = Cnn::<T>::glorot(mnist_stack(convs), derive_seed(seed, "fixture-net"));
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "fixture-input"));
    let mut x = Array4::<T>::zeros((2, 1, 28, 28));
    for v in x.iter_mut() {
        *v = T::from_f64(rng.random_range(-1.0..1.0));
    }
    (net, x, vec![3, 7])
}

fn train_loss<T: Scalar>(net: &Cnn<T>, x: &Array4<T>, labels: &[u8]) -> f64 {
    let logits = net.train_logits_probe(x.view()).expect("fixture shapes agree");
    cross_entropy(&logits, labels).to_f64()
}

/// Compares every analytic parameter gradient against central finite
/// differences of the training loss. Returns `(max relative error,
/// parameter count)`. Differences below `noise_floor` count as matches
/// (they sit at the finite-difference noise level for the precision in
/// use); `perturbation` is the mutation-fixture hook.
pub fn cnn_gradient_max_rel_error<T: Scalar>(
    net: &Cnn<T>,
    x: &Array4<T>,
    labels: &[u8],
    h: f64,
    noise_floor: f64,
    perturbation: f64,
) -> (f64, usize) {
    let mut probe = net.clone();
    let (logits, tape) = probe
        .forward_train(x.view(), DropoutPlan::Off)
        .expect("fixture shapes agree");
    let (_, dlogits) = softmax_ce_grad(&logits, labels);
    let mut grads = probe.backward(tape, &dlogits).expect("tape from this batch");
    grads.tensors[0][0] = grads.tensors[0][0] + T::from_f64(perturbation);

    let step = T::from_f64(h);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (t_idx, tensor) in grads.tensors.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let mut up = net.clone();
            {
                let slot = &mut up.trainable_params_mut()[t_idx][i];
                *slot = *slot + step;
            }
            let mut dn = net.clone();
            {
                let slot = &mut dn.trainable_params_mut()[t_idx][i];
                *slot = *slot - step;
            }
            let fd = (train_loss(&up, x, labels) - train_loss(&dn, x, labels)) / (2.0 * h);
            let a = a.to_f64();
            let diff = (a - fd).abs();
            let rel = if diff < noise_floor {
                0.0
            } else {
                diff / (a.abs() + fd.abs()).max(1e-8)
            };
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    (max_rel, checked)
}

/// Copies an f32 network's weights into an f64 twin (exact widening).
fn widen_to_f64(net: &Cnn<f32>) -> Cnn<f64> {
    let mut out = Cnn::<f64>::glorot(net.spec.clone(), 0);
    for (dst, (src, _)) in out.all_tensors_mut().into_iter().zip(net.all_tensors()) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s as f64;
        }
    }
    out
}

/// Checks the single-precision backward pass: the f32 analytic gradients
/// must match central finite differences evaluated in f64 on an exact
/// widening of the same weights. The accurate FD oracle sidesteps the f32
/// noise floor and the ReLU/pool kinks a large f32 step would cross.
pub fn cnn_gradient_f32_max_rel_error(
    net: &Cnn<f32>,
    x: &Array4<f32>,
    labels: &[u8],
) -> (f64, usize) {
    let mut probe = net.clone();
    let (logits, tape) = probe
        .forward_train(x.view(), DropoutPlan::Off)
        .expect("fixture shapes agree");
    let (_, dlogits) = softmax_ce_grad(&logits, labels);
    let grads = probe.backward(tape, &dlogits).expect("tape from this batch");

    let net64 = widen_to_f64(net);
    let x64 = x.mapv(|v| v as f64);
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (t_idx, tensor) in grads.tensors.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let mut up = net64.clone();
            up.trainable_params_mut()[t_idx][i] += h;
            let mut dn = net64.clone();
            dn.trainable_params_mut()[t_idx][i] -= h;
            let fd = (train_loss(&up, &x64, labels) - train_loss(&dn, &x64, labels)) / (2.0 * h);
            let a = a as f64;
            let diff = (a - fd).abs();
            // f32 gradients round at ~1e-7 of the loss scale
            let rel = if diff < 1e-7 {
                0.0
            } else {
                diff / (a.abs() + fd.abs()).max(1e-8)
            };
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    (max_rel, checked)
}

/// Checks `descent_direction == -∂E/∂s_y` by central differences on random
/// fixtures with `m` wells of dimension `d`. Returns the max relative error.
pub fn energy_gradient_max_rel_error(m: usize, d: usize, fixtures: usize, seed: u64) -> f64 {
    let mut max_rel = 0.0f64;
    for fixture in 0..fixtures {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(seed, &format!("energy-fd-{m}-{d}-{fixture}")));
        let wells = random_wells(m, d, &mut rng);
        let state = HopfieldState {
            s_x: random_unit(d, &mut rng).iter().map(|&v| v as f64).collect(),
            s_y: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        };
        let params = EnergyParams {
            beta: rng.random_range(0.005..0.5),
            lambda: rng.random_range(0.0..0.02),
            eta: 0.1,
            max_iter: 50,
            tol: 1e-3,
        };
        let g = descent_direction(&state, &wells, &params).expect("valid fixture");
        let h = 1e-6;
        for (c, &analytic) in g.iter().enumerate() {
            let mut up = state.clone();
            up.s_y[c] += h;
            let mut dn = state.clone();
            dn.s_y[c] -= h;
            let fd = (energy(&up, &wells, &params).expect("valid fixture")
                - energy(&dn, &wells, &params).expect("valid fixture"))
                / (2.0 * h);
            let expect = -fd; // descent direction is the negative gradient
            let diff = (analytic - expect).abs();
            let rel = if diff < 1e-9 {
                0.0
            } else {
                diff / analytic.abs().max(expect.abs()).max(1e-8)
            };
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}

pub fn random_unit(d: usize, rng: &mut ChaCha12Rng) -> Vec<f32> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    raw.iter().map(|&v| (v / norm) as f32).collect()
}

pub fn random_wells(m: usize, d: usize, rng: &mut ChaCha12Rng) -> WellSet {
    let wells = (0..m)
        .map(|i| Well {
            mu: random_unit(d, rng),
            label: (i % NUM_CLASSES) as u8,
        })
        .collect();
    WellSet {
        wells,
        k: m.div_ceil(NUM_CLASSES),
        feature_dim: d,
    }
}

/// Exhaustive optimum over all 2-partitions of at most 16 points.
pub fn brute_force_two_partition_inertia(points: &Array2<f64>) -> f64 {
    let n = points.nrows();
    assert!((2..=16).contains(&n));
    let d = points.ncols();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << (n - 1)) {
        // point 0 always lives in side A, so every proper bipartition
        // appears exactly once
        let in_b: Vec<bool> = (0..n)
            .map(|i| i > 0 && (mask >> (i - 1)) & 1 == 1)
            .collect();
        if !in_b.iter().any(|&b| b) {
            continue;
        }
        let mut total = 0.0;
        for side in [false, true] {
            let members: Vec<usize> = (0..n).filter(|&i| in_b[i] == side).collect();
            let mut mean = vec![0.0f64; d];
            for &i in &members {
                for (j, &v) in points.row(i).iter().enumerate() {
                    mean[j] += v;
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            for &i in &members {
                for (j, &v) in points.row(i).iter().enumerate() {
                    let diff = v - mean[j];
                    total += diff * diff;
                }
            }
        }
        if total < best {
            best = total;
        }
    }
    best
}

/// Best Lloyd inertia over every distinct pair of points as initial
/// centroids (the exhaustive K = 2 seeding).
pub fn best_inertia_over_pair_inits(points: &Array2<f64>) -> f64 {
    let n = points.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let mut init = Array2::<f64>::zeros((2, points.ncols()));
            init.row_mut(0).assign(&points.row(i));
            init.row_mut(1).assign(&points.row(j));
            let fit = lloyd_from_centroids(points.view(), init, 200, 1e-12)
                .expect("valid fixture");
            if fit.inertia < best {
                best = fit.inertia;
            }
        }
    }
    best
}

/// Max gap between Lloyd's best-restart inertia and the brute-force
/// optimum over `fixtures` random instances with N ≤ 8, K = 2.
pub fn kmeans_oracle_max_gap(fixtures: usize, seed: u64) -> f64 {
    let mut max_gap = 0.0f64;
    for fixture in 0..fixtures {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(seed, &format!("kmeans-oracle-{fixture}")));
        let n = rng.random_range(4..=8);
        let mut points = Array2::<f64>::zeros((n, 2));
        for v in points.iter_mut() {
            *v = rng.random_range(-4.0..4.0);
        }
        let oracle = brute_force_two_partition_inertia(&points);
        let achieved = best_inertia_over_pair_inits(&points);
        let gap = (achieved - oracle).abs();
        if gap > max_gap {
            max_gap = gap;
        }
    }
    max_gap
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs the whole invariant suite on bundled fixtures. Deterministic:
/// repeated runs produce the identical pass/fail vector.
pub fn run_verification(opts: &VerifyOptions) -> VerificationReport {
    let mut checks = Vec::new();

    // CNN gradients, plain stack, double precision
    let (net, x, labels) = tiny_cnn_fixture::<f64>(false, 101);
    let (rel, count) =
        cnn_gradient_max_rel_error(&net, &x, &labels, 1e-5, 1e-10, opts.grad_perturbation);
    checks.push(check(
        "cnn-gradient-check",
        rel < 1e-5,
        format!("max rel err {rel:.3e} over {count} params (tol 1e-5)"),
    ));

    // CNN gradients through batch norm, double precision
    let (net, x, labels) = tiny_cnn_fixture::<f64>(true, 202);
    let (rel, count) = cnn_gradient_max_rel_error(&net, &x, &labels, 1e-5, 1e-10, 0.0);
    checks.push(check(
        "cnn-gradient-check-batchnorm",
        rel < 1e-5,
        format!("max rel err {rel:.3e} over {count} params (tol 1e-5)"),
    ));

    // the single-precision training path, at its coarser tolerance
    let (net, x, labels) = tiny_cnn_fixture::<f32>(false, 101);
    let (rel, count) = cnn_gradient_f32_max_rel_error(&net, &x, &labels);
    checks.push(check(
        "cnn-gradient-check-f32",
        rel < 1e-3,
        format!("max rel err {rel:.3e} over {count} params (tol 1e-3)"),
    ));

    // energy gradient vs finite differences across well counts and dims
    let mut worst = 0.0f64;
    for (m, d, fixtures) in [(1, 4, 6), (3, 4, 6), (3, 3136, 2), (50, 3136, 2)] {
        worst = worst.max(energy_gradient_max_rel_error(m, d, fixtures, 303));
    }
    checks.push(check(
        "energy-gradient-check",
        worst < 1e-5,
        format!("max rel err {worst:.3e} (tol 1e-5)"),
    ));

    // k-means vs exhaustive-partition oracle
    let gap = kmeans_oracle_max_gap(8, 404);
    checks.push(check(
        "kmeans-oracle",
        gap < 1e-9,
        format!("max inertia gap {gap:.3e} (tol 1e-9)"),
    ));

    // batched evaluation equals per-sample descent
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let wells = random_wells(20, 16, &mut rng);
    let n = 64;
    let mut features = Array2::<f32>::zeros((n, 16));
    for mut row in features.rows_mut() {
        let u = random_unit(16, &mut rng);
        for (dst, v) in row.iter_mut().zip(u) {
            *dst = v;
        }
    }
    let eval_labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
    let params = EnergyParams::defaults();
    let batch = evaluate_batch(features.view(), &eval_labels, &wells, &params)
        .expect("valid fixture");
    let mut max_weight_diff = 0.0f64;
    let mut class_mismatch = 0usize;
    for (i, pred) in batch.predictions.iter().enumerate() {
        let single = minimize(features.row(i).as_slice().expect("contiguous"), &wells, &params)
            .expect("valid fixture");
        if single.class != pred.class {
            class_mismatch += 1;
        }
        for (a, b) in single.weights.iter().zip(&pred.weights) {
            max_weight_diff = max_weight_diff.max((a - b).abs());
        }
    }
    checks.push(check(
        "batching-identity",
        class_mismatch == 0 && max_weight_diff <= 1e-6,
        format!("{class_mismatch} class mismatches, max weight diff {max_weight_diff:.3e}"),
    ));

    // zero-iteration prediction equals nearest feature centroid
    let mut rng = ChaCha12Rng::seed_from_u64(606);
    let wells = random_wells(30, 24, &mut rng);
    let zero_params = EnergyParams {
        max_iter: 0,
        ..EnergyParams::defaults()
    };
    let mut mismatches = 0usize;
    for _ in 0..200 {
        let s_x = random_unit(24, &mut rng);
        let pred = minimize(&s_x, &wells, &zero_params).expect("valid fixture");
        let nearest = nearest_centroid_class(&s_x, &wells).expect("valid fixture");
        if pred.class != nearest {
            mismatches += 1;
        }
    }
    checks.push(check(
        "zero-iteration-identity",
        mismatches == 0,
        format!("{mismatches} of 200 predictions diverged from nearest centroid"),
    ));

    // pixel normalization round-trip and feature norm invariant
    let mut worst_px = 0.0f32;
    for b in 0u8..=255 {
        let back = denormalize_pixel(normalize_pixel(b));
        worst_px = worst_px.max((back - b as f32).abs());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(707);
    let mut worst_norm = 0.0f64;
    for _ in 0..50 {
        let scale: f64 = 10f64.powf(rng.random_range(-2.0..3.0));
        let raw: Vec<f32> = (0..128)
            .map(|_| (rng.random_range(-1.0..1.0) * scale) as f32)
            .collect();
        let fv = crate::cnn::normalize_feature(&raw).expect("finite fixture");
        let norm = fv.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm != 0.0 {
            worst_norm = worst_norm.max((norm - 1.0).abs());
        }
    }
    checks.push(check(
        "normalization-round-trip",
        worst_px < 1e-3 && worst_norm < 1e-5,
        format!("max pixel err {worst_px:.3e}, max feature norm drift {worst_norm:.3e}"),
    ));

    VerificationReport { checks }
}
