//! Multi-well Hopfield energy surface and descent dynamics.
//!
//! The state is `s = [s_x, s_y]`: a fixed unit-norm feature vector and a
//! dynamic 10-dimensional class output starting at zero. The energy is
//!
//! ```text
//! E(s) = -Σ_m exp(-β ||s - μ_m||²) + λ ||s||²
//! ```
//!
//! with wells `μ_m = [μ_{m,x}, y_m]`. Classification descends `E` over
//! `s_y` and reads out the heaviest well weight `w_m = exp(-β ||s - μ_m||²)`.
//!
//! Sign convention: [`descent_direction`] returns
//! `Σ_m 2β w_m (y_m - s_y) - 2λ s_y`, which is the *negative* gradient of
//! `E` with respect to `s_y`, so the additive update `s_y += η·g` descends
//! the energy. The finite-difference tests pin this down.
//!
//! Since `s_x` never moves, each sample's per-well feature distances are
//! computed once and reused across iterations; only the 10-dimensional
//! class part changes. Distances accumulate in f64 over the f32 inputs to
//! keep the weight ordering stable.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::NUM_CLASSES;
use crate::kmeans::WellSet;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("well set is empty")]
    EmptyWellSet,
    #[error("state diverged beyond the guard bound")]
    NonFiniteState,
    #[error("invalid params: {0}")]
    InvalidParams(String),
}

/// Energy-surface and descent hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Well sharpness β > 0.
    pub beta: f64,
    /// State regularizer λ ≥ 0.
    pub lambda: f64,
    /// Descent step η > 0.
    pub eta: f64,
    /// Iteration cap (0 reads out the initial state, which reduces to
    /// nearest-feature-centroid classification).
    pub max_iter: usize,
    /// Stop once the update step norm drops below this.
    pub tol: f64,
}

impl EnergyParams {
    /// Typical values: β = 0.01, λ = 0.01, η = 0.1, 50 iterations,
    /// tolerance 1e-3.
    pub fn defaults() -> Self {
        Self {
            beta: 0.01,
            lambda: 0.01,
            eta: 0.1,
            max_iter: 50,
            tol: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        // NaNs fail every comparison below, so they are rejected too
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(EnergyError::InvalidParams("beta must be > 0".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(EnergyError::InvalidParams("lambda must be >= 0".into()));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(EnergyError::InvalidParams("eta must be > 0".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(EnergyError::InvalidParams("tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Divergence guard: abort rather than emit garbage weights.
const STATE_GUARD: f64 = 1e6;

/// Full Hopfield state for the diagnostic energy/gradient functions.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldState {
    pub s_x: Vec<f64>,
    pub s_y: [f64; NUM_CLASSES],
}

/// Wells densified to f64 for the descent kernels.
struct DenseWells {
    mu: Array2<f64>,
    labels: Vec<u8>,
}

impl DenseWells {
    fn from_set(set: &WellSet) -> Result<Self, EnergyError> {
        if set.is_empty() {
            return Err(EnergyError::EmptyWellSet);
        }
        let d = set.feature_dim;
        let mut mu = Array2::<f64>::zeros((set.len(), d));
        let mut labels = Vec::with_capacity(set.len());
        for (m, well) in set.wells.iter().enumerate() {
            if well.mu.len() != d {
                return Err(EnergyError::DimMismatch(format!(
                    "well {m} has dim {}, set says {d}",
                    well.mu.len()
                )));
            }
            for (j, &v) in well.mu.iter().enumerate() {
                mu[(m, j)] = v as f64;
            }
            labels.push(well.label);
        }
        Ok(Self { mu, labels })
    }
}

fn feature_sq_distances(s_x: &[f64], wells: &DenseWells) -> Vec<f64> {
    wells
        .mu
        .rows()
        .into_iter()
        .map(|row| {
            let row = row.as_slice().expect("contiguous well row");
            s_x.iter()
                .zip(row)
                .map(|(&a, &b)| {
                    let d = a - b;
                    d * d
                })
                .sum()
        })
        .collect()
}

/// `||s_y - y_m||²` expanded around `||s_y||²`; `y_m` is one-hot.
#[inline]
fn class_sq_distance(sy_sq: f64, s_y: &[f64; NUM_CLASSES], label: u8) -> f64 {
    sy_sq + 1.0 - 2.0 * s_y[label as usize]
}

/// Energy of a full state against a well set.
pub fn energy(
    state: &HopfieldState,
    wells: &WellSet,
    params: &EnergyParams,
) -> Result<f64, EnergyError> {
    params.validate()?;
    let dense = DenseWells::from_set(wells)?;
    if state.s_x.len() != wells.feature_dim {
        return Err(EnergyError::DimMismatch(format!(
            "s_x dim {} vs wells {}",
            state.s_x.len(),
            wells.feature_dim
        )));
    }
    let dists = feature_sq_distances(&state.s_x, &dense);
    let sy_sq: f64 = state.s_y.iter().map(|v| v * v).sum();
    let sx_sq: f64 = state.s_x.iter().map(|v| v * v).sum();
    let mut sum = 0.0;
    for (dx, &label) in dists.iter().zip(&dense.labels) {
        let total = dx + class_sq_distance(sy_sq, &state.s_y, label);
        sum += (-params.beta * total).exp();
    }
    Ok(-sum + params.lambda * (sx_sq + sy_sq))
}

/// The descent direction of the energy over the class output:
/// `Σ_m 2β w_m (y_m - s_y) - 2λ s_y`, equal to `-∂E/∂s_y`.
pub fn descent_direction(
    state: &HopfieldState,
    wells: &WellSet,
    params: &EnergyParams,
) -> Result<[f64; NUM_CLASSES], EnergyError> {
    params.validate()?;
    let dense = DenseWells::from_set(wells)?;
    if state.s_x.len() != wells.feature_dim {
        return Err(EnergyError::DimMismatch(format!(
            "s_x dim {} vs wells {}",
            state.s_x.len(),
            wells.feature_dim
        )));
    }
    let dists = feature_sq_distances(&state.s_x, &dense);
    Ok(direction_from_distances(
        &dists,
        &dense.labels,
        &state.s_y,
        params,
    ))
}

fn direction_from_distances(
    dists: &[f64],
    labels: &[u8],
    s_y: &[f64; NUM_CLASSES],
    params: &EnergyParams,
) -> [f64; NUM_CLASSES] {
    let sy_sq: f64 = s_y.iter().map(|v| v * v).sum();
    let mut weight_sum = 0.0;
    let mut class_weight = [0.0f64; NUM_CLASSES];
    for (dx, &label) in dists.iter().zip(labels) {
        let w = (-params.beta * (dx + class_sq_distance(sy_sq, s_y, label))).exp();
        weight_sum += w;
        class_weight[label as usize] += w;
    }
    let mut g = [0.0f64; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        g[c] = 2.0 * params.beta * (class_weight[c] - weight_sum * s_y[c])
            - 2.0 * params.lambda * s_y[c];
    }
    g
}

fn weights_at(
    dists: &[f64],
    labels: &[u8],
    s_y: &[f64; NUM_CLASSES],
    beta: f64,
) -> Vec<f64> {
    let sy_sq: f64 = s_y.iter().map(|v| v * v).sum();
    dists
        .iter()
        .zip(labels)
        .map(|(dx, &label)| (-beta * (dx + class_sq_distance(sy_sq, s_y, label))).exp())
        .collect()
}

/// Classification outcome for one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: u8,
    /// Final well weights `w_m`, aligned with the well set.
    pub weights: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

struct Descent {
    s_y: [f64; NUM_CLASSES],
    iterations: usize,
    converged: bool,
}

fn run_descent(
    dists: &[f64],
    labels: &[u8],
    params: &EnergyParams,
) -> Result<Descent, EnergyError> {
    let mut s_y = [0.0f64; NUM_CLASSES];
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..params.max_iter {
        let g = direction_from_distances(dists, labels, &s_y, params);
        let mut step_sq = 0.0;
        for c in 0..NUM_CLASSES {
            let step = params.eta * g[c];
            s_y[c] += step;
            step_sq += step * step;
        }
        iterations += 1;
        if s_y.iter().any(|v| !v.is_finite() || v.abs() > STATE_GUARD) {
            return Err(EnergyError::NonFiniteState);
        }
        if step_sq.sqrt() < params.tol {
            converged = true;
            break;
        }
    }
    Ok(Descent {
        s_y,
        iterations,
        converged,
    })
}

fn predict_from_distances(
    dists: &[f64],
    labels: &[u8],
    params: &EnergyParams,
) -> Result<Prediction, EnergyError> {
    let outcome = run_descent(dists, labels, params)?;
    let weights = weights_at(dists, labels, &outcome.s_y, params.beta);
    let mut best = 0usize;
    for m in 1..weights.len() {
        if weights[m] > weights[best] {
            best = m;
        }
    }
    Ok(Prediction {
        class: labels[best],
        weights,
        iterations_used: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Runs the descent for one feature vector and predicts the class of the
/// heaviest well (ties to the lowest well index). `s_x` stays untouched.
pub fn minimize(
    s_x: &[f32],
    wells: &WellSet,
    params: &EnergyParams,
) -> Result<Prediction, EnergyError> {
    params.validate()?;
    let dense = DenseWells::from_set(wells)?;
    if s_x.len() != wells.feature_dim {
        return Err(EnergyError::DimMismatch(format!(
            "s_x dim {} vs wells {}",
            s_x.len(),
            wells.feature_dim
        )));
    }
    let s_x64: Vec<f64> = s_x.iter().map(|&v| v as f64).collect();
    let dists = feature_sq_distances(&s_x64, &dense);
    predict_from_distances(&dists, &dense.labels, params)
}

/// Plain nearest-feature-centroid classification (argmin `||s_x - μ_m||²`,
/// ties to the lowest well index). This is what the descent reduces to at
/// zero iterations.
pub fn nearest_centroid_class(s_x: &[f32], wells: &WellSet) -> Result<u8, EnergyError> {
    let dense = DenseWells::from_set(wells)?;
    if s_x.len() != wells.feature_dim {
        return Err(EnergyError::DimMismatch(format!(
            "s_x dim {} vs wells {}",
            s_x.len(),
            wells.feature_dim
        )));
    }
    let s_x64: Vec<f64> = s_x.iter().map(|&v| v as f64).collect();
    let dists = feature_sq_distances(&s_x64, &dense);
    let mut best = 0usize;
    for m in 1..dists.len() {
        if dists[m] < dists[best] {
            best = m;
        }
    }
    Ok(dense.labels[best])
}

/// Batch evaluation result.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub accuracy: f64,
    /// Fraction of samples whose descent hit the tolerance before the cap.
    pub convergence_rate: f64,
    pub predictions: Vec<Prediction>,
}

/// Evaluates a feature matrix row-by-row (samples are independent, so rows
/// run in parallel; results are identical to per-sample [`minimize`]).
pub fn evaluate_batch(
    features: ArrayView2<f32>,
    labels: &[u8],
    wells: &WellSet,
    params: &EnergyParams,
) -> Result<BatchEval, EnergyError> {
    params.validate()?;
    if features.nrows() != labels.len() {
        return Err(EnergyError::DimMismatch(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.ncols() != wells.feature_dim {
        return Err(EnergyError::DimMismatch(format!(
            "feature dim {} vs wells {}",
            features.ncols(),
            wells.feature_dim
        )));
    }
    let dense = DenseWells::from_set(wells)?;
    let rows: Vec<Vec<f64>> = features
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let predictions: Vec<Prediction> = rows
        .par_iter()
        .map(|row| {
            let dists = feature_sq_distances(row, &dense);
            predict_from_distances(&dists, &dense.labels, params)
        })
        .collect::<Result<_, _>>()?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| p.class == l)
        .count();
    let converged = predictions.iter().filter(|p| p.converged).count();
    let n = predictions.len();
    Ok(BatchEval {
        accuracy: hits as f64 / n as f64,
        convergence_rate: converged as f64 / n as f64,
        predictions,
    })
}

/// One line of the per-sample prediction log (JSON lines on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub label: u8,
    pub pred: u8,
    pub converged: bool,
    pub iters: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::Well;

    fn unit_well(dim: usize, axis: usize, label: u8) -> Well {
        let mut mu = vec![0.0f32; dim];
        mu[axis] = 1.0;
        Well { mu, label }
    }

    fn well_set(wells: Vec<Well>) -> WellSet {
        let feature_dim = wells[0].mu.len();
        WellSet {
            wells,
            k: 1,
            feature_dim,
        }
    }

    /// Dyadic values only, so f32 well storage is exact and the frozen
    /// decimal reference applies bit-for-bit.
    fn fixture_m3_d4() -> (HopfieldState, WellSet, EnergyParams) {
        let wells = well_set(vec![
            Well { mu: vec![0.90625, 0.109375, -0.296875, 0.28125], label: 1 },
            Well { mu: vec![-0.5, 0.625, 0.40625, -0.453125], label: 4 },
            Well { mu: vec![0.046875, -0.84375, 0.296875, 0.421875], label: 8 },
        ]);
        let state = HopfieldState {
            s_x: vec![0.3125, -0.1875, 0.8125, 0.5],
            s_y: [
                0.09375, -0.046875, 0.203125, 0.0, 0.296875, -0.15625, 0.078125, 0.0, -0.40625,
                0.25,
            ],
        };
        let params = EnergyParams {
            beta: 0.07,
            lambda: 0.013,
            eta: 0.1,
            max_iter: 50,
            tol: 1e-3,
        };
        (state, wells, params)
    }

    #[test]
    fn energy_at_a_well_bottom() {
        // s = μ exactly: unit feature + one-hot, so ||s||² = 2 and the
        // exponential term is exp(0) = 1
        let wells = well_set(vec![unit_well(4, 0, 3)]);
        let mut s_y = [0.0; NUM_CLASSES];
        s_y[3] = 1.0;
        let state = HopfieldState {
            s_x: vec![1.0, 0.0, 0.0, 0.0],
            s_y,
        };
        let params = EnergyParams { beta: 0.01, lambda: 0.01, ..EnergyParams::defaults() };
        let e = energy(&state, &wells, &params).unwrap();
        assert!((e - (-0.98)).abs() < 1e-12, "E = {e}");
    }

    #[test]
    fn far_state_energy_decays_to_regularizer() {
        // with λ = 0 the energy approaches 0 from below as the state
        // leaves every well's reach
        let wells = well_set(vec![unit_well(4, 0, 0)]);
        let params = EnergyParams { beta: 0.01, lambda: 0.0, ..EnergyParams::defaults() };
        let mut last = f64::NEG_INFINITY;
        for far in [10.0, 40.0, 160.0] {
            let state = HopfieldState {
                s_x: vec![far, 0.0, 0.0, 0.0],
                s_y: [0.0; NUM_CLASSES],
            };
            let e = energy(&state, &wells, &params).unwrap();
            assert!(e < 0.0, "E = {e} at distance {far}");
            assert!(e > last, "energy must rise toward 0 with distance");
            last = e;
        }
        assert!(last > -1e-9, "E = {last} should be nearly 0 far away");
    }

    #[test]
    fn energy_matches_high_precision_reference() {
        // frozen from a 50-digit decimal evaluation of the same fixture
        let (state, wells, params) = fixture_m3_d4();
        let e = energy(&state, &wells, &params).unwrap();
        assert!(
            (e - (-2.390_822_820_179_954_6)).abs() < 1e-13,
            "E = {e}"
        );
    }

    #[test]
    fn fixed_point_when_state_sits_on_single_well() {
        let wells = well_set(vec![unit_well(4, 1, 6)]);
        let mut s_y = [0.0; NUM_CLASSES];
        s_y[6] = 1.0;
        let state = HopfieldState { s_x: vec![0.0, 1.0, 0.0, 0.0], s_y };
        let params = EnergyParams { beta: 0.05, lambda: 0.0, ..EnergyParams::defaults() };
        let g = descent_direction(&state, &wells, &params).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15), "g = {g:?}");
    }

    #[test]
    fn faraway_wells_leave_only_the_regularizer_pull() {
        let wells = well_set(vec![unit_well(4, 0, 2)]);
        let state = HopfieldState {
            s_x: vec![800.0, 0.0, 0.0, 0.0],
            s_y: [0.3, -0.2, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        let params = EnergyParams { beta: 0.01, lambda: 0.02, ..EnergyParams::defaults() };
        let g = descent_direction(&state, &wells, &params).unwrap();
        for (c, (&got, &sy)) in g.iter().zip(&state.s_y).enumerate() {
            let expect = -2.0 * params.lambda * sy;
            assert!((got - expect).abs() < 1e-12, "class {c}: {got} vs {expect}");
        }
    }

    #[test]
    fn descent_direction_is_negative_gradient() {
        let (state, wells, params) = fixture_m3_d4();
        let g = descent_direction(&state, &wells, &params).unwrap();
        let h = 1e-6;
        for (c, &analytic) in g.iter().enumerate() {
            let mut up = state.clone();
            up.s_y[c] += h;
            let mut dn = state.clone();
            dn.s_y[c] -= h;
            let fd = (energy(&up, &wells, &params).unwrap()
                - energy(&dn, &wells, &params).unwrap())
                / (2.0 * h);
            let expect = -fd;
            let denom = expect.abs().max(analytic.abs()).max(1e-8);
            assert!(
                ((analytic - expect) / denom).abs() < 1e-5,
                "class {c}: analytic {analytic} vs -fd {expect}"
            );
        }
    }

    #[test]
    fn two_orthogonal_wells_classify_by_feature() {
        let wells = well_set(vec![unit_well(8, 0, 0), unit_well(8, 1, 1)]);
        let mut s_x = vec![0.0f32; 8];
        s_x[0] = 1.0;
        let pred = minimize(&s_x, &wells, &EnergyParams::defaults()).unwrap();
        assert_eq!(pred.class, 0);
        assert!(pred.weights[0] > pred.weights[1]);
    }

    #[test]
    fn symmetric_degenerate_input_ties_to_lowest_index() {
        // zero s_x is equidistant from both wells; weights must agree and
        // the argmax tie must resolve to well 0
        let wells = well_set(vec![unit_well(6, 0, 7), unit_well(6, 1, 2)]);
        let s_x = vec![0.0f32; 6];
        let pred = minimize(&s_x, &wells, &EnergyParams::defaults()).unwrap();
        assert!((pred.weights[0] - pred.weights[1]).abs() < 1e-15);
        assert_eq!(pred.class, 7);
    }

    #[test]
    fn zero_iterations_reduce_to_nearest_centroid() {
        let wells = well_set(vec![
            Well { mu: vec![0.8, 0.6, 0.0], label: 3 },
            Well { mu: vec![0.0, 0.6, 0.8], label: 5 },
            Well { mu: vec![0.6, 0.0, 0.8], label: 9 },
        ]);
        let params = EnergyParams { max_iter: 0, ..EnergyParams::defaults() };
        for s_x in [[1.0f32, 0.0, 0.0], [0.0, 0.0, 1.0], [0.3, 0.9, 0.3]] {
            let pred = minimize(&s_x, &wells, &params).unwrap();
            let nearest = nearest_centroid_class(&s_x, &wells).unwrap();
            assert_eq!(pred.class, nearest);
            assert_eq!(pred.iterations_used, 0);
            assert!(!pred.converged);
        }
    }

    #[test]
    fn batch_of_one_matches_minimize() {
        let wells = well_set(vec![unit_well(5, 0, 0), unit_well(5, 3, 4)]);
        let mut features = Array2::<f32>::zeros((1, 5));
        features[(0, 3)] = 0.9;
        features[(0, 0)] = 0.1;
        let params = EnergyParams::defaults();
        let single = minimize(
            features.row(0).as_slice().unwrap(),
            &wells,
            &params,
        )
        .unwrap();
        let batch = evaluate_batch(features.view(), &[4], &wells, &params).unwrap();
        assert_eq!(batch.predictions[0], single);
        assert_eq!(batch.accuracy, 1.0);
    }

    #[test]
    fn samples_on_their_wells_are_perfect() {
        let wells = well_set(vec![
            unit_well(6, 0, 0),
            unit_well(6, 1, 1),
            unit_well(6, 2, 2),
        ]);
        let mut features = Array2::<f32>::zeros((3, 6));
        for i in 0..3 {
            features[(i, i)] = 1.0;
        }
        let eval = evaluate_batch(features.view(), &[0, 1, 2], &wells, &EnergyParams::defaults())
            .unwrap();
        assert_eq!(eval.accuracy, 1.0);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let wells = well_set(vec![unit_well(4, 0, 0)]);
        assert!(matches!(
            minimize(&[1.0f32; 5], &wells, &EnergyParams::defaults()),
            Err(EnergyError::DimMismatch(_))
        ));
        let features = Array2::<f32>::zeros((2, 4));
        assert!(matches!(
            evaluate_batch(features.view(), &[0], &wells, &EnergyParams::defaults()),
            Err(EnergyError::DimMismatch(_))
        ));
    }

    #[test]
    fn empty_well_set_is_an_error() {
        let set = WellSet { wells: vec![], k: 0, feature_dim: 4 };
        assert!(matches!(
            minimize(&[0.0f32; 4], &set, &EnergyParams::defaults()),
            Err(EnergyError::EmptyWellSet)
        ));
    }

    #[test]
    fn divergence_guard_trips_on_huge_step() {
        let wells = well_set(vec![unit_well(4, 0, 0)]);
        let params = EnergyParams {
            beta: 0.5,
            lambda: 0.0,
            eta: 1e9,
            max_iter: 50,
            tol: 1e-12,
        };
        let out = minimize(&[1.0f32, 0.0, 0.0, 0.0], &wells, &params);
        assert!(matches!(out, Err(EnergyError::NonFiniteState)));
    }

    #[test]
    fn state_stays_bounded_under_table_range_params() {
        // λ > 0 keeps ||s_y|| well under the guard for every swept row
        let wells = well_set(vec![
            unit_well(6, 0, 0),
            unit_well(6, 1, 1),
            unit_well(6, 2, 2),
            unit_well(6, 3, 3),
        ]);
        for &beta in &[0.0005, 0.001, 0.01, 0.05, 0.1, 0.5] {
            for &lambda in &[0.001, 0.005, 0.01, 0.02] {
                let params = EnergyParams {
                    beta,
                    lambda,
                    eta: 0.1,
                    max_iter: 200,
                    tol: 1e-9,
                };
                let mut s_x = [0.0f32; 6];
                s_x[1] = 1.0;
                let dense = DenseWells::from_set(&wells).unwrap();
                let s_x64: Vec<f64> = s_x.iter().map(|&v| v as f64).collect();
                let dists = feature_sq_distances(&s_x64, &dense);
                let outcome = run_descent(&dists, &dense.labels, &params).unwrap();
                let norm = outcome.s_y.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm < 100.0, "β={beta} λ={lambda} gave ||s_y|| = {norm}");
            }
        }
    }

    #[test]
    fn s_x_is_untouched_by_minimize() {
        let wells = well_set(vec![unit_well(4, 0, 0), unit_well(4, 2, 1)]);
        let s_x = vec![0.5f32, 0.5, -0.5, 0.5];
        let copy = s_x.clone();
        let _ = minimize(&s_x, &wells, &EnergyParams::defaults()).unwrap();
        assert_eq!(s_x, copy);
    }
}
