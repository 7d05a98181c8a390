//! Per-class k-means clustering and well construction.
//!
//! Each class's feature vectors are clustered with Lloyd's algorithm
//! (k-means++ seeding, `n_init` restarts, best inertia wins) and the raw
//! centroids are normalized into unit-norm well prototypes paired with
//! one-hot class vectors.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::NUM_CLASSES;
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum KmeansError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("{points} points cannot support {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("class {0} has no samples")]
    MissingClass(u8),
    #[error("well distances need at least two wells")]
    SingleWell,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Clustering hyperparameters; the defaults mirror the common library
/// invocation (`n_init = 3`, 300 iterations, tol 1e-4 on centroid shift).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl KmeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            n_init: 3,
            max_iter: 300,
            tol: 1e-4,
            seed,
        }
    }

    fn validate(&self) -> Result<(), KmeansError> {
        if self.k == 0 || self.n_init == 0 {
            return Err(KmeansError::InvalidConfig(
                "k and n_init must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one clustering run.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to the squared distance to the nearest chosen
/// centroid.
fn kmeanspp_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centroids = Array2::<f64>::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| {
            squared_distance(
                points.row(i).as_slice().expect("contiguous point"),
                centroids.row(0).as_slice().expect("contiguous centroid"),
            )
        })
        .collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            // inverse-CDF sample over the D^2 weights
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining distances zero (duplicate points): uniform
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, slot) in min_d2.iter_mut().enumerate() {
            let d2 = squared_distance(
                points.row(i).as_slice().expect("contiguous point"),
                centroids.row(c).as_slice().expect("contiguous centroid"),
            );
            if d2 < *slot {
                *slot = d2;
            }
        }
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, out: &mut [usize]) {
    let k = centroids.nrows();
    for (i, slot) in out.iter_mut().enumerate() {
        let p = points.row(i);
        let p = p.as_slice().expect("contiguous point");
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = squared_distance(p, centroids.row(c).as_slice().expect("contiguous"));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *slot = best;
    }
}

/// Moves the point farthest from its current centroid into each empty
/// cluster (ties to the lowest point index; clusters of one are not
/// robbed). Returns true if anything changed.
fn repair_empty_clusters(
    points: ArrayView2<f64>,
    centroids: &Array2<f64>,
    assignments: &mut [usize],
    counts: &mut [usize],
) -> bool {
    let mut changed = false;
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut far_idx = None;
        let mut far_d = -1.0;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = squared_distance(
                points.row(i).as_slice().expect("contiguous"),
                centroids.row(a).as_slice().expect("contiguous"),
            );
            if d > far_d {
                far_d = d;
                far_idx = Some(i);
            }
        }
        let Some(idx) = far_idx else {
            break; // every donor cluster is a singleton; nothing to move
        };
        counts[assignments[idx]] -= 1;
        assignments[idx] = empty;
        counts[empty] += 1;
        changed = true;
    }
    changed
}

fn update_centroids(
    points: ArrayView2<f64>,
    assignments: &[usize],
    k: usize,
) -> (Array2<f64>, Vec<usize>) {
    let d = points.ncols();
    let mut centroids = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        let mut row = centroids.row_mut(a);
        row += &points.row(i);
    }
    for (mut row, &count) in centroids.rows_mut().into_iter().zip(&counts) {
        if count > 0 {
            row /= count as f64;
        }
    }
    (centroids, counts)
}

fn inertia_of(points: ArrayView2<f64>, centroids: &Array2<f64>, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            squared_distance(
                points.row(i).as_slice().expect("contiguous"),
                centroids.row(a).as_slice().expect("contiguous"),
            )
        })
        .sum()
}

/// A single Lloyd run from explicit starting centroids. Exposed so callers
/// can drive exhaustive-seeding comparisons against brute-force optima.
pub fn lloyd_from_centroids(
    points: ArrayView2<f64>,
    initial: Array2<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansFit, KmeansError> {
    let n = points.nrows();
    let k = initial.nrows();
    if n == 0 {
        return Err(KmeansError::EmptyInput);
    }
    if n < k {
        return Err(KmeansError::TooFewPoints { points: n, k });
    }
    let mut centroids = initial;
    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        assign(points, &centroids, &mut assignments);
        let (mut new_centroids, mut counts) = update_centroids(points, &assignments, k);
        if counts.contains(&0)
            && repair_empty_clusters(points, &centroids, &mut assignments, &mut counts)
        {
            let rebuilt = update_centroids(points, &assignments, k);
            new_centroids = rebuilt.0;
        }
        let shift = (0..k)
            .map(|c| {
                squared_distance(
                    centroids.row(c).as_slice().expect("contiguous"),
                    new_centroids.row(c).as_slice().expect("contiguous"),
                )
            })
            .sum::<f64>()
            .sqrt();
        centroids = new_centroids;
        if shift < tol {
            break;
        }
    }
    // assignments built the final centroids, so each centroid is exactly
    // the mean of its members and the inertia is consistent with both
    let inertia = inertia_of(points, &centroids, &assignments);
    Ok(KmeansFit {
        centroids,
        inertia,
        assignments,
        iterations,
    })
}

/// Lloyd's algorithm with k-means++ seeding and `n_init` restarts; returns
/// the restart with minimum inertia (ties to the lowest restart index).
pub fn lloyd(points: ArrayView2<f64>, cfg: &KmeansConfig) -> Result<KmeansFit, KmeansError> {
    cfg.validate()?;
    let n = points.nrows();
    if n == 0 {
        return Err(KmeansError::EmptyInput);
    }
    if n < cfg.k {
        return Err(KmeansError::TooFewPoints { points: n, k: cfg.k });
    }
    let mut best: Option<KmeansFit> = None;
    for restart in 0..cfg.n_init {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("kmeans-restart-{restart}")));
        let init = kmeanspp_init(points, cfg.k, &mut rng);
        let fit = lloyd_from_centroids(points, init, cfg.max_iter, cfg.tol)?;
        let better = match &best {
            None => true,
            Some(b) => fit.inertia < b.inertia,
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// A prototype attractor: normalized feature centroid plus its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Well {
    /// Unit-norm centroid (`c / (||c|| + 1e-8)`).
    pub mu: Vec<f32>,
    pub label: u8,
}

impl Well {
    /// One-hot class vector `y` with `y[label] = 1`.
    pub fn one_hot(&self) -> [f32; NUM_CLASSES] {
        let mut y = [0.0; NUM_CLASSES];
        y[self.label as usize] = 1.0;
        y
    }
}

/// All wells for a classifier: exactly `k` per class, `10 * k` total.
#[derive(Debug, Clone, PartialEq)]
pub struct WellSet {
    pub wells: Vec<Well>,
    pub k: usize,
    pub feature_dim: usize,
}

impl WellSet {
    pub fn len(&self) -> usize {
        self.wells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wells.is_empty()
    }
}

/// Groups feature rows by class label (0..=9).
pub fn group_by_class(
    features: ArrayView2<f32>,
    labels: &[u8],
) -> BTreeMap<u8, Array2<f64>> {
    let mut index_by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        index_by_class.entry(l).or_default().push(i);
    }
    index_by_class
        .into_iter()
        .map(|(label, rows)| {
            let mut mat = Array2::<f64>::zeros((rows.len(), features.ncols()));
            for (dst, &src) in rows.iter().enumerate() {
                for (j, &v) in features.row(src).iter().enumerate() {
                    mat[(dst, j)] = v as f64;
                }
            }
            (label, mat)
        })
        .collect()
}

/// Clusters each class into `cfg.k` prototypes and normalizes the raw
/// centroids into wells. Deterministic under `cfg.seed`; classes are
/// processed in ascending label order.
pub fn build_wells(
    features_by_class: &BTreeMap<u8, Array2<f64>>,
    cfg: &KmeansConfig,
) -> Result<WellSet, KmeansError> {
    cfg.validate()?;
    let mut feature_dim = None;
    let mut wells = Vec::with_capacity(NUM_CLASSES * cfg.k);
    for class in 0..NUM_CLASSES as u8 {
        let points = features_by_class
            .get(&class)
            .ok_or(KmeansError::MissingClass(class))?;
        if points.nrows() < cfg.k {
            return Err(KmeansError::TooFewPoints {
                points: points.nrows(),
                k: cfg.k,
            });
        }
        let dim = points.ncols();
        if *feature_dim.get_or_insert(dim) != dim {
            return Err(KmeansError::InvalidConfig(format!(
                "class {class} feature dim {dim} differs from {}",
                feature_dim.unwrap()
            )));
        }
        let class_cfg = KmeansConfig {
            seed: derive_seed(cfg.seed, &format!("kmeans-class-{class}")),
            ..cfg.clone()
        };
        let fit = lloyd(points.view(), &class_cfg)?;
        for c in 0..cfg.k {
            let centroid = fit.centroids.row(c);
            let centroid = centroid.as_slice().expect("contiguous centroid");
            let norm = centroid.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-8;
            wells.push(Well {
                mu: centroid.iter().map(|&v| (v / norm) as f32).collect(),
                label: class,
            });
        }
    }
    Ok(WellSet {
        wells,
        k: cfg.k,
        feature_dim: feature_dim.expect("ten classes processed"),
    })
}

/// Minimum and mean pairwise Euclidean distance between well centroids
/// (feature parts only), over all unordered pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellDistances {
    pub min: f64,
    pub mean: f64,
}

pub fn well_distances(set: &WellSet) -> Result<WellDistances, KmeansError> {
    let m = set.wells.len();
    if m < 2 {
        return Err(KmeansError::SingleWell);
    }
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let d = set.wells[i]
                .mu
                .iter()
                .zip(&set.wells[j].mu)
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum::<f64>()
                .sqrt();
            if d < min {
                min = d;
            }
            sum += d;
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    Ok(WellDistances {
        min,
        mean: sum / pairs,
    })
}

// ---------------------------------------------------------------------------
// Wells file ("HWWL"): versioned little-endian binary.

const WELLS_MAGIC: &[u8; 4] = b"HWWL";
const WELLS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WellsFileError {
    #[error("bad wells-file magic")]
    BadMagic,
    #[error("wells-file version {found} unsupported (expected {WELLS_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("corrupt wells file: {0}")]
    Corrupt(String),
}

impl WellSet {
    /// Serializes as `{magic, version, M, K, feature_dim, per-well f32
    /// centroid + u8 label}`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WELLS_MAGIC);
        out.extend_from_slice(&WELLS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.wells.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        for well in &self.wells {
            for &v in &well.mu {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(well.label);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WellsFileError> {
        let need = |n: usize, pos: usize| {
            if bytes.len() < pos + n {
                Err(WellsFileError::Corrupt(format!(
                    "truncated at byte {pos} (wanted {n} more)"
                )))
            } else {
                Ok(())
            }
        };
        need(4, 0)?;
        if &bytes[..4] != WELLS_MAGIC {
            return Err(WellsFileError::BadMagic);
        }
        need(4, 4)?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != WELLS_VERSION {
            return Err(WellsFileError::VersionMismatch { found: version });
        }
        need(12, 8)?;
        let m = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let k = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let feature_dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        let well_size = feature_dim * 4 + 1;
        need(m * well_size, 20)?;
        if bytes.len() != 20 + m * well_size {
            return Err(WellsFileError::Corrupt("trailing bytes".into()));
        }
        let mut wells = Vec::with_capacity(m);
        let mut pos = 20;
        for _ in 0..m {
            let mut mu = Vec::with_capacity(feature_dim);
            for _ in 0..feature_dim {
                mu.push(f32::from_le_bytes(
                    bytes[pos..pos + 4].try_into().expect("4 bytes"),
                ));
                pos += 4;
            }
            let label = bytes[pos];
            pos += 1;
            if label >= NUM_CLASSES as u8 {
                return Err(WellsFileError::Corrupt(format!("label {label} out of range")));
            }
            wells.push(Well { mu, label });
        }
        Ok(Self {
            wells,
            k,
            feature_dim,
        })
    }
}
