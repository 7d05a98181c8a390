//! MNIST IDX parsing, pixel normalization and deterministic batching.
//!
//! Input is the four standard IDX files (optionally gzip-compressed; the
//! loader sniffs the 0x1f8b magic and decompresses transparently). Pixels
//! are mapped to `[-1, 1]` via `(b/255 - 0.5) / 0.5` and labels are
//! validated to `0..=9` at load time.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array4, ArrayView4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::seeds::derive_seed;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX stream: needed {needed} bytes, had {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("unsupported image dims {rows}x{cols}, only 28x28 is handled")]
    UnsupportedDims { rows: u32, cols: u32 },
    #[error("label {value} at index {index} outside 0..=9")]
    BadLabel { index: usize, value: u8 },
    #[error("image/label counts differ: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("split is empty")]
    EmptySplit,
    #[error("batch size must be >= 1")]
    ZeroBatchSize,
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Raw images exactly as stored in an IDX file: `count` rows of 784 bytes.
#[derive(Debug, Clone)]
pub struct RawImages {
    pub count: usize,
    /// Row-major pixel bytes, `count * 784` long.
    pub data: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        &self.data[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::TruncatedFile {
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image container (magic 0x00000803).
///
/// Only 28x28 images are accepted. Never reads past the declared count;
/// trailing bytes are ignored.
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages, DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)?;
    let cols = read_u32_be(bytes, 12)?;
    if rows != IMAGE_SIDE as u32 || cols != IMAGE_SIDE as u32 {
        return Err(DataError::UnsupportedDims { rows, cols });
    }
    let needed = 16 + count * IMAGE_PIXELS;
    if bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            needed,
            available: bytes.len(),
        });
    }
    Ok(RawImages {
        count,
        data: bytes[16..needed].to_vec(),
    })
}

/// Parses an IDX label container (magic 0x00000801).
///
/// Values are returned as stored; range validation against `0..=9` happens
/// when a [`DatasetSplit`] is assembled.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(DataError::TruncatedFile {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Maps a raw pixel byte to `[-1, 1]`: `(b/255 - 0.5) / 0.5`.
#[inline]
pub fn normalize_pixel(b: u8) -> f32 {
    (b as f32 / 255.0 - 0.5) / 0.5
}

/// Inverse of [`normalize_pixel`], used by round-trip checks.
#[inline]
pub fn denormalize_pixel(v: f32) -> f32 {
    (v * 0.5 + 0.5) * 255.0
}

/// Normalizes a slice of raw bytes to `[-1, 1]`.
pub fn normalize_pixels(raw: &[u8]) -> Vec<f32> {
    raw.iter().map(|&b| normalize_pixel(b)).collect()
}

/// Reads a file, transparently gunzipping when it starts with 0x1f8b.
pub fn read_idx_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let wrap = |source: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path).map_err(wrap)?.read_to_end(&mut raw).map_err(wrap)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(wrap)?;
        return Ok(out);
    }
    Ok(raw)
}

/// One normalized mini-batch: pixels in `[-1, 1]`, labels in `0..=9`.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    /// Shape `(N, 1, 28, 28)`.
    pub pixels: Array4<f32>,
    pub labels: Vec<u8>,
}

impl ImageBatch {
    pub fn new(pixels: Array4<f32>, labels: Vec<u8>) -> Result<Self, DataError> {
        if pixels.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: pixels.shape()[0],
                labels: labels.len(),
            });
        }
        for (index, &value) in labels.iter().enumerate() {
            if value >= NUM_CLASSES as u8 {
                return Err(DataError::BadLabel { index, value });
            }
        }
        debug_assert!(pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
        Ok(Self { pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view(&self) -> ArrayView4<'_, f32> {
        self.pixels.view()
    }
}

/// One side of the dataset (train or test), already normalized and
/// subset-selected. Immutable after load; share freely across threads.
#[derive(Debug, Clone)]
pub struct SplitPart {
    /// Shape `(N, 1, 28, 28)`, values in `[-1, 1]`.
    pub pixels: Array4<f32>,
    pub labels: Vec<u8>,
}

impl SplitPart {
    fn from_raw(
        images: RawImages,
        labels: Vec<u8>,
        subset: Option<usize>,
        seed: u64,
    ) -> Result<Self, DataError> {
        if images.count != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        for (index, &value) in labels.iter().enumerate() {
            if value >= NUM_CLASSES as u8 {
                return Err(DataError::BadLabel { index, value });
            }
        }
        // Subset selection: first `subset` indices after a seeded shuffle,
        // so small runs see a class-balanced-in-expectation sample.
        let mut order: Vec<usize> = (0..images.count).collect();
        if subset.is_some() {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        let take = subset.unwrap_or(images.count).min(images.count);
        order.truncate(take);

        let mut pixels = Array4::<f32>::zeros((take, 1, IMAGE_SIDE, IMAGE_SIDE));
        let mut out_labels = Vec::with_capacity(take);
        for (row, &src) in order.iter().enumerate() {
            let img = images.image(src);
            let mut view = pixels.index_axis_mut(ndarray::Axis(0), row);
            let flat = view.as_slice_mut().expect("contiguous image row");
            for (dst, &b) in flat.iter_mut().zip(img) {
                *dst = normalize_pixel(b);
            }
            out_labels.push(labels[src]);
        }
        Ok(Self {
            pixels,
            labels: out_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train and test sides of MNIST with the seed that selected them.
///
/// Same seed and subset sizes give the identical sample ordering; train and
/// test stay disjoint because they come from separate IDX files.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: SplitPart,
    pub test: SplitPart,
    pub seed: u64,
}

/// File names of the four standard MNIST containers inside a data dir.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{stem}.gz"))
    }
}

impl DatasetSplit {
    /// Loads the four IDX files from `dir` (plain or `.gz`), applying the
    /// per-split seeded subset selection.
    pub fn load(
        dir: &Path,
        subset_train: Option<usize>,
        subset_test: Option<usize>,
        seed: u64,
    ) -> Result<Self, DataError> {
        let train_images = parse_idx_images(&read_idx_file(&find_idx(dir, TRAIN_IMAGES))?)?;
        let train_labels = parse_idx_labels(&read_idx_file(&find_idx(dir, TRAIN_LABELS))?)?;
        let test_images = parse_idx_images(&read_idx_file(&find_idx(dir, TEST_IMAGES))?)?;
        let test_labels = parse_idx_labels(&read_idx_file(&find_idx(dir, TEST_LABELS))?)?;
        let train = SplitPart::from_raw(
            train_images,
            train_labels,
            subset_train,
            derive_seed(seed, "subset-train"),
        )?;
        let test = SplitPart::from_raw(
            test_images,
            test_labels,
            subset_test,
            derive_seed(seed, "subset-test"),
        )?;
        Ok(Self { train, test, seed })
    }
}

/// Cuts a split part into batches of `batch_size` (last one may be short).
///
/// With `shuffle_seed = Some(s)` the order is a pure function of `s`;
/// with `None` the stored order is kept. The union of the returned batches
/// is exactly a permutation of the part.
pub fn make_batches(
    part: &SplitPart,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<ImageBatch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::ZeroBatchSize);
    }
    let n = part.len();
    if n == 0 {
        return Err(DataError::EmptySplit);
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let mut batches = Vec::with_capacity(n.div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut pixels = Array4::<f32>::zeros((chunk.len(), 1, IMAGE_SIDE, IMAGE_SIDE));
        let mut labels = Vec::with_capacity(chunk.len());
        for (row, &src) in chunk.iter().enumerate() {
            pixels
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&part.pixels.index_axis(ndarray::Axis(0), src));
            labels.push(part.labels[src]);
        }
        batches.push(ImageBatch::new(pixels, labels)?);
    }
    Ok(batches)
}
