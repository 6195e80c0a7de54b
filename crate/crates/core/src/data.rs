//! Dataset ingestion: IDX-format parsing for the MNIST-family benchmarks and
//! a procedural synthetic dataset for runs without downloaded data.
//!
//! Pixels are stored normalized to `[0, 1]` (raw byte / 255). Labels are
//! digits `0..=9`. The on-disk layout expected by [`load_dataset`] is
//! `<root>/<dataset>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::mix;

pub const IMG_ROWS: usize = 28;
pub const IMG_COLS: usize = 28;
pub const IMG_PIXELS: usize = IMG_ROWS * IMG_COLS;
pub const NUM_LABELS: usize = 10;

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;

/// One 28x28 grayscale image, row-major, pixels in `[0, 1]`.
pub type Image = [f32; IMG_PIXELS];

/// A labelled sample collection with parallel image and label vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
}

impl SampleSet {
    pub fn with_capacity(n: usize) -> Self {
        SampleSet {
            images: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, image: Image, label: u8) {
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn extend_from(&mut self, other: &SampleSet) {
        self.images.extend_from_slice(&other.images);
        self.labels.extend_from_slice(&other.labels);
    }

    /// Per-label sample counts.
    pub fn label_histogram(&self) -> [usize; NUM_LABELS] {
        let mut hist = [0usize; NUM_LABELS];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Kmnist,
    Synthetic,
}

impl DatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
            DatasetName::Kmnist => "kmnist",
            DatasetName::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion-mnist" => Ok(DatasetName::FashionMnist),
            "kmnist" => Ok(DatasetName::Kmnist),
            "synthetic" => Ok(DatasetName::Synthetic),
            other => Err(Error::config(
                "dataset",
                format!("unknown dataset `{other}`, expected mnist | fashion-mnist | kmnist | synthetic"),
            )),
        }
    }
}

/// A full train/test dataset before client partitioning.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: DatasetName,
    pub train: SampleSet,
    pub test: SampleSet,
}

/// Decoded content of an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images(Vec<Image>),
    Labels(Vec<u8>),
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::TruncatedPayload {
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX byte buffer into images (magic 0x803) or labels (magic 0x801).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_be_u32(bytes, 0)?;
    match magic {
        MAGIC_LABELS => {
            let count = read_be_u32(bytes, 4)? as usize;
            let payload = &bytes[8..];
            if payload.len() != count {
                return Err(Error::TruncatedPayload {
                    expected: count,
                    actual: payload.len(),
                });
            }
            for &b in payload {
                if b > 9 {
                    return Err(Error::InvalidLabel { value: b });
                }
            }
            Ok(IdxData::Labels(payload.to_vec()))
        }
        MAGIC_IMAGES => {
            let count = read_be_u32(bytes, 4)? as usize;
            let rows = read_be_u32(bytes, 8)? as usize;
            let cols = read_be_u32(bytes, 12)? as usize;
            if rows != IMG_ROWS || cols != IMG_COLS {
                return Err(Error::DimensionMismatch { rows, cols });
            }
            let payload = &bytes[16..];
            if payload.len() != count * IMG_PIXELS {
                return Err(Error::TruncatedPayload {
                    expected: count * IMG_PIXELS,
                    actual: payload.len(),
                });
            }
            let mut images = Vec::with_capacity(count);
            for chunk in payload.chunks_exact(IMG_PIXELS) {
                let mut img = [0f32; IMG_PIXELS];
                for (dst, &src) in img.iter_mut().zip(chunk) {
                    *dst = src as f32 / 255.0;
                }
                images.push(img);
            }
            Ok(IdxData::Images(images))
        }
        other => Err(Error::UnknownMagic { magic: other }),
    }
}

/// Serializes images back to IDX bytes, inverting the `/255` normalization.
pub fn write_idx_images(images: &[Image]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMG_PIXELS);
    out.extend_from_slice(&MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(IMG_ROWS as u32).to_be_bytes());
    out.extend_from_slice(&(IMG_COLS as u32).to_be_bytes());
    for img in images {
        for &p in img.iter() {
            out.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Serializes labels back to IDX bytes.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

const CANONICAL_FILES: [(&str, &str); 2] = [
    ("train", "train"),
    ("test", "t10k"),
];

fn expected_partition_size(partition: &'static str) -> usize {
    match partition {
        "train" => 60_000,
        _ => 10_000,
    }
}

fn read_partition(dir: &Path, prefix: &str, partition: &'static str) -> Result<SampleSet> {
    let images_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    for path in [&images_path, &labels_path] {
        if !path.is_file() {
            return Err(Error::MissingFile { path: path.clone() });
        }
    }
    let images = match parse_idx(&std::fs::read(&images_path)?)? {
        IdxData::Images(i) => i,
        IdxData::Labels(_) => {
            return Err(Error::UnknownMagic {
                magic: MAGIC_LABELS,
            })
        }
    };
    let labels = match parse_idx(&std::fs::read(&labels_path)?)? {
        IdxData::Labels(l) => l,
        IdxData::Images(_) => {
            return Err(Error::UnknownMagic {
                magic: MAGIC_IMAGES,
            })
        }
    };
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            partition,
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(SampleSet { images, labels })
}

/// Loads one of the file-based datasets from `<root>/<name>/`.
///
/// The three published datasets all ship 60k train / 10k test samples; sizes
/// are verified at load. The synthetic dataset is generated, not loaded; use
/// [`synth_dataset`].
pub fn load_dataset(name: DatasetName, root: &Path) -> Result<RawDataset> {
    if name == DatasetName::Synthetic {
        return Err(Error::config(
            "dataset",
            "synthetic dataset is generated in-process, not loaded from disk",
        ));
    }
    let dir = root.join(name.as_str());
    let mut partitions = Vec::new();
    for (partition, prefix) in CANONICAL_FILES {
        let set = read_partition(&dir, prefix, partition)?;
        let expected = expected_partition_size(partition);
        if set.len() != expected {
            return Err(Error::PartitionSize {
                dataset: name.to_string(),
                partition,
                expected,
                actual: set.len(),
            });
        }
        partitions.push(set);
    }
    let test = partitions.pop().expect("two partitions");
    let train = partitions.pop().expect("two partitions");
    Ok(RawDataset { name, train, test })
}

const TAG_SYNTH: u64 = 0x5359;
const TRAIN_PART: u64 = 0;
const TEST_PART: u64 = 1;

/// Glyph cell centers: two rows of five, one cell per label.
fn glyph_center(label: u8) -> (usize, usize) {
    let row = if label < 5 { 7 } else { 20 };
    let col = 4 + 5 * (label as usize % 5);
    (row, col)
}

fn synth_image(label: u8, rng: &mut ChaCha8Rng) -> Image {
    let mut img = [0f32; IMG_PIXELS];
    for p in img.iter_mut() {
        *p = rng.random_range(0.0..0.2f32);
    }
    let (base_row, base_col) = glyph_center(label);
    let row = (base_row as i32 + rng.random_range(-1..=1)) as usize;
    let col = (base_col as i32 + rng.random_range(-1..=1)) as usize;

    // Filled disc, radius 2.4 px.
    for r in row.saturating_sub(3)..(row + 4).min(IMG_ROWS) {
        for c in col.saturating_sub(3)..(col + 4).min(IMG_COLS) {
            let dr = r as f32 - row as f32;
            let dc = c as f32 - col as f32;
            if dr * dr + dc * dc <= 2.4 * 2.4 {
                img[r * IMG_COLS + c] = 1.0;
            }
        }
    }
    // Parity bar: horizontal for even labels, vertical for odd.
    if label % 2 == 0 {
        for dc in -3i32..=3 {
            let c = (col as i32 + dc).clamp(0, IMG_COLS as i32 - 1) as usize;
            let p = &mut img[row * IMG_COLS + c];
            *p = p.max(0.85);
        }
    } else {
        for dr in -3i32..=3 {
            let r = (row as i32 + dr).clamp(0, IMG_ROWS as i32 - 1) as usize;
            let p = &mut img[r * IMG_COLS + col];
            *p = p.max(0.85);
        }
    }
    img
}

fn synth_partition(seed: u64, partition: u64, per_label: usize) -> SampleSet {
    let mut set = SampleSet::with_capacity(per_label * NUM_LABELS);
    for label in 0..NUM_LABELS as u8 {
        for idx in 0..per_label {
            let stream = mix(&[seed, TAG_SYNTH, partition, label as u64, idx as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            set.push(synth_image(label, &mut rng), label);
        }
    }
    set
}

/// Generates the deterministic procedural dataset: ten glyph classes (a disc
/// plus an orientation bar at a label-specific grid cell) over a noise floor.
///
/// The train partition holds `per_label` samples per label; the test
/// partition holds `max(ceil(per_label / 5), 1)` per label. Identical seeds
/// yield bit-identical datasets.
pub fn synth_dataset(seed: u64, per_label: usize) -> RawDataset {
    assert!(per_label >= 1, "per_label must be >= 1");
    let test_per_label = per_label.div_ceil(5).max(1);
    RawDataset {
        name: DatasetName::Synthetic,
        train: synth_partition(seed, TRAIN_PART, per_label),
        test: synth_partition(seed, TEST_PART, test_per_label),
    }
}

/// Shared handle to a per-class test pool.
pub type SharedSampleSet = Arc<SampleSet>;
