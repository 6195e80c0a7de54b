//! The 784-200-10 ReLU classifier: forward pass, softmax cross-entropy,
//! analytic backpropagation, mini-batch SGD, and accuracy evaluation.
//!
//! Parameters live in `f64`; the checkpoint format on disk is a flat
//! little-endian `f32` vector behind an 8-byte header (magic + dimension).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, SampleSet, IMG_PIXELS};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = IMG_PIXELS;
pub const HIDDEN_DIM: usize = 200;
pub const OUTPUT_DIM: usize = 10;

/// Total flat parameter dimension: 784*200 + 200 + 200*10 + 10.
pub const PARAM_DIM: usize = INPUT_DIM * HIDDEN_DIM + HIDDEN_DIM + HIDDEN_DIM * OUTPUT_DIM + OUTPUT_DIM;

const CHECKPOINT_MAGIC: [u8; 4] = *b"FPV1";

/// Weights and biases of the two-layer network, also viewable as one flat
/// vector (w1 row-major, b1, w2 row-major, b2).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        ModelParams {
            w1: Array2::zeros((INPUT_DIM, HIDDEN_DIM)),
            b1: Array1::zeros(HIDDEN_DIM),
            w2: Array2::zeros((HIDDEN_DIM, OUTPUT_DIM)),
            b2: Array1::zeros(OUTPUT_DIM),
        }
    }

    /// Seeded init: weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// per layer, biases zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (INPUT_DIM as f64).sqrt();
        let w1 = Array2::from_shape_vec(
            (INPUT_DIM, HIDDEN_DIM),
            (0..INPUT_DIM * HIDDEN_DIM)
                .map(|_| rng.random_range(-bound1..bound1))
                .collect(),
        )
        .expect("shape");
        let bound2 = 1.0 / (HIDDEN_DIM as f64).sqrt();
        let w2 = Array2::from_shape_vec(
            (HIDDEN_DIM, OUTPUT_DIM),
            (0..HIDDEN_DIM * OUTPUT_DIM)
                .map(|_| rng.random_range(-bound2..bound2))
                .collect(),
        )
        .expect("shape");
        ModelParams {
            w1,
            b1: Array1::zeros(HIDDEN_DIM),
            w2,
            b2: Array1::zeros(OUTPUT_DIM),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(PARAM_DIM);
        flat.extend(self.w1.iter());
        flat.extend(self.b1.iter());
        flat.extend(self.w2.iter());
        flat.extend(self.b2.iter());
        flat
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAM_DIM {
            return Err(Error::BadCheckpoint {
                reason: format!("flat vector has {} entries, expected {PARAM_DIM}", flat.len()),
            });
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let slice = flat[pos..pos + n].to_vec();
            pos += n;
            slice
        };
        Ok(ModelParams {
            w1: Array2::from_shape_vec((INPUT_DIM, HIDDEN_DIM), take(INPUT_DIM * HIDDEN_DIM))
                .expect("shape"),
            b1: Array1::from_vec(take(HIDDEN_DIM)),
            w2: Array2::from_shape_vec((HIDDEN_DIM, OUTPUT_DIM), take(HIDDEN_DIM * OUTPUT_DIM))
                .expect("shape"),
            b2: Array1::from_vec(take(OUTPUT_DIM)),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    /// In-place `self += scale * other`.
    pub fn scaled_add(&mut self, scale: f64, other: &ModelParams) {
        self.w1.scaled_add(scale, &other.w1);
        self.b1.scaled_add(scale, &other.b1);
        self.w2.scaled_add(scale, &other.w2);
        self.b2.scaled_add(scale, &other.b2);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&CHECKPOINT_MAGIC)?;
        file.write_all(&(PARAM_DIM as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(PARAM_DIM * 4);
        for v in self.to_flat() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut header = [0u8; 8];
        file.read_exact(&mut header)?;
        if header[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadCheckpoint {
                reason: "magic bytes do not match".to_string(),
            });
        }
        let dim = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;
        if dim != PARAM_DIM {
            return Err(Error::BadCheckpoint {
                reason: format!("checkpoint dimension {dim}, expected {PARAM_DIM}"),
            });
        }
        let mut buf = vec![0u8; dim * 4];
        file.read_exact(&mut buf)?;
        let flat: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_flat(&flat)
    }
}

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

fn images_to_matrix(images: &[&Image]) -> Array2<f64> {
    let n = images.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    for (i, img) in images.iter().enumerate() {
        for (j, &p) in img.iter().enumerate() {
            x[[i, j]] = p as f64;
        }
    }
    x
}

struct Forward {
    z1: Array2<f64>,
    a1: Array2<f64>,
    /// Softmax probabilities per row.
    probs: Array2<f64>,
    loss: f64,
}

fn forward(params: &ModelParams, x: &Array2<f64>, labels: &[u8]) -> Result<Forward> {
    let z1 = x.dot(&params.w1) + &params.b1;
    let a1 = z1.mapv(|v| v.max(0.0));
    let z2 = a1.dot(&params.w2) + &params.b2;

    let n = labels.len();
    let mut probs = z2;
    let mut loss = 0.0;
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
        loss -= row[label as usize].ln();
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(Forward {
        z1,
        a1,
        probs,
        loss,
    })
}

fn backward(params: &ModelParams, x: &Array2<f64>, labels: &[u8], fwd: &Forward) -> ModelParams {
    let n = labels.len() as f64;
    let mut dz2 = fwd.probs.clone();
    for (mut row, &label) in dz2.rows_mut().into_iter().zip(labels) {
        row[label as usize] -= 1.0;
    }
    dz2.mapv_inplace(|v| v / n);

    let gw2 = fwd.a1.t().dot(&dz2);
    let gb2 = dz2.sum_axis(Axis(0));
    let mut dz1 = dz2.dot(&params.w2.t());
    dz1.zip_mut_with(&fwd.z1, |d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
    let gw1 = x.t().dot(&dz1);
    let gb1 = dz1.sum_axis(Axis(0));
    ModelParams {
        w1: gw1,
        b1: gb1,
        w2: gw2,
        b2: gb2,
    }
}

/// Mean softmax cross-entropy over the batch and its exact analytic gradient.
pub fn forward_loss_grad(
    params: &ModelParams,
    images: &[Image],
    labels: &[u8],
) -> Result<(f64, ModelParams)> {
    assert!(!images.is_empty(), "batch must be non-empty");
    assert_eq!(images.len(), labels.len());
    let refs: Vec<&Image> = images.iter().collect();
    let x = images_to_matrix(&refs);
    let fwd = forward(params, &x, labels)?;
    let grads = backward(params, &x, labels, &fwd);
    Ok((fwd.loss, grads))
}

const EVAL_CHUNK: usize = 512;

/// Mean cross-entropy of `params` over a whole sample set, without gradients.
pub fn mean_loss(params: &ModelParams, data: &SampleSet) -> Result<f64> {
    assert!(!data.is_empty(), "data must be non-empty");
    let mut total = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let refs: Vec<&Image> = data.images[start..end].iter().collect();
        let x = images_to_matrix(&refs);
        let fwd = forward(params, &x, &data.labels[start..end])?;
        total += fwd.loss * (end - start) as f64;
    }
    Ok(total / data.len() as f64)
}

/// Softmax class probabilities per sample.
pub fn predict_probs(params: &ModelParams, images: &[Image]) -> Result<Array2<f64>> {
    let refs: Vec<&Image> = images.iter().collect();
    let x = images_to_matrix(&refs);
    let labels = vec![0u8; images.len()];
    Ok(forward(params, &x, &labels)?.probs)
}

/// Result of a local training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: ModelParams,
    /// Mean of all mini-batch losses seen during the run.
    pub mean_loss: f64,
}

/// Plain mini-batch SGD. Data is reshuffled each epoch with the generator
/// seeded from `cfg.seed`; the input parameters are left unmodified.
pub fn train_epochs(params: &ModelParams, data: &SampleSet, cfg: &TrainConfig) -> Result<TrainRun> {
    assert!(!data.is_empty(), "training data must be non-empty");
    assert!(cfg.epochs >= 1, "epochs must be >= 1");
    assert!(cfg.batch_size >= 1, "batch_size must be >= 1");
    let mut p = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let lr = cfg.learning_rate;
    for _ in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let refs: Vec<&Image> = chunk.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
            let x = images_to_matrix(&refs);
            let fwd = forward(&p, &x, &labels)?;
            loss_sum += fwd.loss;
            batches += 1;
            if lr != 0.0 {
                let grads = backward(&p, &x, &labels, &fwd);
                p.scaled_add(-lr, &grads);
            }
        }
    }
    Ok(TrainRun {
        params: p,
        mean_loss: loss_sum / batches as f64,
    })
}

/// Fraction of samples whose argmax logit equals the label; argmax ties break
/// toward the lowest label index.
pub fn evaluate(params: &ModelParams, data: &SampleSet) -> f64 {
    assert!(!data.is_empty(), "evaluation data must be non-empty");
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let refs: Vec<&Image> = data.images[start..end].iter().collect();
        let x = images_to_matrix(&refs);
        let z1 = x.dot(&params.w1) + &params.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let z2 = a1.dot(&params.w2) + &params.b2;
        for (row, &label) in z2.rows().into_iter().zip(&data.labels[start..end]) {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
    }
    correct as f64 / data.len() as f64
}
