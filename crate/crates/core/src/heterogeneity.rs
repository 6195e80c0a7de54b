//! Client partitioning under the five-way data-heterogeneity taxonomy.
//!
//! A scenario assigns each client exactly one heterogeneity class and applies
//! that class's transformation to the client's train data and to a per-class
//! shared test pool:
//!
//! * concept shift on features — image rotation (0/90/180/270 degrees)
//! * concept shift on labels — label-pair swaps
//! * feature distribution skew — grayscale erosion / dilation / untouched
//! * label distribution skew — all but two dominant labels down-sampled
//! * quantity skew — per-client data volume scaled, labels kept balanced
//!
//! Partitioning is deterministic given `(dataset, scenario, seed)` and draws
//! every client's samples from disjoint slices of per-label shuffled pools.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, RawDataset, SampleSet, SharedSampleSet, IMG_COLS, IMG_ROWS, NUM_LABELS};
use crate::error::{Error, Result};
use crate::seed::mix;

/// Grayscale morphology operation applied per heterogeneity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    None,
    Erode,
    Dilate,
}

/// Scenario selector, e.g. for CLI flags and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    ConceptShiftFeatures,
    ConceptShiftLabels,
    FeaturesDistributionSkew,
    LabelsDistributionSkew,
    QuantitySkew,
    Iid,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::ConceptShiftFeatures => "concept-shift-features",
            ScenarioKind::ConceptShiftLabels => "concept-shift-labels",
            ScenarioKind::FeaturesDistributionSkew => "features-distribution-skew",
            ScenarioKind::LabelsDistributionSkew => "labels-distribution-skew",
            ScenarioKind::QuantitySkew => "quantity-skew",
            ScenarioKind::Iid => "iid",
        }
    }

    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::ConceptShiftFeatures,
        ScenarioKind::ConceptShiftLabels,
        ScenarioKind::FeaturesDistributionSkew,
        ScenarioKind::LabelsDistributionSkew,
        ScenarioKind::QuantitySkew,
        ScenarioKind::Iid,
    ];
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| {
                Error::config("scenario", format!("unknown scenario `{s}`"))
            })
    }
}

/// A fully parameterized heterogeneity scenario. Class `c` of a scenario uses
/// the `c`-th entry of its parameter list.
#[derive(Debug, Clone, PartialEq)]
pub enum HeterogeneityScenario {
    ConceptShiftFeatures { rotations: Vec<u16> },
    ConceptShiftLabels { swaps: Vec<(u8, u8)> },
    FeaturesDistributionSkew { ops: Vec<MorphOp> },
    LabelsDistributionSkew { dominant: Vec<(u8, u8)>, retain: f64 },
    QuantitySkew { fractions: Vec<f64> },
    Iid,
}

impl HeterogeneityScenario {
    /// The standard parameterization of each scenario kind: 4 rotations,
    /// 6 label swaps, 3 morphology classes, 4 dominant-label pairs with all
    /// other labels retained at 0.1%, and 4 volume fractions descending
    /// linearly from 100% to 20%.
    pub fn standard(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::ConceptShiftFeatures => HeterogeneityScenario::ConceptShiftFeatures {
                rotations: vec![0, 90, 180, 270],
            },
            ScenarioKind::ConceptShiftLabels => HeterogeneityScenario::ConceptShiftLabels {
                swaps: vec![(1, 7), (2, 7), (4, 7), (3, 8), (5, 6), (7, 9)],
            },
            ScenarioKind::FeaturesDistributionSkew => {
                HeterogeneityScenario::FeaturesDistributionSkew {
                    ops: vec![MorphOp::Erode, MorphOp::Dilate, MorphOp::None],
                }
            }
            ScenarioKind::LabelsDistributionSkew => HeterogeneityScenario::LabelsDistributionSkew {
                dominant: vec![(0, 1), (2, 3), (4, 5), (6, 7)],
                retain: 0.001,
            },
            ScenarioKind::QuantitySkew => HeterogeneityScenario::QuantitySkew {
                fractions: (0..4).map(|c| 1.0 - c as f64 * (0.8 / 3.0)).collect(),
            },
            ScenarioKind::Iid => HeterogeneityScenario::Iid,
        }
    }

    /// Same as [`standard`](Self::standard) but with an overridden retain
    /// fraction for the label-skew scenario.
    pub fn standard_with_retain(kind: ScenarioKind, retain: f64) -> Self {
        match Self::standard(kind) {
            HeterogeneityScenario::LabelsDistributionSkew { dominant, .. } => {
                HeterogeneityScenario::LabelsDistributionSkew { dominant, retain }
            }
            other => other,
        }
    }

    pub fn kind(&self) -> ScenarioKind {
        match self {
            HeterogeneityScenario::ConceptShiftFeatures { .. } => ScenarioKind::ConceptShiftFeatures,
            HeterogeneityScenario::ConceptShiftLabels { .. } => ScenarioKind::ConceptShiftLabels,
            HeterogeneityScenario::FeaturesDistributionSkew { .. } => {
                ScenarioKind::FeaturesDistributionSkew
            }
            HeterogeneityScenario::LabelsDistributionSkew { .. } => {
                ScenarioKind::LabelsDistributionSkew
            }
            HeterogeneityScenario::QuantitySkew { .. } => ScenarioKind::QuantitySkew,
            HeterogeneityScenario::Iid => ScenarioKind::Iid,
        }
    }

    /// Number of heterogeneity classes K.
    pub fn class_count(&self) -> usize {
        match self {
            HeterogeneityScenario::ConceptShiftFeatures { rotations } => rotations.len(),
            HeterogeneityScenario::ConceptShiftLabels { swaps } => swaps.len(),
            HeterogeneityScenario::FeaturesDistributionSkew { ops } => ops.len(),
            HeterogeneityScenario::LabelsDistributionSkew { dominant, .. } => dominant.len(),
            HeterogeneityScenario::QuantitySkew { fractions } => fractions.len(),
            HeterogeneityScenario::Iid => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count() == 0 {
            return Err(Error::config("scenario", "class list is empty"));
        }
        match self {
            HeterogeneityScenario::ConceptShiftFeatures { rotations } => {
                for &deg in rotations {
                    if !matches!(deg, 0 | 90 | 180 | 270) {
                        return Err(Error::InvalidAngle { degrees: deg });
                    }
                }
            }
            HeterogeneityScenario::ConceptShiftLabels { swaps } => {
                for &(a, b) in swaps {
                    if a == b || a > 9 || b > 9 {
                        return Err(Error::config(
                            "scenario",
                            format!("invalid swap pair ({a}, {b})"),
                        ));
                    }
                }
            }
            HeterogeneityScenario::LabelsDistributionSkew { dominant, retain } => {
                if !(0.0..=1.0).contains(retain) {
                    return Err(Error::config("retain", "must lie in [0, 1]"));
                }
                for &(a, b) in dominant {
                    if a == b || a > 9 || b > 9 {
                        return Err(Error::config(
                            "scenario",
                            format!("invalid dominant pair ({a}, {b})"),
                        ));
                    }
                }
            }
            HeterogeneityScenario::QuantitySkew { fractions } => {
                for &f in fractions {
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(Error::config("scenario", "fractions must lie in (0, 1]"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// One simulated client: its private train split, a test pool shared with the
/// other clients of its heterogeneity class, and the ground-truth class id.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: usize,
    pub het_class: usize,
    pub train: SampleSet,
    pub test: SharedSampleSet,
}

impl ClientDataset {
    pub fn train_size(&self) -> usize {
        self.train.len()
    }
}

/// Rotates one image by a right-angle multiple. 90 degrees maps source
/// `(r, c)` to destination `(c, H-1-r)`.
pub fn apply_rotation(img: &Image, degrees: u16) -> Result<Image> {
    fn rot90(img: &Image) -> Image {
        let mut out = [0f32; IMG_ROWS * IMG_COLS];
        for r in 0..IMG_ROWS {
            for c in 0..IMG_COLS {
                out[c * IMG_COLS + (IMG_ROWS - 1 - r)] = img[r * IMG_COLS + c];
            }
        }
        out
    }
    match degrees {
        0 => Ok(*img),
        90 => Ok(rot90(img)),
        180 => Ok(rot90(&rot90(img))),
        270 => Ok(rot90(&rot90(&rot90(img)))),
        other => Err(Error::InvalidAngle { degrees: other }),
    }
}

/// Swaps the two labels of `pair`, leaving every other label unchanged.
pub fn apply_label_swap(label: u8, pair: (u8, u8)) -> u8 {
    if label == pair.0 {
        pair.1
    } else if label == pair.1 {
        pair.0
    } else {
        label
    }
}

/// Single-pass 3x3 grayscale morphology; out-of-bounds neighbors count as
/// background (0.0).
pub fn apply_morphology(img: &Image, op: MorphOp) -> Image {
    let fold: fn(f32, f32) -> f32 = match op {
        MorphOp::None => return *img,
        MorphOp::Erode => f32::min,
        MorphOp::Dilate => f32::max,
    };
    let mut out = [0f32; IMG_ROWS * IMG_COLS];
    for r in 0..IMG_ROWS as i32 {
        for c in 0..IMG_COLS as i32 {
            let mut acc = img[(r * IMG_COLS as i32 + c) as usize];
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    let v = if nr < 0 || nr >= IMG_ROWS as i32 || nc < 0 || nc >= IMG_COLS as i32 {
                        0.0
                    } else {
                        img[(nr * IMG_COLS as i32 + nc) as usize]
                    };
                    acc = fold(acc, v);
                }
            }
            out[(r * IMG_COLS as i32 + c) as usize] = acc;
        }
    }
    out
}

/// Keeps `keep_of(label, count)` samples of each label, chosen by seeded draw,
/// preserving the input order of the survivors.
fn downsample_per_label(
    samples: SampleSet,
    rng: &mut ChaCha8Rng,
    keep_of: impl Fn(u8, usize) -> usize,
) -> SampleSet {
    let hist = samples.label_histogram();
    let mut keep_flags = vec![false; samples.len()];
    for label in 0..NUM_LABELS as u8 {
        let positions: Vec<usize> = samples
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect();
        let count = hist[label as usize];
        let keep = keep_of(label, count).min(count);
        if keep == count {
            for &p in &positions {
                keep_flags[p] = true;
            }
        } else if keep > 0 {
            let mut chosen = index::sample(rng, count, keep).into_vec();
            chosen.sort_unstable();
            for c in chosen {
                keep_flags[positions[c]] = true;
            }
        }
    }
    let mut out = SampleSet::with_capacity(keep_flags.iter().filter(|&&k| k).count());
    for (i, keep) in keep_flags.iter().enumerate() {
        if *keep {
            out.push(samples.images[i], samples.labels[i]);
        }
    }
    out
}

/// Label-distribution skew: dominant labels kept in full, every other label
/// down-sampled to `floor(count * retain)`.
pub fn apply_label_skew(
    samples: SampleSet,
    dominant: (u8, u8),
    retain: f64,
    rng: &mut ChaCha8Rng,
) -> SampleSet {
    downsample_per_label(samples, rng, |label, count| {
        if label == dominant.0 || label == dominant.1 {
            count
        } else {
            (count as f64 * retain).floor() as usize
        }
    })
}

/// Quantity skew: keeps `floor(count * fraction)` samples of every label, so
/// the label balance is preserved.
pub fn apply_quantity_skew(samples: SampleSet, fraction: f64, rng: &mut ChaCha8Rng) -> SampleSet {
    downsample_per_label(samples, rng, |_, count| {
        (count as f64 * fraction).floor() as usize
    })
}

const TAG_TRAIN_SHUFFLE: u64 = 0x7031;
const TAG_TEST_POOL: u64 = 0x7032;
const TAG_CLIENT_SKEW: u64 = 0x7033;
const TAG_POOL_SKEW: u64 = 0x7034;

fn transform_set(
    set: SampleSet,
    scenario: &HeterogeneityScenario,
    class: usize,
    skew_seed: u64,
) -> Result<SampleSet> {
    match scenario {
        HeterogeneityScenario::Iid => Ok(set),
        HeterogeneityScenario::ConceptShiftFeatures { rotations } => {
            let degrees = rotations[class];
            let mut out = set;
            for img in out.images.iter_mut() {
                *img = apply_rotation(img, degrees)?;
            }
            Ok(out)
        }
        HeterogeneityScenario::ConceptShiftLabels { swaps } => {
            let pair = swaps[class];
            let mut out = set;
            for label in out.labels.iter_mut() {
                *label = apply_label_swap(*label, pair);
            }
            Ok(out)
        }
        HeterogeneityScenario::FeaturesDistributionSkew { ops } => {
            let op = ops[class];
            let mut out = set;
            for img in out.images.iter_mut() {
                *img = apply_morphology(img, op);
            }
            Ok(out)
        }
        HeterogeneityScenario::LabelsDistributionSkew { dominant, retain } => {
            let mut rng = ChaCha8Rng::seed_from_u64(skew_seed);
            Ok(apply_label_skew(set, dominant[class], *retain, &mut rng))
        }
        HeterogeneityScenario::QuantitySkew { fractions } => {
            let mut rng = ChaCha8Rng::seed_from_u64(skew_seed);
            Ok(apply_quantity_skew(set, fractions[class], &mut rng))
        }
    }
}

/// Partitions a dataset across `n_clients` clients.
///
/// Class `c` is assigned to the contiguous client block
/// `[c * n/K, (c+1) * n/K)`. Each client's train split takes `per_label`
/// samples per label from disjoint slices of per-label shuffled pools; each
/// class shares one test pool of `test_per_label` samples per label. The
/// class transformation is applied to train and test data alike.
pub fn partition_clients(
    data: &RawDataset,
    scenario: &HeterogeneityScenario,
    n_clients: usize,
    per_label: usize,
    test_per_label: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    scenario.validate()?;
    if n_clients == 0 {
        return Err(Error::config("n_clients", "must be >= 1"));
    }
    if per_label == 0 || test_per_label == 0 {
        return Err(Error::config("per_label", "must be >= 1"));
    }
    let k = scenario.class_count();
    if n_clients % k != 0 {
        return Err(Error::NotDivisible {
            n_clients,
            classes: k,
        });
    }
    let per_class = n_clients / k;

    // Disjoint per-label train pools, shuffled once per label.
    let mut train_pools: Vec<Vec<usize>> = vec![Vec::new(); NUM_LABELS];
    for (i, &label) in data.train.labels.iter().enumerate() {
        train_pools[label as usize].push(i);
    }
    for (label, pool) in train_pools.iter_mut().enumerate() {
        let needed = n_clients * per_label;
        if pool.len() < needed {
            return Err(Error::InsufficientData {
                label: label as u8,
                partition: "train",
                needed,
                available: pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, TAG_TRAIN_SHUFFLE, label as u64]));
        pool.shuffle(&mut rng);
    }

    let mut test_pools_by_label: Vec<Vec<usize>> = vec![Vec::new(); NUM_LABELS];
    for (i, &label) in data.test.labels.iter().enumerate() {
        test_pools_by_label[label as usize].push(i);
    }

    // One shared, transformed test pool per class.
    let mut class_pools: Vec<SharedSampleSet> = Vec::with_capacity(k);
    for class in 0..k {
        let mut pool = SampleSet::with_capacity(test_per_label * NUM_LABELS);
        for label in 0..NUM_LABELS {
            let available = &test_pools_by_label[label];
            if available.len() < test_per_label {
                return Err(Error::InsufficientData {
                    label: label as u8,
                    partition: "test",
                    needed: test_per_label,
                    available: available.len(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
                seed,
                TAG_TEST_POOL,
                class as u64,
                label as u64,
            ]));
            let mut chosen = index::sample(&mut rng, available.len(), test_per_label).into_vec();
            chosen.sort_unstable();
            for c in chosen {
                let i = available[c];
                pool.push(data.test.images[i], data.test.labels[i]);
            }
        }
        let pool = transform_set(pool, scenario, class, mix(&[seed, TAG_POOL_SKEW, class as u64]))?;
        class_pools.push(Arc::new(pool));
    }

    let mut clients = Vec::with_capacity(n_clients);
    for client_id in 0..n_clients {
        let class = client_id / per_class;
        let mut train = SampleSet::with_capacity(per_label * NUM_LABELS);
        for (label, pool) in train_pools.iter().enumerate() {
            for &i in &pool[client_id * per_label..(client_id + 1) * per_label] {
                train.push(data.train.images[i], label as u8);
            }
        }
        let train = transform_set(
            train,
            scenario,
            class,
            mix(&[seed, TAG_CLIENT_SKEW, client_id as u64]),
        )?;
        clients.push(ClientDataset {
            client_id,
            het_class: class,
            train,
            test: class_pools[class].clone(),
        });
    }
    Ok(clients)
}

/// Ground-truth heterogeneity class per client, indexable by client id.
pub fn ground_truth(clients: &[ClientDataset]) -> Vec<usize> {
    let mut truth = vec![0usize; clients.len()];
    for c in clients {
        truth[c.client_id] = c.het_class;
    }
    truth
}

/// Concatenation of the distinct test pools shared by `clients`, deduplicated
/// by pool identity, in ascending client-id order of first appearance.
pub fn shared_test_union(clients: &[&ClientDataset]) -> SampleSet {
    let mut sorted: Vec<&ClientDataset> = clients.to_vec();
    sorted.sort_by_key(|c| c.client_id);
    let mut seen: Vec<*const SampleSet> = Vec::new();
    let mut union = SampleSet::default();
    for client in sorted {
        let ptr = Arc::as_ptr(&client.test);
        if !seen.contains(&ptr) {
            seen.push(ptr);
            union.extend_from(&client.test);
        }
    }
    union
}

/// Plain-text audit table of the partition: client id, heterogeneity class,
/// and post-transform train size.
pub fn partition_manifest(clients: &[ClientDataset]) -> String {
    let mut out = String::from("client_id het_class train_size\n");
    let mut sorted: Vec<&ClientDataset> = clients.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    for c in sorted {
        out.push_str(&format!(
            "{:>9} {:>9} {:>10}\n",
            c.client_id,
            c.het_class,
            c.train_size()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn tiny_image() -> Image {
        let mut img = [0f32; IMG_ROWS * IMG_COLS];
        img[5 * IMG_COLS + 3] = 1.0;
        img
    }

    #[test]
    fn rotation_identity_and_group() {
        let img = tiny_image();
        assert_eq!(apply_rotation(&img, 0).unwrap(), img);
        let twice = apply_rotation(&apply_rotation(&img, 90).unwrap(), 90).unwrap();
        assert_eq!(twice, apply_rotation(&img, 180).unwrap());
        let mut four = img;
        for _ in 0..4 {
            four = apply_rotation(&four, 90).unwrap();
        }
        assert_eq!(four, img);
        assert!(matches!(
            apply_rotation(&img, 45),
            Err(Error::InvalidAngle { degrees: 45 })
        ));
    }

    #[test]
    fn rotation_convention_matches_index_map() {
        let mut img = [0f32; IMG_ROWS * IMG_COLS];
        img[2 * IMG_COLS + 5] = 1.0; // (r=2, c=5)
        let rot = apply_rotation(&img, 90).unwrap();
        assert_eq!(rot[5 * IMG_COLS + (IMG_ROWS - 1 - 2)], 1.0);
    }

    #[test]
    fn label_swap_involution() {
        assert_eq!(apply_label_swap(1, (1, 7)), 7);
        assert_eq!(apply_label_swap(3, (1, 7)), 3);
        for y in 0..=9u8 {
            assert_eq!(apply_label_swap(apply_label_swap(y, (4, 7)), (4, 7)), y);
        }
    }

    #[test]
    fn morphology_on_single_pixel() {
        // Single white pixel away from the border.
        let mut img = [0f32; IMG_ROWS * IMG_COLS];
        img[10 * IMG_COLS + 10] = 1.0;
        let dilated = apply_morphology(&img, MorphOp::Dilate);
        for r in 0..IMG_ROWS {
            for c in 0..IMG_COLS {
                let inside = (9..=11).contains(&r) && (9..=11).contains(&c);
                assert_eq!(dilated[r * IMG_COLS + c], if inside { 1.0 } else { 0.0 });
            }
        }
        let eroded = apply_morphology(&img, MorphOp::Erode);
        assert!(eroded.iter().all(|&p| p == 0.0));
        assert_eq!(apply_morphology(&img, MorphOp::None), img);
    }

    #[test]
    fn dilate_all_zero_stays_zero() {
        let img = [0f32; IMG_ROWS * IMG_COLS];
        assert_eq!(apply_morphology(&img, MorphOp::Dilate), img);
    }

    #[test]
    fn label_skew_bounds() {
        let data = synth_dataset(3, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let skewed = apply_label_skew(data.train.clone(), (0, 1), 0.001, &mut rng);
        let hist = skewed.label_histogram();
        assert_eq!(hist[0], 100);
        assert_eq!(hist[1], 100);
        assert_eq!(hist[2..].iter().sum::<usize>(), 0); // floor(100 * 0.001) = 0

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let unchanged = apply_label_skew(data.train.clone(), (0, 1), 1.0, &mut rng);
        assert_eq!(unchanged, data.train);
    }

    #[test]
    fn quantity_skew_keeps_balance() {
        let data = synth_dataset(3, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let skewed = apply_quantity_skew(data.train.clone(), 0.2, &mut rng);
        assert_eq!(skewed.label_histogram(), [20; NUM_LABELS]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let full = apply_quantity_skew(data.train.clone(), 1.0, &mut rng);
        assert_eq!(full, data.train);
    }

    #[test]
    fn partition_assigns_equal_class_blocks() {
        let data = synth_dataset(7, 48 * 2);
        let rot = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftFeatures);
        let clients = partition_clients(&data, &rot, 48, 2, 2, 11).unwrap();
        assert_eq!(clients.len(), 48);
        for class in 0..4 {
            let members = clients.iter().filter(|c| c.het_class == class).count();
            assert_eq!(members, 12);
        }
        let swap = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftLabels);
        let clients = partition_clients(&data, &swap, 48, 2, 2, 11).unwrap();
        for class in 0..6 {
            let members = clients.iter().filter(|c| c.het_class == class).count();
            assert_eq!(members, 8);
        }
    }

    #[test]
    fn partition_iid_is_single_identity_class() {
        let data = synth_dataset(7, 12);
        let clients =
            partition_clients(&data, &HeterogeneityScenario::Iid, 4, 3, 2, 5).unwrap();
        assert!(clients.iter().all(|c| c.het_class == 0));
        // No transform applied: every client image appears verbatim in the source.
        for c in &clients {
            for img in &c.train.images {
                assert!(data.train.images.iter().any(|src| src == img));
            }
        }
    }

    #[test]
    fn partition_rejects_indivisible_counts() {
        let data = synth_dataset(7, 50);
        let rot = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftFeatures);
        assert!(matches!(
            partition_clients(&data, &rot, 10, 2, 2, 5),
            Err(Error::NotDivisible { n_clients: 10, classes: 4 })
        ));
    }

    #[test]
    fn partition_rejects_insufficient_data() {
        let data = synth_dataset(7, 10);
        let rot = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftFeatures);
        assert!(matches!(
            partition_clients(&data, &rot, 4, 5, 2, 5),
            Err(Error::InsufficientData { partition: "train", .. })
        ));
    }

    #[test]
    fn partition_train_sets_disjoint() {
        let data = synth_dataset(7, 16);
        let rot = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftFeatures);
        let clients = partition_clients(&data, &rot, 4, 4, 2, 5).unwrap();
        // Rotate each client's images back, then match to unique source indices.
        let mut used = std::collections::HashSet::new();
        for c in &clients {
            let degrees = [0u16, 90, 180, 270][c.het_class];
            let inverse = (360 - degrees) % 360;
            for img in &c.train.images {
                let orig = apply_rotation(img, inverse).unwrap();
                let idx = data
                    .train
                    .images
                    .iter()
                    .position(|src| *src == orig)
                    .expect("source image");
                assert!(used.insert(idx), "index {idx} drawn twice");
            }
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let data = synth_dataset(7, 24);
        let scenario = HeterogeneityScenario::standard(ScenarioKind::LabelsDistributionSkew);
        let a = partition_clients(&data, &scenario, 4, 6, 3, 5).unwrap();
        let b = partition_clients(&data, &scenario, 4, 6, 3, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train, y.train);
            assert_eq!(*x.test, *y.test);
        }
    }

    #[test]
    fn same_class_clients_share_test_pool() {
        let data = synth_dataset(7, 24);
        let rot = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftFeatures);
        let clients = partition_clients(&data, &rot, 8, 3, 2, 5).unwrap();
        assert!(Arc::ptr_eq(&clients[0].test, &clients[1].test));
        assert!(!Arc::ptr_eq(&clients[0].test, &clients[2].test));
        let union = shared_test_union(&clients.iter().collect::<Vec<_>>());
        assert_eq!(union.len(), 4 * 2 * NUM_LABELS);
    }

    #[test]
    fn swap_scenario_permutes_label_histogram() {
        let data = synth_dataset(7, 24);
        let swap = HeterogeneityScenario::standard(ScenarioKind::ConceptShiftLabels);
        let clients = partition_clients(&data, &swap, 6, 4, 2, 5).unwrap();
        for c in &clients {
            let hist = c.train.label_histogram();
            assert_eq!(hist, [4; NUM_LABELS]); // swaps permute, totals unchanged
        }
    }

    #[test]
    fn manifest_lists_all_clients() {
        let data = synth_dataset(7, 12);
        let clients =
            partition_clients(&data, &HeterogeneityScenario::Iid, 3, 4, 2, 5).unwrap();
        let manifest = partition_manifest(&clients);
        assert_eq!(manifest.lines().count(), 4);
        assert!(manifest.lines().nth(1).unwrap().contains("0"));
    }
}
