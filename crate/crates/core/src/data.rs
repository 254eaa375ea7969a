//! Samples, splits, supervision assignment, the balanced epoch sampler and
//! stratified folds.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::SupervisionTier;
use crate::raster::{Image, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub positive: bool,
    /// Ground-truth mask; kept even when the tier hides it from training.
    pub mask: Option<Mask>,
    pub tier: SupervisionTier,
}

impl Sample {
    pub fn negative(id: impl Into<String>, image: Image) -> Self {
        Sample { id: id.into(), image, positive: false, mask: None, tier: SupervisionTier::Negative }
    }

    pub fn positive(id: impl Into<String>, image: Image, mask: Option<Mask>) -> Self {
        let tier = if mask.is_some() { SupervisionTier::PositivePixelLabeled } else { SupervisionTier::PositiveWeak };
        Sample { id: id.into(), image, positive: true, mask, tier }
    }

    /// The mask the trainer may use: present only for pixel-labeled positives.
    pub fn training_mask(&self) -> Option<&Mask> {
        match self.tier {
            SupervisionTier::PositivePixelLabeled => self.mask.as_ref(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub samples: Vec<Sample>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Positives whose pixel mask is visible to training (`N`).
    pub n_labeled: usize,
    /// All positives (`N_all`).
    pub n_all: usize,
}

impl DatasetSplit {
    /// Builds a split, ordering samples by id.
    pub fn new(mut samples: Vec<Sample>) -> Result<Self> {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        for s in &samples {
            if s.tier == SupervisionTier::PositivePixelLabeled && s.mask.is_none() {
                return Err(Error::Argument(format!("sample {} is pixel-labeled but has no mask", s.id)));
            }
            if s.positive != s.tier.is_positive() {
                return Err(Error::Argument(format!("sample {} label and tier disagree", s.id)));
            }
        }
        let positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].positive).collect();
        let negatives: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].positive).collect();
        let n_labeled = positives
            .iter()
            .filter(|&&i| samples[i].tier == SupervisionTier::PositivePixelLabeled)
            .count();
        let n_all = positives.len();
        Ok(DatasetSplit { samples, positives, negatives, n_labeled, n_all })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset by sample indices (re-sorted by id).
    pub fn subset(&self, indices: &[usize]) -> Result<DatasetSplit> {
        DatasetSplit::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

/// Deterministic 64-bit mixer used to derive independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SUPERVISION: u64 = 1;
const STREAM_NEG_POOL: u64 = 2;
const STREAM_EPOCH: u64 = 3;
const STREAM_FOLDS: u64 = 4;

/// Keeps pixel masks visible for exactly `n` positives chosen uniformly with
/// `seed`; all other positives become weakly labeled. Images, labels and
/// stored masks are untouched.
pub fn assign_supervision(split: &DatasetSplit, n: usize, seed: u64) -> Result<DatasetSplit> {
    if n > split.n_all {
        return Err(Error::Argument(format!("N = {n} exceeds N_all = {}", split.n_all)));
    }
    let with_mask: Vec<usize> = split.positives.iter().copied().filter(|&i| split.samples[i].mask.is_some()).collect();
    if n > with_mask.len() {
        return Err(Error::Argument(format!(
            "N = {n} exceeds the {} positives that have a stored mask",
            with_mask.len()
        )));
    }
    let mut order = with_mask;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_SUPERVISION)));
    let mut out = split.clone();
    for &i in &split.positives {
        out.samples[i].tier = SupervisionTier::PositiveWeak;
    }
    for &i in &order[..n] {
        out.samples[i].tier = SupervisionTier::PositivePixelLabeled;
    }
    out.n_labeled = n;
    Ok(out)
}

/// Sample indices for one epoch: every positive plus an equal number of
/// negatives taken as a rotating window over a fixed seeded permutation of
/// the negative pool, shuffled.
pub fn balanced_epoch_indices(split: &DatasetSplit, epoch: usize, seed: u64) -> Result<Vec<usize>> {
    if split.positives.is_empty() {
        return Err(Error::Argument("balanced sampling needs at least one positive".into()));
    }
    if split.negatives.is_empty() {
        return Err(Error::Argument("balanced sampling needs at least one negative".into()));
    }
    let mut pool = split.negatives.clone();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_NEG_POOL)));
    let take = split.positives.len().min(pool.len());
    let start = (epoch * take) % pool.len();
    let mut out = split.positives.clone();
    out.extend((0..take).map(|k| pool[(start + k) % pool.len()]));
    let epoch_seed = mix_seed(mix_seed(seed, STREAM_EPOCH), epoch as u64);
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(out)
}

/// `k` stratified folds. Returns `(train, test)` pairs; every sample is in
/// exactly one test partition.
pub fn make_folds(split: &DatasetSplit, k: usize, seed: u64) -> Result<Vec<(DatasetSplit, DatasetSplit)>> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if k > split.positives.len() {
        return Err(Error::Argument(format!("{k} folds but only {} positives", split.positives.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_FOLDS));
    let mut pos = split.positives.clone();
    let mut neg = split.negatives.clone();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold_of = alloc::vec![0usize; split.len()];
    // deal positives then negatives round-robin, continuing where positives
    // stopped so partition sizes differ by at most one
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        fold_of[i] = j % k;
    }
    (0..k)
        .map(|f| {
            let test: Vec<usize> = (0..split.len()).filter(|&i| fold_of[i] == f).collect();
            let train: Vec<usize> = (0..split.len()).filter(|&i| fold_of[i] != f).collect();
            Ok((split.subset(&train)?, split.subset(&test)?))
        })
        .collect()
}
