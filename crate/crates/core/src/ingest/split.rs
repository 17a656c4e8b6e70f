//! Block-based train/validation split, train-only mean frame, and the
//! common-choice baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::ReplayStore;
use crate::util::sha256_hex;
use crate::{Error, Result, NUM_ACTIONS};

pub const DEFAULT_BLOCK_SIZE: usize = 50;
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
        }
    }
}

/// Per-state train/val tags produced by [`block_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub block_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub labels: Vec<SplitLabel>,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> SplitLabel {
        self.labels[i]
    }

    pub fn indices(&self, label: SplitLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, label: SplitLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// SHA-256 over the parameters and every label; binds trained models to
    /// this exact split.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.labels.len() + 32);
        bytes.extend_from_slice(&(self.block_size as u64).to_le_bytes());
        bytes.extend_from_slice(&self.val_fraction.to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        bytes.extend(self.labels.iter().map(|&l| (l == SplitLabel::Val) as u8));
        sha256_hex(&bytes)
    }

    pub fn check_covers(&self, store: &ReplayStore) -> Result<()> {
        if self.labels.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "split covers {} states but store has {}",
                self.labels.len(),
                store.len()
            )));
        }
        Ok(())
    }
}

/// Half-open `[start, end)` ranges of consecutive states forming the split
/// blocks: each episode is cut into runs of `block_size` from its first
/// state, the last run possibly shorter.
pub fn block_ranges(store: &ReplayStore, block_size: usize) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < store.len() {
        let start = i;
        let episode_start = store.episode_start(i);
        let mut end = i + 1;
        while end < store.len() && store.episode_start(end) == episode_start && end - start < block_size {
            end += 1;
        }
        blocks.push((start, end));
        i = end;
    }
    blocks
}

/// Assigns whole blocks to validation.
///
/// Blocks are visited in a seeded random order; a block moves to validation
/// when that brings the validation count closer to `val_fraction` of all
/// states. Each block lands in validation with probability close to
/// `val_fraction` and the realised count misses the target by at most half a
/// block.
pub fn block_split(
    store: &ReplayStore,
    block_size: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if block_size == 0 {
        return Err(Error::InvalidArgument("block size must be ≥ 1".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} outside (0,1)"
        )));
    }
    if store.is_empty() {
        return Err(Error::EmptyStore("cannot split an empty store".into()));
    }
    let blocks = block_ranges(store, block_size);
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let target = (val_fraction * store.len() as f64).round() as usize;
    let mut labels = vec![SplitLabel::Train; store.len()];
    let mut val = 0usize;
    for b in order {
        let (start, end) = blocks[b];
        // take the block only if it brings the count closer to the target
        if 2 * (val + end - start) <= 2 * target + (end - start) {
            labels[start..end].fill(SplitLabel::Val);
            val += end - start;
        }
    }
    Ok(SplitAssignment {
        block_size,
        val_fraction,
        seed,
        labels,
    })
}

/// Pixelwise mean over train-labelled frames.
pub fn compute_mean_frame(store: &ReplayStore, split: &SplitAssignment) -> Result<Vec<f32>> {
    split.check_covers(store)?;
    let train = split.indices(SplitLabel::Train);
    if train.is_empty() {
        return Err(Error::EmptyStore("split has no train states".into()));
    }
    let mut acc = vec![0u64; crate::FRAME_PIXELS];
    for &i in &train {
        for (a, &b) in acc.iter_mut().zip(store.frame_bytes(i)) {
            *a += b as u64;
        }
    }
    let denom = train.len() as f64 * 255.0;
    Ok(acc.iter().map(|&s| (s as f64 / denom) as f32).collect())
}

/// Most frequent train action, ties to the lowest action id.
pub fn majority_action(store: &ReplayStore, split: &SplitAssignment) -> Result<u8> {
    split.check_covers(store)?;
    let mut counts = [0usize; NUM_ACTIONS];
    let mut any = false;
    for i in split.indices(SplitLabel::Train) {
        counts[store.action(i) as usize] += 1;
        any = true;
    }
    if !any {
        return Err(Error::EmptyStore("split has no train states".into()));
    }
    let mut best = 0;
    for a in 1..NUM_ACTIONS {
        if counts[a] > counts[best] {
            best = a;
        }
    }
    Ok(best as u8)
}

/// Fraction of validation states whose action equals the train majority.
pub fn common_choice_accuracy(store: &ReplayStore, split: &SplitAssignment) -> Result<f64> {
    let majority = majority_action(store, split)?;
    let val = split.indices(SplitLabel::Val);
    if val.is_empty() {
        return Err(Error::EmptyStore("split has no validation states".into()));
    }
    let hits = val.iter().filter(|&&i| store.action(i) == majority).count();
    Ok(hits as f64 / val.len() as f64)
}
