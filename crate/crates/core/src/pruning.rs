//! Channel pruning as a shape transform.
//!
//! Removing filter `p` from a layer with `n` filters shifts every filter
//! `i > p` down to `i - 1`, leaving a dense layer with `n - 1` filters. The
//! resulting geometry depends only on how many filters were removed, never on
//! which ones.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::ConvLayerSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneRequest {
    base: ConvLayerSpec,
    pruned: BTreeSet<u32>,
}

impl PruneRequest {
    /// `indices` are 1-based filter positions. Duplicates are an error.
    pub fn new(base: ConvLayerSpec, indices: impl IntoIterator<Item = u32>) -> Result<Self> {
        let n = base.out_channels();
        let mut pruned = BTreeSet::new();
        for p in indices {
            if p == 0 || p > n {
                return Err(Error::validation(format!("prune index {p} outside 1..={n}")));
            }
            if !pruned.insert(p) {
                return Err(Error::validation(format!("prune index {p} given more than once")));
            }
        }
        if pruned.len() >= n as usize {
            return Err(Error::validation(format!("cannot prune all {n} channels of `{}`", base.layer_id())));
        }
        Ok(Self { base, pruned })
    }

    pub fn base(&self) -> &ConvLayerSpec {
        &self.base
    }

    pub fn pruned_indices(&self) -> &BTreeSet<u32> {
        &self.pruned
    }

    /// Where each surviving original filter lands after re-indexing, as
    /// `(original, new)` pairs. New indices are exactly `1..=n-k`.
    pub fn reindex(&self) -> Vec<(u32, u32)> {
        (1..=self.base.out_channels()).filter(|i| !self.pruned.contains(i)).zip(1..).collect()
    }
}

pub fn prune_channels(req: &PruneRequest) -> Result<ConvLayerSpec> {
    let removed = req.pruned.len() as u32;
    req.base.with_out_channels(req.base.out_channels() - removed)
}

/// Descending sweep `base, base - step, ...` down to `min_channels`.
pub fn sweep_configs(base: &ConvLayerSpec, min_channels: u32, step: u32) -> Result<Vec<ConvLayerSpec>> {
    let n = base.out_channels();
    if min_channels == 0 || min_channels > n {
        return Err(Error::Range(format!("min_channels {min_channels} outside 1..={n}")));
    }
    if step == 0 {
        return Err(Error::Range("step must be at least 1".into()));
    }
    (min_channels..=n).rev().step_by(step as usize).map(|c| base.with_out_channels(c)).collect()
}
