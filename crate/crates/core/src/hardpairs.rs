//! Hard-pair sampling around label boundaries.
//!
//! Segments adjacent to a highlight boundary tend to look alike, so pairs
//! straddling each boundary are pushed apart by the margin rank loss.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_REGION_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HardPairSet {
    /// Sorted boundary indices (first index of each new label run).
    pub watersheds: Vec<usize>,
    /// `(before, after)` index pairs, `region_size` per watershed.
    pub pairs: Vec<(usize, usize)>,
    pub region_size: usize,
}

impl HardPairSet {
    pub fn empty(region_size: usize) -> Self {
        HardPairSet {
            watersheds: Vec::new(),
            pairs: Vec::new(),
            region_size,
        }
    }
}

/// Every `i` in `1..T` where `labels[i] != labels[i - 1]`.
pub fn find_watersheds(labels: &[u8]) -> Vec<usize> {
    labels
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, _)| i + 1)
        .collect()
}

/// For each watershed `c` and `k` in `1..=region_size`, emits
/// `(c - k, c + k)`, replacing any out-of-range index with `c`.
///
/// Self-pairs produced by clamping are kept and overlapping regions are not
/// deduplicated, so the pair count is always `region_size × watersheds`.
pub fn sample_hard_pairs(labels: &[u8], region_size: usize) -> Result<HardPairSet> {
    if region_size == 0 {
        return Err(Error::Param("hard-pair region size must be >= 1".into()));
    }
    let t = labels.len();
    let watersheds = find_watersheds(labels);
    let mut pairs = Vec::with_capacity(watersheds.len() * region_size);
    for &c in &watersheds {
        for k in 1..=region_size {
            let lo = c.checked_sub(k).unwrap_or(c);
            let hi = if c + k < t { c + k } else { c };
            pairs.push((lo, hi));
        }
    }
    Ok(HardPairSet {
        watersheds,
        pairs,
        region_size,
    })
}
