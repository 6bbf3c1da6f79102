//! Random, chronological and stratified train/validation/test splitting.
//!
//! Every splitter returns parts that share the parent's user and item
//! indices. Part sizes come from largest-remainder rounding of `ratio * n`,
//! with equal remainders going to the earlier part.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interactions::InteractionSet;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("invalid ratios {ratios:?}: {reason}")]
    InvalidRatios { ratios: Vec<f64>, reason: String },
    #[error("min_interactions must be at least 1")]
    InvalidMinInteractions,
    #[error("too few interactions: {have} for {parts} parts")]
    TooFewInteractions { have: usize, parts: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    #[default]
    User,
    Item,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    #[default]
    Random,
    Chrono,
    Stratified,
}

const RATIO_SUM_TOLERANCE: f64 = 1e-9;

/// Validated split parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    ratios: Vec<f64>,
    pub seed: u64,
    pub min_interactions: usize,
    pub group_by: GroupBy,
}

impl SplitSpec {
    /// `ratios` are train/test or train/validation/test fractions.
    pub fn new(ratios: Vec<f64>, seed: u64) -> Result<Self, SplitError> {
        let invalid = |reason: String| SplitError::InvalidRatios {
            ratios: ratios.clone(),
            reason,
        };
        if !(2..=3).contains(&ratios.len()) {
            return Err(invalid(format!("expected 2 or 3 ratios, got {}", ratios.len())));
        }
        if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid(format!("ratio {r} is not positive")));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > RATIO_SUM_TOLERANCE {
            return Err(invalid(format!("ratios sum to {sum}, not 1")));
        }
        Ok(SplitSpec {
            ratios,
            seed,
            min_interactions: 1,
            group_by: GroupBy::User,
        })
    }

    pub fn with_group_by(mut self, group_by: GroupBy) -> Self {
        self.group_by = group_by;
        self
    }

    pub fn with_min_interactions(mut self, min: usize) -> Result<Self, SplitError> {
        if min == 0 {
            return Err(SplitError::InvalidMinInteractions);
        }
        self.min_interactions = min;
        Ok(self)
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn n_parts(&self) -> usize {
        self.ratios.len()
    }
}

/// Result of a splitter: one set per ratio, in ratio order.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub parts: Vec<InteractionSet>,
    pub method: SplitMethod,
}

/// Largest-remainder allocation of `n` items over `ratios`.
///
/// Remainders are compared on a 1e-9 grid so values that differ only by
/// rounding noise tie, and ties go to the lower part index.
pub fn allocate(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut leftover = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by_key(|&k| {
        let rem = quotas[k] - quotas[k].floor();
        (std::cmp::Reverse((rem * 1e9).round() as i64), k)
    });
    for &k in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        sizes[k] += 1;
        leftover -= 1;
    }
    sizes
}

fn check_size(set: &InteractionSet, spec: &SplitSpec) -> Result<(), SplitError> {
    if set.len() < spec.n_parts() {
        return Err(SplitError::TooFewInteractions {
            have: set.len(),
            parts: spec.n_parts(),
        });
    }
    Ok(())
}

fn assemble(set: &InteractionSet, parts: Vec<Vec<usize>>, method: SplitMethod) -> Split {
    Split {
        parts: parts.iter().map(|positions| set.subset(positions)).collect(),
        method,
    }
}

/// Shuffles positions with a seeded Fisher-Yates pass and cuts contiguous
/// blocks. Each part keeps its interactions in input order.
pub fn random_split(set: &InteractionSet, spec: &SplitSpec) -> Result<Split, SplitError> {
    check_size(set, spec)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let sizes = allocate(set.len(), &spec.ratios);
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        let mut block = order[start..start + size].to_vec();
        block.sort_unstable();
        parts.push(block);
        start += size;
    }
    Ok(assemble(set, parts, SplitMethod::Random))
}

/// Positions grouped by dense user or item id, each group in input order.
fn groups(set: &InteractionSet, group_by: GroupBy) -> Vec<Vec<usize>> {
    let n_groups = match group_by {
        GroupBy::User => set.n_users(),
        GroupBy::Item => set.n_items(),
    };
    let mut out = vec![Vec::new(); n_groups];
    for pos in 0..set.len() {
        let g = match group_by {
            GroupBy::User => set.user_of(pos),
            GroupBy::Item => set.item_of(pos),
        };
        out[g].push(pos);
    }
    out
}

/// Like [`allocate`], but when `n >= ratios.len()` every part gets at least
/// one item: each empty part takes one from the currently largest part
/// (lowest index on ties).
pub fn allocate_covering(n: usize, ratios: &[f64]) -> Vec<usize> {
    let mut sizes = allocate(n, ratios);
    if n < ratios.len() {
        return sizes;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..sizes.len()).rev().max_by_key(|&k| sizes[k]).expect("non-empty ratios");
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    sizes
}

/// Deals an ordered group into parts; undersized groups go wholly to part 0.
fn deal(group: &[usize], ratios: &[f64], min_size: usize, cover: bool, parts: &mut [Vec<usize>]) {
    if group.len() < min_size {
        parts[0].extend_from_slice(group);
        return;
    }
    let sizes = if cover {
        allocate_covering(group.len(), ratios)
    } else {
        allocate(group.len(), ratios)
    };
    let mut start = 0;
    for (k, size) in sizes.into_iter().enumerate() {
        parts[k].extend_from_slice(&group[start..start + size]);
        start += size;
    }
}

/// Per group, the earliest interactions go to part 0, the next to part 1
/// and so on. Ties in timestamp keep input order. Consumes no randomness.
pub fn chrono_split(set: &InteractionSet, spec: &SplitSpec) -> Result<Split, SplitError> {
    check_size(set, spec)?;
    let interactions = set.interactions();
    let mut parts = vec![Vec::new(); spec.n_parts()];
    for mut group in groups(set, spec.group_by) {
        // positions ascend already, so the stable sort breaks ties by position
        group.sort_by_key(|&p| interactions[p].timestamp);
        deal(&group, &spec.ratios, spec.n_parts(), false, &mut parts);
    }
    Ok(assemble(set, parts, SplitMethod::Chrono))
}

/// Per group, shuffles with a stream derived from `(seed, group id)` and
/// deals by [`allocate_covering`], so every sufficiently large group appears
/// in every part. Output is ordered by group id, then input position.
pub fn stratified_split(set: &InteractionSet, spec: &SplitSpec) -> Result<Split, SplitError> {
    check_size(set, spec)?;
    let min_size = spec.n_parts().max(spec.min_interactions);
    let mut parts = vec![Vec::new(); spec.n_parts()];
    for (g, mut group) in groups(set, spec.group_by).into_iter().enumerate() {
        let start: Vec<usize> = parts.iter().map(Vec::len).collect();
        group.shuffle(&mut rng::seeded(rng::mix(spec.seed, g as u64)));
        deal(&group, &spec.ratios, min_size, true, &mut parts);
        for (part, from) in parts.iter_mut().zip(start) {
            part[from..].sort_unstable();
        }
    }
    Ok(assemble(set, parts, SplitMethod::Stratified))
}

/// Dispatches on `method`.
pub fn split(set: &InteractionSet, spec: &SplitSpec, method: SplitMethod) -> Result<Split, SplitError> {
    match method {
        SplitMethod::Random => random_split(set, spec),
        SplitMethod::Chrono => chrono_split(set, spec),
        SplitMethod::Stratified => stratified_split(set, spec),
    }
}
