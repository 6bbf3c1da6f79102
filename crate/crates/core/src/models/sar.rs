//! Item-to-item co-occurrence recommender (SAR).
//!
//! Scores are `A * S`: a user-item affinity matrix with optional half-life
//! decay, times an item-item similarity derived from binarized
//! co-occurrence counts.

use serde::{Deserialize, Serialize};

use super::linalg::DenseMatrix;
use super::popularity::Popularity;
use super::{ModelError, Scorer};
use crate::interactions::{Aggregation, InteractionSet, SparseMatrixView};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Count,
    #[default]
    Jaccard,
    Lift,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarParams {
    pub similarity: Similarity,
    /// No decay when absent.
    pub half_life_seconds: Option<f64>,
    /// Defaults to the latest training timestamp.
    pub reference_time: Option<u64>,
    pub rating_as_weight: bool,
}

impl SarParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.half_life_seconds {
            Some(h) if !(h > 0.0 && h.is_finite()) => Err(ModelError::InvalidParams(format!(
                "half_life_seconds must be positive, got {h}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Item-by-item counts of users who interacted with both items.
pub fn cooccurrence(train: &InteractionSet) -> DenseMatrix {
    let n = train.n_items();
    let mut c = DenseMatrix::zeros(n, n);
    let incidence = train.to_sparse(Aggregation::Last);
    for u in 0..incidence.rows() {
        let (items, _) = incidence.row(u);
        for &a in items {
            let row = c.row_mut(a as usize);
            for &b in items {
                row[b as usize] += 1.0;
            }
        }
    }
    c
}

/// Turns co-occurrence counts into similarities. Zero denominators give 0.
pub fn similarity(c: &DenseMatrix, kind: Similarity) -> DenseMatrix {
    let n = c.rows();
    if kind == Similarity::Count {
        return c.clone();
    }
    let mut s = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let cii = c.get(i, i);
        for j in 0..n {
            let cij = c.get(i, j);
            let cjj = c.get(j, j);
            let denom = match kind {
                Similarity::Jaccard => cii + cjj - cij,
                Similarity::Lift => cii * cjj,
                Similarity::Count => unreachable!(),
            };
            s.set(i, j, if denom == 0.0 { 0.0 } else { cij / denom });
        }
    }
    s
}

/// Sums decayed event weights per `(user, item)`:
/// `w * 2^(-(t_ref - t) / half_life)`.
pub fn affinity(train: &InteractionSet, params: &SarParams) -> Result<SparseMatrixView, ModelError> {
    params.validate()?;
    let latest = train.max_timestamp().unwrap_or(0);
    let reference = params.reference_time.unwrap_or(latest);
    if reference < latest {
        return Err(ModelError::InvalidReferenceTime { reference, latest });
    }
    let weighted = train.map_ratings(|x| {
        let w = if params.rating_as_weight { x.rating } else { 1.0 };
        let decay = params
            .half_life_seconds
            .map_or(1.0, |h| (-((reference - x.timestamp) as f64) / h).exp2());
        w * decay
    });
    Ok(weighted.to_sparse(Aggregation::Sum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sar {
    pub affinity: SparseMatrixView,
    pub similarity: DenseMatrix,
    /// Cold-user fallback.
    pub popularity: Popularity,
}

impl Sar {
    /// `train` must carry compact indices (see [`InteractionSet::reindexed`]).
    pub fn fit(train: &InteractionSet, params: &SarParams) -> Result<Self, ModelError> {
        let affinity = affinity(train, params)?;
        let similarity = similarity(&cooccurrence(train), params.similarity);
        Ok(Sar {
            affinity,
            similarity,
            popularity: Popularity::fit(train),
        })
    }
}

impl Scorer for Sar {
    fn score(&self, user: Option<usize>, item: Option<usize>) -> f64 {
        let (Some(u), Some(i)) = (user, item) else {
            return 0.0;
        };
        let (items, weights) = self.affinity.row(u);
        items
            .iter()
            .zip(weights)
            .fold(0.0, |acc, (&j, &a)| acc + a * self.similarity.get(j as usize, i))
    }

    fn user_scores(&self, user: Option<usize>) -> Vec<f64> {
        let Some(u) = user else {
            return self.popularity.counts.clone();
        };
        // same accumulation order as `score`, so both agree bit for bit
        let mut out = vec![0.0; self.similarity.cols()];
        let (items, weights) = self.affinity.row(u);
        for (&j, &a) in items.iter().zip(weights) {
            for (o, s) in out.iter_mut().zip(self.similarity.row(j as usize)) {
                *o += a * s;
            }
        }
        out
    }
}
