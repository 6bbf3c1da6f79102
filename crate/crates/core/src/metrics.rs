//! Rating and ranking metrics for offline evaluation.
//!
//! Ranking metrics use binary relevance and are macro-averaged over users in
//! dense user-id order, so results are bit-stable for a given truth set.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interactions::{Aggregation, IdIndex, InteractionSet};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no (user, item) pair is shared by truth and predictions")]
    EmptyJoin,
    #[error("cutoff k must be at least 1, got {0}")]
    InvalidCutoff(usize),
    #[error("no user has a relevant test item")]
    NoEvaluableUsers,
    #[error("no rating pairs to evaluate")]
    NoPairs,
    #[error("value {value} for {what} is not finite")]
    NonFinite { what: String, value: f64 },
    #[error("user {user} lists item {item} more than once")]
    DuplicateRecommendation { user: String, item: String },
}

/// Names of every metric a [`MetricReport`] can carry, in report order.
pub const METRIC_NAMES: [&str; 9] = [
    "rmse",
    "mae",
    "r_squared",
    "explained_variance",
    "precision_at_k",
    "recall_at_k",
    "ndcg_at_k",
    "map_at_k",
    "catalog_coverage",
];

/// One external-id score row, as read from or written to a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub user: String,
    pub item: String,
    pub score: f64,
}

/// Truth/prediction pairs keyed by `(user, item)` dense ids of the truth set.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingPairs {
    /// `(user, item, truth, predicted)`
    pub pairs: Vec<(usize, usize, f64, f64)>,
    /// Distinct truth keys with no prediction.
    pub dropped_truth: usize,
    /// Prediction rows with no truth key, or repeating a matched key.
    pub dropped_predictions: usize,
}

/// Inner-joins truth and predictions on `(user, item)`.
///
/// Repeated truth pairs are merged with [`Aggregation::Last`]; for repeated
/// prediction keys the first row wins. Pairs come out in truth row-major
/// order.
pub fn join_rating_pairs(truth: &InteractionSet, predictions: &[ScoredPair]) -> Result<RatingPairs, MetricError> {
    let merged = truth.to_sparse(Aggregation::Last);
    let mut predicted: HashMap<(usize, usize), f64> = HashMap::with_capacity(predictions.len());
    let mut dropped_predictions = 0;
    for row in predictions {
        if !row.score.is_finite() {
            return Err(MetricError::NonFinite {
                what: format!("prediction ({}, {})", row.user, row.item),
                value: row.score,
            });
        }
        let key = truth.users().get(&row.user).zip(truth.items().get(&row.item));
        match key {
            Some(key) if !predicted.contains_key(&key) => {
                predicted.insert(key, row.score);
            }
            _ => dropped_predictions += 1,
        }
    }
    let mut pairs = Vec::new();
    let mut dropped_truth = 0;
    for (u, i, t) in merged.iter() {
        match predicted.remove(&(u, i)) {
            Some(p) => pairs.push((u, i, t, p)),
            None => dropped_truth += 1,
        }
    }
    // keys that resolved through the index but are not truth pairs
    dropped_predictions += predicted.len();
    if pairs.is_empty() {
        return Err(MetricError::EmptyJoin);
    }
    Ok(RatingPairs {
        pairs,
        dropped_truth,
        dropped_predictions,
    })
}

/// Rating-accuracy metrics. `None` marks a metric that is undefined for the
/// input: fewer than two pairs, or zero truth variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r_squared: Option<f64>,
    pub explained_variance: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let first = values.clone().sum::<f64>() / n;
    // second pass corrects the rounding error of the first
    first + values.map(|v| v - first).sum::<f64>() / n
}

fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = mean(values.clone());
    let n = values.clone().count() as f64;
    values.map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

pub fn evaluate_rating(pairs: &RatingPairs) -> Result<RatingMetrics, MetricError> {
    let p = &pairs.pairs;
    if p.is_empty() {
        return Err(MetricError::NoPairs);
    }
    let n = p.len() as f64;
    let errors = p.iter().map(|&(_, _, t, y)| t - y);
    let sse: f64 = errors.clone().map(|e| e * e).sum();
    let rmse = (sse / n).sqrt();
    let mae = errors.clone().map(f64::abs).sum::<f64>() / n;

    let truth = p.iter().map(|&(_, _, t, _)| t);
    let truth_var = variance(truth.clone());
    let (r_squared, explained_variance) = if p.len() < 2 || truth_var == 0.0 {
        (None, None)
    } else {
        let t_mean = mean(truth.clone());
        let sst: f64 = truth.map(|t| (t - t_mean) * (t - t_mean)).sum();
        (Some(1.0 - sse / sst), Some(1.0 - variance(errors) / truth_var))
    };
    Ok(RatingMetrics {
        rmse,
        mae,
        r_squared,
        explained_variance,
    })
}

/// Per-user ranked recommendations against relevant item sets.
///
/// Item ids are dense over a catalog of `n_items`. Users without relevant
/// items are dropped at construction and counted in `n_users_excluded`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedLists {
    /// `(recommended items best-first, relevant items)` per evaluated user.
    pub users: Vec<(Vec<usize>, HashSet<usize>)>,
    pub n_items: usize,
    pub n_users_excluded: usize,
}

impl RankedLists {
    pub fn new(lists: Vec<(Vec<usize>, HashSet<usize>)>, n_items: usize) -> Self {
        let before = lists.len();
        let users: Vec<_> = lists.into_iter().filter(|(_, rel)| !rel.is_empty()).collect();
        RankedLists {
            n_users_excluded: before - users.len(),
            users,
            n_items,
        }
    }

    /// Builds lists from a truth set and external-id recommendations.
    ///
    /// `recommendations` maps each user to items best-first. A truth item is
    /// relevant when its merged rating is at least `threshold` (every item
    /// when `threshold` is `None`). The catalog holds the truth items, the
    /// recommended items and `extra_catalog`; its size is the coverage
    /// denominator unless `catalog_size` overrides it.
    pub fn from_truth(
        truth: &InteractionSet,
        recommendations: &HashMap<String, Vec<String>>,
        threshold: Option<f64>,
        extra_catalog: &[&str],
        catalog_size: Option<usize>,
    ) -> Result<Self, MetricError> {
        let mut catalog: IdIndex = truth.items().clone();
        let merged = truth.to_sparse(Aggregation::Last);
        let mut lists = Vec::with_capacity(truth.n_users());
        for u in 0..truth.n_users() {
            let (items, ratings) = merged.row(u);
            let relevant: HashSet<usize> = items
                .iter()
                .zip(ratings)
                .filter(|(_, &r)| threshold.is_none_or(|th| r >= th))
                .map(|(&i, _)| i as usize)
                .collect();
            let user = truth.users().id(u);
            let mut recs = Vec::new();
            if let Some(listed) = recommendations.get(user) {
                let mut seen = HashSet::new();
                for item in listed {
                    let idx = catalog.intern(item);
                    if !seen.insert(idx) {
                        return Err(MetricError::DuplicateRecommendation {
                            user: user.to_owned(),
                            item: item.clone(),
                        });
                    }
                    recs.push(idx);
                }
            }
            lists.push((recs, relevant));
        }
        for item in extra_catalog {
            catalog.intern(item);
        }
        Ok(RankedLists::new(lists, catalog_size.unwrap_or(catalog.len())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub map_at_k: f64,
    pub catalog_coverage: f64,
    pub k: usize,
    pub n_users_evaluated: usize,
}

/// Per-user `(precision, recall, ndcg, average precision)` at cutoff `k`.
fn user_terms(recs: &[usize], relevant: &HashSet<usize>, k: usize) -> (f64, f64, f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    let mut precision_sum = 0.0;
    for (rank, item) in recs.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += 1.0 / ((rank + 2) as f64).log2();
            precision_sum += hits as f64 / (rank + 1) as f64;
        }
    }
    let ideal_hits = relevant.len().min(k);
    let idcg: f64 = (0..ideal_hits).map(|j| 1.0 / ((j + 2) as f64).log2()).sum();
    (
        hits as f64 / k as f64,
        hits as f64 / relevant.len() as f64,
        dcg / idcg,
        precision_sum / ideal_hits as f64,
    )
}

pub fn evaluate_ranking(lists: &RankedLists, k: usize) -> Result<RankingMetrics, MetricError> {
    if k < 1 {
        return Err(MetricError::InvalidCutoff(k));
    }
    if lists.users.is_empty() {
        return Err(MetricError::NoEvaluableUsers);
    }
    let (mut p, mut r, mut n, mut m) = (0.0, 0.0, 0.0, 0.0);
    let mut covered = HashSet::new();
    for (recs, relevant) in &lists.users {
        let (up, ur, un, um) = user_terms(recs, relevant, k);
        p += up;
        r += ur;
        n += un;
        m += um;
        covered.extend(recs.iter().take(k).copied());
    }
    let users = lists.users.len() as f64;
    let coverage = if lists.n_items == 0 {
        0.0
    } else {
        covered.len() as f64 / lists.n_items as f64
    };
    Ok(RankingMetrics {
        precision_at_k: p / users,
        recall_at_k: r / users,
        ndcg_at_k: n / users,
        map_at_k: m / users,
        catalog_coverage: coverage,
        k,
        n_users_evaluated: lists.users.len(),
    })
}

/// The full metrics document. Metrics that were not computed or are
/// undefined serialize as `null`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub r_squared: Option<f64>,
    pub explained_variance: Option<f64>,
    pub precision_at_k: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub ndcg_at_k: Option<f64>,
    pub map_at_k: Option<f64>,
    pub catalog_coverage: Option<f64>,
    pub k: usize,
    pub n_users_evaluated: usize,
}

impl MetricReport {
    pub fn new(rating: Option<&RatingMetrics>, ranking: Option<&RankingMetrics>, k: usize) -> Self {
        MetricReport {
            rmse: rating.map(|r| r.rmse),
            mae: rating.map(|r| r.mae),
            r_squared: rating.and_then(|r| r.r_squared),
            explained_variance: rating.and_then(|r| r.explained_variance),
            precision_at_k: ranking.map(|r| r.precision_at_k),
            recall_at_k: ranking.map(|r| r.recall_at_k),
            ndcg_at_k: ranking.map(|r| r.ndcg_at_k),
            map_at_k: ranking.map(|r| r.map_at_k),
            catalog_coverage: ranking.map(|r| r.catalog_coverage),
            k,
            n_users_evaluated: ranking.map_or(0, |r| r.n_users_evaluated),
        }
    }

    /// Looks a metric up by its report key.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "rmse" => self.rmse,
            "mae" => self.mae,
            "r_squared" => self.r_squared,
            "explained_variance" => self.explained_variance,
            "precision_at_k" => self.precision_at_k,
            "recall_at_k" => self.recall_at_k,
            "ndcg_at_k" => self.ndcg_at_k,
            "map_at_k" => self.map_at_k,
            "catalog_coverage" => self.catalog_coverage,
            _ => None,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
