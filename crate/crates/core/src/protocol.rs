//! Scoring a fitted model against held-out interactions.
//!
//! Both the pipeline and the tuner go through [`score_model`] and
//! [`evaluate`], and the CLI `evaluate` command reads the same rows back
//! from disk, so a staged run and a single `run` report identical numbers.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::interactions::{DataError, InteractionSet};
use crate::metrics::{self, MetricError, MetricReport, RankedLists, ScoredPair};
use crate::models::Model;

/// Cutoff and relevance settings for an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub k: usize,
    /// Minimum test rating counted as relevant; every test item when absent.
    pub relevance_threshold: Option<f64>,
    /// Exclude training items from recommendations.
    pub remove_seen: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 10,
            relevance_threshold: None,
            remove_seen: true,
        }
    }
}

/// One row of a recommendations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRow {
    pub user: String,
    pub item: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Predictions for every distinct truth pair and top-k lists for every
/// truth user, both in order of first appearance in `truth`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredOutput {
    pub predictions: Vec<ScoredPair>,
    pub recommendations: Vec<RecommendationRow>,
}

pub fn score_model(model: &Model, truth: &InteractionSet, opts: &EvalOptions) -> ScoredOutput {
    let truth = truth.reindexed();
    let merged = truth.to_sparse(crate::interactions::Aggregation::Last);
    let mut emitted = HashSet::with_capacity(merged.nnz());
    let mut predictions = Vec::with_capacity(merged.nnz());
    for (u, i, x) in truth.iter_indexed() {
        if !emitted.insert((u, i)) {
            continue;
        }
        predictions.push(ScoredPair {
            user: x.user.clone(),
            item: x.item.clone(),
            score: model.predict(&x.user, &x.item),
        });
    }
    let mut recommendations = Vec::new();
    for user in truth.users().ids() {
        for (rank, (item, score)) in model.recommend(user, opts.k, opts.remove_seen).into_iter().enumerate() {
            recommendations.push(RecommendationRow {
                user: user.clone(),
                item: item.to_owned(),
                score,
                rank: rank + 1,
            });
        }
    }
    ScoredOutput {
        predictions,
        recommendations,
    }
}

/// Builds a full report. Rating metrics are skipped (null) when
/// `predictions` is `None`, ranking metrics when `recommendations` is.
/// `catalog` lists extra item ids counted in the coverage denominator
/// besides the truth and recommended items.
pub fn evaluate(
    truth: &InteractionSet,
    predictions: Option<&[ScoredPair]>,
    recommendations: Option<&[RecommendationRow]>,
    opts: &EvalOptions,
    catalog: &[&str],
) -> Result<MetricReport, MetricError> {
    if opts.k < 1 {
        return Err(MetricError::InvalidCutoff(opts.k));
    }
    let truth = truth.reindexed();
    let rating = match predictions {
        Some(p) => Some(metrics::evaluate_rating(&metrics::join_rating_pairs(&truth, p)?)?),
        None => None,
    };
    let ranking = match recommendations {
        Some(rows) => {
            let mut by_user: HashMap<String, Vec<(usize, &str)>> = HashMap::new();
            for row in rows {
                by_user.entry(row.user.clone()).or_default().push((row.rank, &row.item));
            }
            let lists: HashMap<String, Vec<String>> = by_user
                .into_iter()
                .map(|(u, mut items)| {
                    items.sort_by_key(|&(rank, _)| rank);
                    (u, items.into_iter().map(|(_, i)| i.to_owned()).collect())
                })
                .collect();
            let lists = RankedLists::from_truth(&truth, &lists, opts.relevance_threshold, catalog, None)?;
            Some(metrics::evaluate_ranking(&lists, opts.k)?)
        }
        None => None,
    };
    Ok(MetricReport::new(rating.as_ref(), ranking.as_ref(), opts.k))
}

fn io_err(path: &Path, source: io::Error) -> DataError {
    DataError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `user_id,item_id,score`.
pub fn write_predictions(rows: &[ScoredPair], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["user_id", "item_id", "score"])?;
    for r in rows {
        w.write_record([r.user.as_str(), r.item.as_str(), &r.score.to_string()])?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Writes `user_id,item_id,score,rank`.
pub fn write_recommendations(rows: &[RecommendationRow], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    recommendations_to_writer(rows, file).map_err(|e| io_err(path, e))
}

pub fn recommendations_to_writer(rows: &[RecommendationRow], writer: impl Write) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(writer));
    w.write_record(["user_id", "item_id", "score", "rank"])?;
    for r in rows {
        w.write_record([r.user.as_str(), r.item.as_str(), &r.score.to_string(), &r.rank.to_string()])?;
    }
    w.flush()
}

fn read_rows<T>(
    path: &Path,
    columns: &[&str],
    mut parse: impl FnMut(&[&str], usize) -> Result<T, DataError>,
) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            DataError::FileNotFound(path.to_owned())
        } else {
            io_err(path, e)
        }
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let cols: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| DataError::MissingColumn((*c).to_owned()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let row = n + 1;
        let record = record.map_err(|e| DataError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let fields: Vec<&str> = cols
            .iter()
            .map(|&c| {
                record.get(c).ok_or_else(|| DataError::MalformedRow {
                    row,
                    reason: "missing field".into(),
                })
            })
            .collect::<Result<_, _>>()?;
        out.push(parse(&fields, row)?);
    }
    Ok(out)
}

fn parse_score(raw: &str, row: usize) -> Result<f64, DataError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::MalformedRow {
            row,
            reason: format!("score {raw:?} is not a finite number"),
        })
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ScoredPair>, DataError> {
    read_rows(path.as_ref(), &["user_id", "item_id", "score"], |f, row| {
        Ok(ScoredPair {
            user: f[0].to_owned(),
            item: f[1].to_owned(),
            score: parse_score(f[2], row)?,
        })
    })
}

pub fn read_recommendations(path: impl AsRef<Path>) -> Result<Vec<RecommendationRow>, DataError> {
    read_rows(path.as_ref(), &["user_id", "item_id", "score", "rank"], |f, row| {
        Ok(RecommendationRow {
            user: f[0].to_owned(),
            item: f[1].to_owned(),
            score: parse_score(f[2], row)?,
            rank: f[3].parse().map_err(|_| DataError::MalformedRow {
                row,
                reason: format!("rank {:?} is not a positive integer", f[3]),
            })?,
        })
    })
}
