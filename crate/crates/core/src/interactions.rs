//! Interaction records, dense id indices, sparse views and synthetic data.

use std::collections::HashMap;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("dataset contains no data rows")]
    EmptyDataset,
    #[error("invalid interaction: {0}")]
    InvalidInteraction(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One feedback event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    /// Explicit rating or implicit weight.
    pub rating: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: f64, timestamp: u64) -> Self {
        Interaction {
            user: user.into(),
            item: item.into(),
            rating,
            timestamp,
        }
    }
}

/// Bijection between external ids and dense indices `0..len`, assigned in
/// order of first insertion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the dense index of `id`, assigning the next one if unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.lookup.get(id) {
            return idx as usize;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), idx as u32);
        idx
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).map(|&i| i as usize)
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

impl From<Vec<String>> for IdIndex {
    fn from(ids: Vec<String>) -> Self {
        let mut index = IdIndex::new();
        for id in &ids {
            index.intern(id);
        }
        index
    }
}

impl From<IdIndex> for Vec<String> {
    fn from(index: IdIndex) -> Self {
        index.ids
    }
}

/// An ordered, validated collection of interactions together with dense
/// user and item indices.
///
/// Subsets produced by [`InteractionSet::subset`] share the parent's indices,
/// so `n_users`/`n_items` of a split part count the whole parent universe.
#[derive(Debug, Clone)]
pub struct InteractionSet {
    interactions: Vec<Interaction>,
    user_idx: Vec<u32>,
    item_idx: Vec<u32>,
    users: Arc<IdIndex>,
    items: Arc<IdIndex>,
}

impl PartialEq for InteractionSet {
    fn eq(&self, other: &Self) -> bool {
        self.interactions == other.interactions
            && self.user_idx == other.user_idx
            && self.item_idx == other.item_idx
            && (Arc::ptr_eq(&self.users, &other.users) || self.users == other.users)
            && (Arc::ptr_eq(&self.items, &other.items) || self.items == other.items)
    }
}

impl InteractionSet {
    /// Builds a set with fresh indices assigned by first appearance.
    pub fn from_interactions(interactions: Vec<Interaction>) -> Result<Self, DataError> {
        let mut users = IdIndex::new();
        let mut items = IdIndex::new();
        let mut user_idx = Vec::with_capacity(interactions.len());
        let mut item_idx = Vec::with_capacity(interactions.len());
        for x in &interactions {
            if !x.rating.is_finite() {
                return Err(DataError::InvalidInteraction(format!(
                    "non-finite rating {} for ({}, {})",
                    x.rating, x.user, x.item
                )));
            }
            user_idx.push(users.intern(&x.user) as u32);
            item_idx.push(items.intern(&x.item) as u32);
        }
        Ok(InteractionSet {
            interactions,
            user_idx,
            item_idx,
            users: Arc::new(users),
            items: Arc::new(items),
        })
    }

    /// Selects interactions at `positions` (in that order), keeping the
    /// parent's indices.
    pub fn subset(&self, positions: &[usize]) -> InteractionSet {
        InteractionSet {
            interactions: positions.iter().map(|&p| self.interactions[p].clone()).collect(),
            user_idx: positions.iter().map(|&p| self.user_idx[p]).collect(),
            item_idx: positions.iter().map(|&p| self.item_idx[p]).collect(),
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
        }
    }

    /// Concatenates sets that share the same indices.
    ///
    /// Panics if the sets were not derived from the same parent.
    pub fn concat(parts: &[&InteractionSet]) -> InteractionSet {
        let first = parts.first().expect("concat needs at least one set");
        for part in parts {
            assert!(
                Arc::ptr_eq(&part.users, &first.users) && Arc::ptr_eq(&part.items, &first.items),
                "concat requires sets sharing one index"
            );
        }
        InteractionSet {
            interactions: parts.iter().flat_map(|p| p.interactions.iter().cloned()).collect(),
            user_idx: parts.iter().flat_map(|p| p.user_idx.iter().copied()).collect(),
            item_idx: parts.iter().flat_map(|p| p.item_idx.iter().copied()).collect(),
            users: Arc::clone(&first.users),
            items: Arc::clone(&first.items),
        }
    }

    /// Copy with each rating replaced by `f(interaction)`, keeping indices.
    ///
    /// Panics if `f` returns a non-finite value.
    pub fn map_ratings(&self, f: impl Fn(&Interaction) -> f64) -> InteractionSet {
        let mut out = self.clone();
        for x in &mut out.interactions {
            x.rating = f(x);
            assert!(x.rating.is_finite(), "mapped rating must be finite");
        }
        out
    }

    /// Same interactions with compact indices rebuilt by first appearance.
    /// Equivalent to writing the set out and loading it back.
    pub fn reindexed(&self) -> InteractionSet {
        InteractionSet::from_interactions(self.interactions.clone())
            .expect("ratings already validated")
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Dense user index of the interaction at `pos`.
    pub fn user_of(&self, pos: usize) -> usize {
        self.user_idx[pos] as usize
    }

    /// Dense item index of the interaction at `pos`.
    pub fn item_of(&self, pos: usize) -> usize {
        self.item_idx[pos] as usize
    }

    /// Iterates `(user_idx, item_idx, interaction)`.
    pub fn iter_indexed(&self) -> impl Iterator<Item = (usize, usize, &Interaction)> + '_ {
        self.interactions
            .iter()
            .enumerate()
            .map(move |(p, x)| (self.user_idx[p] as usize, self.item_idx[p] as usize, x))
    }

    pub fn shares_indices_with(&self, other: &InteractionSet) -> bool {
        Arc::ptr_eq(&self.users, &other.users) && Arc::ptr_eq(&self.items, &other.items)
    }

    pub fn max_timestamp(&self) -> Option<u64> {
        self.interactions.iter().map(|x| x.timestamp).max()
    }

    pub fn to_sparse(&self, aggregation: Aggregation) -> SparseMatrixView {
        SparseMatrixView::from_set(self, aggregation)
    }
}

/// Policy for merging repeated `(user, item)` pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Keep the latest interaction (greatest timestamp, then latest position).
    #[default]
    Last,
    Sum,
    Max,
}

/// Compressed sparse row view of an [`InteractionSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrixView {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    aggregation: Aggregation,
}

impl SparseMatrixView {
    fn from_set(set: &InteractionSet, aggregation: Aggregation) -> Self {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.sort_by_key(|&p| (set.user_idx[p], set.item_idx[p], p));

        let rows = set.n_users();
        let mut indptr = vec![0usize; rows + 1];
        let mut indices: Vec<u32> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        // timestamp of the kept interaction for `last`
        let mut kept_ts = 0u64;

        let mut prev: Option<(u32, u32)> = None;
        for &p in &order {
            let key = (set.user_idx[p], set.item_idx[p]);
            let x = &set.interactions[p];
            if prev == Some(key) {
                let v = values.last_mut().expect("entry exists");
                match aggregation {
                    // positions ascend within a key, so ties go to the later row
                    Aggregation::Last => {
                        if x.timestamp >= kept_ts {
                            *v = x.rating;
                            kept_ts = x.timestamp;
                        }
                    }
                    Aggregation::Sum => *v += x.rating,
                    Aggregation::Max => *v = v.max(x.rating),
                }
            } else {
                indices.push(key.1);
                values.push(x.rating);
                kept_ts = x.timestamp;
                indptr[key.0 as usize + 1] += 1;
                prev = Some(key);
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        SparseMatrixView {
            rows,
            cols: set.n_items(),
            indptr,
            indices,
            values,
            aggregation,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    /// Column indices and values of `row`.
    pub fn row(&self, row: usize) -> (&[u32], &[f64]) {
        let range = self.indptr[row]..self.indptr[row + 1];
        (&self.indices[range.clone()], &self.values[range])
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    /// Transposed copy (item-major).
    pub fn transpose(&self) -> SparseMatrixView {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            indices[slot] = r as u32;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrixView {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
            aggregation: self.aggregation,
        }
    }
}

/// Column mapping and delimiter for delimited interaction files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub user: String,
    pub item: String,
    /// Absent from the header means implicit feedback (weight 1.0).
    pub rating: String,
    /// Absent from the header means timestamp 0.
    pub timestamp: String,
    pub delimiter: char,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            user: "user_id".into(),
            item: "item_id".into(),
            rating: "rating".into(),
            timestamp: "timestamp".into(),
            delimiter: ',',
        }
    }
}

fn io_err(path: &Path, source: io::Error) -> DataError {
    if source.kind() == io::ErrorKind::NotFound {
        DataError::FileNotFound(path.to_owned())
    } else {
        DataError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Reads a header-bearing delimited file into an [`InteractionSet`].
///
/// Row numbers in [`DataError::MalformedRow`] count data rows from 1.
pub fn load_interactions(path: impl AsRef<Path>, schema: &Schema) -> Result<InteractionSet, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    if !schema.delimiter.is_ascii() {
        return Err(DataError::InvalidInteraction(format!(
            "delimiter {:?} is not ASCII",
            schema.delimiter
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let user_col = column(&schema.user).ok_or_else(|| DataError::MissingColumn(schema.user.clone()))?;
    let item_col = column(&schema.item).ok_or_else(|| DataError::MissingColumn(schema.item.clone()))?;
    let rating_col = column(&schema.rating);
    let ts_col = column(&schema.timestamp);

    let mut interactions = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let row = n + 1;
        let record = record.map_err(|e| DataError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| DataError::MalformedRow {
                row,
                reason: format!("missing field `{name}`"),
            })
        };
        let user = field(user_col, &schema.user)?;
        let item = field(item_col, &schema.item)?;
        let rating = match rating_col {
            Some(col) => {
                let raw = field(col, &schema.rating)?;
                let v: f64 = raw.parse().map_err(|_| DataError::MalformedRow {
                    row,
                    reason: format!("rating {raw:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::MalformedRow {
                        row,
                        reason: format!("rating {raw:?} is not finite"),
                    });
                }
                v
            }
            None => 1.0,
        };
        let timestamp = match ts_col {
            Some(col) => {
                let raw = field(col, &schema.timestamp)?;
                raw.parse::<u64>().map_err(|_| DataError::MalformedRow {
                    row,
                    reason: format!("timestamp {raw:?} is not a non-negative integer"),
                })?
            }
            None => 0,
        };
        interactions.push(Interaction::new(user, item, rating, timestamp));
    }
    if interactions.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    InteractionSet::from_interactions(interactions)
}

/// Writes interactions as `user_id,item_id,rating,timestamp` CSV.
pub fn write_interactions(set: &InteractionSet, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(io::BufWriter::new(file));
    writer.write_record(["user_id", "item_id", "rating", "timestamp"])?;
    for x in set.interactions() {
        writer.write_record([
            x.user.as_str(),
            x.item.as_str(),
            &x.rating.to_string(),
            &x.timestamp.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Parameters of the planted low-rank generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    pub density: f64,
    pub noise_sigma: f64,
    pub rating_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 200,
            n_items: 100,
            rank: 3,
            density: 0.3,
            noise_sigma: 0.1,
            rating_range: (1.0, 5.0),
            seed: 0,
        }
    }
}

/// Start of the window synthetic timestamps are drawn from.
pub const SYNTHETIC_EPOCH: u64 = 1_500_000_000;
/// Width of that window in seconds (one year).
pub const SYNTHETIC_WINDOW: u64 = 365 * 24 * 3600;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidSpec(msg));
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users and n_items must be at least 1".into());
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        let (lo, hi) = self.rating_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("rating_range ({lo}, {hi}) must satisfy low < high"));
        }
        Ok(())
    }

    /// Maps a raw inner product onto the rating range.
    ///
    /// Raw products have standard deviation `1/sqrt(rank)`; after scaling by
    /// `sqrt(rank)` three standard deviations reach the ends of the range.
    pub fn rescale(&self, raw: f64) -> f64 {
        let (lo, hi) = self.rating_range;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        mid + half * raw * (self.rank as f64).sqrt() / 3.0
    }
}

/// Output of [`generate_synthetic`]: the observed interactions plus the
/// planted factors, indexed by generator position (`u{n}` / `i{n}`).
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub set: InteractionSet,
    pub spec: SyntheticSpec,
    /// Row-major `n_users x rank`.
    pub user_factors: Vec<f64>,
    /// Row-major `n_items x rank`.
    pub item_factors: Vec<f64>,
}

impl SyntheticData {
    /// Noise-free, unclamped rating of generator user `u` on item `i`.
    pub fn planted_rating(&self, u: usize, i: usize) -> f64 {
        let r = self.spec.rank;
        let p = &self.user_factors[u * r..(u + 1) * r];
        let q = &self.item_factors[i * r..(i + 1) * r];
        self.spec.rescale(p.iter().zip(q).map(|(a, b)| a * b).sum())
    }
}

pub fn synthetic_user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn synthetic_item_id(i: usize) -> String {
    format!("i{i}")
}

/// Generates a dataset with planted rank-`rank` structure.
///
/// Draw order is fixed: user factors, item factors, then for every cell in
/// row-major order an observation coin and, if observed, noise and a
/// timestamp. The same spec always yields the same output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = rng::seeded(rng::mix(spec.seed, rng::STREAM_SYNTH));
    let scale = 1.0 / (spec.rank as f64).sqrt();
    let mut draw_factors = |n: usize| -> Vec<f64> {
        (0..n * spec.rank)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    };
    let user_factors = draw_factors(spec.n_users);
    let item_factors = draw_factors(spec.n_items);

    let (lo, hi) = spec.rating_range;
    let mut interactions = Vec::new();
    for u in 0..spec.n_users {
        let p = &user_factors[u * spec.rank..(u + 1) * spec.rank];
        for i in 0..spec.n_items {
            if rng.random::<f64>() >= spec.density {
                continue;
            }
            let q = &item_factors[i * spec.rank..(i + 1) * spec.rank];
            let raw: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            let noise: f64 = rng.sample(StandardNormal);
            let rating = (spec.rescale(raw) + spec.noise_sigma * noise).clamp(lo, hi);
            let timestamp = SYNTHETIC_EPOCH + rng.random_range(0..SYNTHETIC_WINDOW);
            interactions.push(Interaction::new(
                synthetic_user_id(u),
                synthetic_item_id(i),
                rating,
                timestamp,
            ));
        }
    }
    Ok(SyntheticData {
        set: InteractionSet::from_interactions(interactions)?,
        spec: spec.clone(),
        user_factors,
        item_factors,
    })
}
