//! Recommender models behind one fit / predict / recommend contract.
//!
//! A [`Model`] owns its own compact user and item indices built from the
//! training data, so it is addressed by external ids and can be saved and
//! loaded independently of the set it was trained on.

pub mod als;
pub mod linalg;
pub mod popularity;
pub mod sar;
pub mod sgd;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use als::AlsParams;
pub use sar::{SarParams, Similarity};
pub use sgd::SgdMfParams;

use crate::interactions::{Aggregation, IdIndex, InteractionSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("reference time {reference} precedes the latest training event at {latest}")]
    InvalidReferenceTime { reference: u64, latest: u64 },
    #[error("training diverged in epoch {epoch}; lower the learning rate")]
    Divergence { epoch: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("model i/o: {0}")]
    Io(#[from] io::Error),
}

/// Scoring over a model's own dense ids. `None` marks a cold user or item.
pub(crate) trait Scorer {
    fn score(&self, user: Option<usize>, item: Option<usize>) -> f64;
    /// Scores of every item for `user`, in item-id order.
    fn user_scores(&self, user: Option<usize>) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Popularity,
    Sar,
    Als,
    SgdMf,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Popularity => "popularity",
            Algorithm::Sar => "sar",
            Algorithm::Als => "als",
            Algorithm::SgdMf => "sgd_mf",
        }
    }

    /// Default parameters for this algorithm.
    pub fn default_params(self) -> ModelParams {
        match self {
            Algorithm::Popularity => ModelParams::Popularity,
            Algorithm::Sar => ModelParams::Sar(SarParams::default()),
            Algorithm::Als => ModelParams::Als(AlsParams::default()),
            Algorithm::SgdMf => ModelParams::SgdMf(SgdMfParams::default()),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "popularity" => Ok(Algorithm::Popularity),
            "sar" => Ok(Algorithm::Sar),
            "als" => Ok(Algorithm::Als),
            "sgd_mf" => Ok(Algorithm::SgdMf),
            other => Err(ModelError::InvalidParams(format!(
                "unknown algorithm `{other}` (expected popularity, sar, als or sgd_mf)"
            ))),
        }
    }
}

/// Algorithm tag plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum ModelParams {
    Popularity,
    Sar(SarParams),
    Als(AlsParams),
    SgdMf(SgdMfParams),
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams::Als(AlsParams::default())
    }
}

impl ModelParams {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelParams::Popularity => Algorithm::Popularity,
            ModelParams::Sar(_) => Algorithm::Sar,
            ModelParams::Als(_) => Algorithm::Als,
            ModelParams::SgdMf(_) => Algorithm::SgdMf,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelParams::Popularity => Ok(()),
            ModelParams::Sar(p) => p.validate(),
            ModelParams::Als(p) => p.validate(),
            ModelParams::SgdMf(p) => p.validate(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            ModelParams::Als(p) => p.seed,
            ModelParams::SgdMf(p) => p.seed,
            _ => None,
        }
    }

    /// Sets the seed of seeded algorithms; a no-op for the others.
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ModelParams::Als(p) => p.seed = Some(seed),
            ModelParams::SgdMf(p) => p.seed = Some(seed),
            _ => {}
        }
    }

    /// Fills in the seed only if none was given.
    pub fn with_default_seed(mut self, seed: u64) -> Self {
        if self.seed().is_none() {
            self.set_seed(seed);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelState {
    Popularity(popularity::Popularity),
    Sar(sar::Sar),
    Als(als::FactorModel),
    SgdMf(sgd::BiasedMf),
}

impl ModelState {
    fn scorer(&self) -> &dyn Scorer {
        match self {
            ModelState::Popularity(m) => m,
            ModelState::Sar(m) => m,
            ModelState::Als(m) => m,
            ModelState::SgdMf(m) => m,
        }
    }
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    params: ModelParams,
    users: IdIndex,
    items: IdIndex,
    /// Per-user sorted training items, CSR layout.
    seen_indptr: Vec<usize>,
    seen_items: Vec<u32>,
    state: ModelState,
}

/// Fits the algorithm selected by `params` on `train`.
///
/// Duplicate `(user, item)` pairs are merged with [`Aggregation::Last`] for
/// the factor models; popularity and SAR consume every event.
pub fn fit(train: &InteractionSet, params: &ModelParams) -> Result<Model, ModelError> {
    params.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    let train = train.reindexed();
    let merged = train.to_sparse(Aggregation::Last);
    let state = match params {
        ModelParams::Popularity => ModelState::Popularity(popularity::Popularity::fit(&train)),
        ModelParams::Sar(p) => ModelState::Sar(sar::Sar::fit(&train, p)?),
        ModelParams::Als(p) => ModelState::Als(als::train(&merged, p)?.model),
        ModelParams::SgdMf(p) => ModelState::SgdMf(sgd::train(&merged, p)?),
    };
    let mut seen_indptr = Vec::with_capacity(merged.rows() + 1);
    let mut seen_items = Vec::with_capacity(merged.nnz());
    seen_indptr.push(0);
    for u in 0..merged.rows() {
        seen_items.extend_from_slice(merged.row(u).0);
        seen_indptr.push(seen_items.len());
    }
    Ok(Model {
        params: params.clone(),
        users: train.users().clone(),
        items: train.items().clone(),
        seen_indptr,
        seen_items,
        state,
    })
}

pub fn fit_popularity(train: &InteractionSet) -> Result<Model, ModelError> {
    fit(train, &ModelParams::Popularity)
}

pub fn fit_sar(train: &InteractionSet, params: &SarParams) -> Result<Model, ModelError> {
    fit(train, &ModelParams::Sar(params.clone()))
}

pub fn fit_als(train: &InteractionSet, params: &AlsParams) -> Result<Model, ModelError> {
    fit(train, &ModelParams::Als(params.clone()))
}

pub fn fit_sgd_mf(train: &InteractionSet, params: &SgdMfParams) -> Result<Model, ModelError> {
    fit(train, &ModelParams::SgdMf(params.clone()))
}

/// Magic string identifying model files.
pub const MODEL_FORMAT: &str = "recokit-model";
/// Current model file version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    algorithm: Algorithm,
    toolkit_version: String,
    params: ModelParams,
    users: IdIndex,
    items: IdIndex,
    seen_indptr: Vec<usize>,
    seen_items: Vec<u32>,
    state: ModelState,
}

impl Model {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn algorithm(&self) -> Algorithm {
        self.params.algorithm()
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    /// Items the user interacted with in training, ascending by dense id.
    pub fn seen(&self, user: usize) -> &[u32] {
        &self.seen_items[self.seen_indptr[user]..self.seen_indptr[user + 1]]
    }

    /// Score for dense ids; `None` selects the cold-start fallback.
    pub fn predict_dense(&self, user: Option<usize>, item: Option<usize>) -> f64 {
        // + 0.0 folds -0.0 into 0.0 so equal scores compare equal everywhere
        self.state.scorer().score(user, item) + 0.0
    }

    pub fn predict(&self, user: &str, item: &str) -> f64 {
        self.predict_dense(self.users.get(user), self.items.get(item))
    }

    /// Elementwise [`Model::predict`], order preserved.
    pub fn predict_batch<U: AsRef<str>, I: AsRef<str>>(&self, pairs: &[(U, I)]) -> Vec<f64> {
        pairs
            .iter()
            .map(|(u, i)| self.predict(u.as_ref(), i.as_ref()))
            .collect()
    }

    /// Top `k` `(item, score)` pairs for a dense user id, best first, ties
    /// broken by ascending item id. Cold users get the algorithm's fallback.
    pub fn recommend_dense(&self, user: Option<usize>, k: usize, remove_seen: bool) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let scores: Vec<f64> = self
            .state
            .scorer()
            .user_scores(user)
            .into_iter()
            .map(|s| s + 0.0)
            .collect();
        let mut candidates: Vec<usize> = (0..scores.len()).collect();
        if let (true, Some(u)) = (remove_seen, user) {
            let seen = self.seen(u);
            candidates.retain(|&i| seen.binary_search(&(i as u32)).is_err());
        }
        let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, order);
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(order);
        candidates.into_iter().map(|i| (i, scores[i])).collect()
    }

    /// [`Model::recommend_dense`] addressed by external ids.
    pub fn recommend(&self, user: &str, k: usize, remove_seen: bool) -> Vec<(&str, f64)> {
        self.recommend_dense(self.users.get(user), k, remove_seen)
            .into_iter()
            .map(|(i, s)| (self.items.id(i), s))
            .collect()
    }

    pub fn write_to(&self, writer: impl Write) -> Result<(), ModelError> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_FORMAT_VERSION,
            algorithm: self.algorithm(),
            toolkit_version: crate::VERSION.to_owned(),
            params: self.params.clone(),
            users: self.users.clone(),
            items: self.items.clone(),
            seen_indptr: self.seen_indptr.clone(),
            seen_items: self.seen_items.clone(),
            state: self.state.clone(),
        };
        let mut writer = BufWriter::new(writer);
        serde_json::to_writer(&mut writer, &file).map_err(|e| ModelError::Format(e.to_string()))?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn read_from(reader: impl Read) -> Result<Model, ModelError> {
        let file: ModelFile =
            serde_json::from_reader(BufReader::new(reader)).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!("not a model file (format `{}`)", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported model file version {} (expected {MODEL_FORMAT_VERSION})",
                file.version
            )));
        }
        if file.algorithm != file.params.algorithm() {
            return Err(ModelError::Format("algorithm tag does not match params".into()));
        }
        if file.seen_indptr.len() != file.users.len() + 1 {
            return Err(ModelError::Format("seen index does not match user count".into()));
        }
        Ok(Model {
            params: file.params,
            users: file.users,
            items: file.items,
            seen_indptr: file.seen_indptr,
            seen_items: file.seen_items,
            state: file.state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        Model::read_from(File::open(path)?)
    }
}
