//! Biased matrix factorization trained by stochastic gradient descent.
//!
//! Predicts `mu + b_u + b_i + p_u . q_i`. Unknown users or items contribute
//! zero bias and zero factors.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::dot;
use super::{ModelError, Scorer};
use crate::interactions::SparseMatrixView;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdMfParams {
    pub factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub init_sigma: f64,
    /// Derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for SgdMfParams {
    fn default() -> Self {
        SgdMfParams {
            factors: 10,
            learning_rate: 0.005,
            regularization: 0.02,
            epochs: 20,
            init_sigma: 0.1,
            seed: None,
        }
    }
}

impl SgdMfParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        if self.factors < 1 {
            return bad("sgd factors must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("sgd learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad(format!("sgd regularization must be >= 0, got {}", self.regularization));
        }
        if self.epochs < 1 {
            return bad("sgd epochs must be at least 1".into());
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad(format!("sgd init_sigma must be positive, got {}", self.init_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedMf {
    pub factors: usize,
    pub mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
}

impl BiasedMf {
    fn user(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    fn item(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.factors..(i + 1) * self.factors]
    }
}

impl Scorer for BiasedMf {
    fn score(&self, user: Option<usize>, item: Option<usize>) -> f64 {
        let mut s = self.mean;
        if let Some(u) = user {
            s += self.user_bias[u];
        }
        if let Some(i) = item {
            s += self.item_bias[i];
        }
        if let (Some(u), Some(i)) = (user, item) {
            s += dot(self.user(u), self.item(i));
        }
        s
    }

    fn user_scores(&self, user: Option<usize>) -> Vec<f64> {
        (0..self.item_bias.len()).map(|i| self.score(user, Some(i))).collect()
    }
}

fn all_finite(model: &BiasedMf) -> bool {
    [&model.user_bias, &model.item_bias, &model.user_factors, &model.item_factors]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
}

/// Runs exactly `params.epochs` passes over the entries of a user-major
/// matrix with merged duplicates, in a freshly shuffled order each epoch.
/// Factor updates for a sample use the pre-update values of both vectors.
pub fn train(by_user: &SparseMatrixView, params: &SgdMfParams) -> Result<BiasedMf, ModelError> {
    params.validate()?;
    let entries: Vec<(usize, usize, f64)> = by_user.iter().collect();
    if entries.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    let k = params.factors;
    let mean = entries.iter().map(|e| e.2).sum::<f64>() / entries.len() as f64;
    let mut rng = rng::seeded(params.seed.unwrap_or(0));
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n * k)
            .map(|_| params.init_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut model = BiasedMf {
        factors: k,
        mean,
        user_bias: vec![0.0; by_user.rows()],
        item_bias: vec![0.0; by_user.cols()],
        user_factors: draw(by_user.rows()),
        item_factors: draw(by_user.cols()),
    };
    let (lr, reg) = (params.learning_rate, params.regularization);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut p_old = vec![0.0; k];
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        for &e in &order {
            let (u, i, r) = entries[e];
            let err = r - model.score(Some(u), Some(i));
            model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
            model.item_bias[i] += lr * (err - reg * model.item_bias[i]);
            let (pu, qi) = (u * k, i * k);
            p_old.copy_from_slice(&model.user_factors[pu..pu + k]);
            for (f, &p) in p_old.iter().enumerate() {
                let q = model.item_factors[qi + f];
                model.user_factors[pu + f] += lr * (err * q - reg * p);
                model.item_factors[qi + f] += lr * (err * p - reg * q);
            }
        }
        if !all_finite(&model) {
            return Err(ModelError::Divergence { epoch });
        }
    }
    Ok(model)
}
