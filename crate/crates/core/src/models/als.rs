//! Explicit-feedback alternating least squares.
//!
//! Minimizes
//!
//! ```text
//! L = sum_observed (r_ui - offset - p_u . q_i)^2 + lambda (sum_u |p_u|^2 + sum_i |q_i|^2)
//! ```
//!
//! by alternating exact ridge solves over user and item blocks. `offset` is
//! the global mean when `center` is set and 0 otherwise. Each half-step is
//! the exact minimizer of `L` in its block, so `L` never increases.
//!
//! The per-row Gram matrix `Q_u^T Q_u + lambda I` is positive definite for
//! any `lambda > 0`, so the Cholesky solve cannot fail on finite input.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky_solve, dot};
use super::{ModelError, Scorer};
use crate::interactions::SparseMatrixView;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlsParams {
    pub factors: usize,
    pub regularization: f64,
    pub iterations: usize,
    pub init_sigma: f64,
    /// Fit residuals around the global mean rating.
    pub center: bool,
    /// Derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for AlsParams {
    fn default() -> Self {
        AlsParams {
            factors: 10,
            regularization: 0.05,
            iterations: 20,
            init_sigma: 0.1,
            center: true,
            seed: None,
        }
    }
}

impl AlsParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        if self.factors < 1 {
            return bad("als factors must be at least 1".into());
        }
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return bad(format!("als regularization must be positive, got {}", self.regularization));
        }
        if self.iterations < 1 {
            return bad("als iterations must be at least 1".into());
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad(format!("als init_sigma must be positive, got {}", self.init_sigma));
        }
        Ok(())
    }
}

/// Learned user and item factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub factors: usize,
    /// Row-major `n_users x factors`.
    pub user_factors: Vec<f64>,
    /// Row-major `n_items x factors`.
    pub item_factors: Vec<f64>,
    /// Global mean rating, the cold-start prediction.
    pub mean: f64,
    /// Added to every warm prediction (the mean, or 0 when uncentered).
    pub offset: f64,
}

impl FactorModel {
    fn user(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    fn item(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.factors..(i + 1) * self.factors]
    }
}

impl Scorer for FactorModel {
    fn score(&self, user: Option<usize>, item: Option<usize>) -> f64 {
        match (user, item) {
            (Some(u), Some(i)) => self.offset + dot(self.user(u), self.item(i)),
            _ => self.mean,
        }
    }

    fn user_scores(&self, user: Option<usize>) -> Vec<f64> {
        let n_items = self.item_factors.len() / self.factors;
        (0..n_items).map(|i| self.score(user, Some(i))).collect()
    }
}

/// Value of the training objective for the given factors.
pub fn objective(by_user: &SparseMatrixView, model: &FactorModel, regularization: f64) -> f64 {
    let loss: f64 = by_user
        .iter()
        .map(|(u, i, r)| {
            let e = r - model.offset - dot(model.user(u), model.item(i));
            e * e
        })
        .sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    loss + regularization * (norm(&model.user_factors) + norm(&model.item_factors))
}

/// Minimizes `sum (t - f . x)^2 + lambda |x|^2` over `x`, writing it to `out`.
fn ridge<'a>(rows: impl Iterator<Item = (&'a [f64], f64)>, k: usize, lambda: f64, out: &mut [f64]) {
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for (f, target) in rows {
        for a in 0..k {
            rhs[a] += f[a] * target;
            for b in 0..k {
                gram[a * k + b] += f[a] * f[b];
            }
        }
    }
    for a in 0..k {
        gram[a * k + a] += lambda;
    }
    let solved = cholesky_solve(&mut gram, &mut rhs, k);
    assert!(solved, "ridge system with positive regularization must be positive definite");
    out.copy_from_slice(&rhs);
}

/// Ridge solution for a row-major `n x k` design matrix and `n` targets.
pub fn ridge_solve(design: &[f64], targets: &[f64], k: usize, lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; k];
    ridge(design.chunks(k).zip(targets.iter().copied()), k, lambda, &mut out);
    out
}

fn half_step(matrix: &SparseMatrixView, target: &mut [f64], other: &[f64], k: usize, lambda: f64, offset: f64) {
    target.par_chunks_mut(k).enumerate().for_each(|(row, out)| {
        let (cols, vals) = matrix.row(row);
        let rows = cols
            .iter()
            .zip(vals)
            .map(|(&c, &r)| (&other[c as usize * k..(c as usize + 1) * k], r - offset));
        ridge(rows, k, lambda, out);
    });
}

/// Result of [`train`]: the model and the objective after initialization and
/// after every half-step (`1 + 2 * iterations` values).
#[derive(Debug, Clone)]
pub struct AlsFit {
    pub model: FactorModel,
    pub objective_trace: Vec<f64>,
}

/// Runs exactly `params.iterations` user/item alternations on a user-major
/// matrix with merged duplicates.
pub fn train(by_user: &SparseMatrixView, params: &AlsParams) -> Result<AlsFit, ModelError> {
    params.validate()?;
    if by_user.nnz() == 0 {
        return Err(ModelError::EmptyTrain);
    }
    let k = params.factors;
    let by_item = by_user.transpose();
    let mean = {
        let values: Vec<f64> = by_user.iter().map(|(_, _, r)| r).collect();
        values.iter().sum::<f64>() / values.len() as f64
    };
    let mut rng = rng::seeded(params.seed.unwrap_or(0));
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n * k)
            .map(|_| params.init_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut model = FactorModel {
        factors: k,
        user_factors: draw(by_user.rows()),
        item_factors: draw(by_user.cols()),
        mean,
        offset: if params.center { mean } else { 0.0 },
    };
    let lambda = params.regularization;
    let mut trace = Vec::with_capacity(1 + 2 * params.iterations);
    trace.push(objective(by_user, &model, lambda));
    for it in 0..params.iterations {
        half_step(by_user, &mut model.user_factors, &model.item_factors, k, lambda, model.offset);
        trace.push(objective(by_user, &model, lambda));
        half_step(&by_item, &mut model.item_factors, &model.user_factors, k, lambda, model.offset);
        trace.push(objective(by_user, &model, lambda));
        log::debug!("als iteration {}: objective {}", it + 1, trace[trace.len() - 1]);
    }
    Ok(AlsFit {
        model,
        objective_trace: trace,
    })
}
