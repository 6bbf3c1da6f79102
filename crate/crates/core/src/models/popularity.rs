//! Item-popularity baseline.

use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::interactions::InteractionSet;

/// Scores every item by its training interaction count, the same for
/// every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Popularity {
    pub counts: Vec<f64>,
}

impl Popularity {
    pub fn fit(train: &InteractionSet) -> Self {
        let mut counts = vec![0.0; train.n_items()];
        for pos in 0..train.len() {
            counts[train.item_of(pos)] += 1.0;
        }
        Popularity { counts }
    }
}

impl Scorer for Popularity {
    fn score(&self, _user: Option<usize>, item: Option<usize>) -> f64 {
        item.map_or(0.0, |i| self.counts[i])
    }

    fn user_scores(&self, _user: Option<usize>) -> Vec<f64> {
        self.counts.clone()
    }
}
