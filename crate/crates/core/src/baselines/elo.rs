use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::chronological;
use crate::error::{Error, Result};
use crate::scores::ScoreTable;
use crate::types::{Comparison, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EloConfig {
    pub k_factor: f64,
    pub initial_rating: f64,
    pub scale: f64,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            k_factor: 32.0,
            initial_rating: 1500.0,
            scale: 400.0,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_factor > 0.0 && self.scale > 0.0 && self.initial_rating.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad Elo config {self:?}")));
        }
        Ok(())
    }

    /// Expected score of a player rated `rating` against `opponent`.
    pub fn expected(&self, rating: f64, opponent: f64) -> f64 {
        1.0 / (1.0 + 10f64.powf((opponent - rating) / self.scale))
    }

    /// Updates both ratings in place; ties score half a point each.
    pub fn update(&self, left: &mut f64, right: &mut f64, outcome: Outcome) {
        let actual = match outcome {
            Outcome::Left => 1.0,
            Outcome::Tie => 0.5,
            Outcome::Right => 0.0,
        };
        let delta = self.k_factor * (actual - self.expected(*left, *right));
        *left += delta;
        *right -= delta;
    }
}

/// One sequential Elo pass in timestamp order.
pub fn elo_fit(comparisons: &[Comparison], config: &EloConfig) -> Result<ScoreTable> {
    config.validate()?;
    let mut ratings: HashMap<String, f64> = HashMap::new();
    for c in chronological(comparisons) {
        let mut left = *ratings.get(&c.left_id).unwrap_or(&config.initial_rating);
        let mut right = *ratings.get(&c.right_id).unwrap_or(&config.initial_rating);
        config.update(&mut left, &mut right, c.outcome);
        ratings.insert(c.left_id.clone(), left);
        ratings.insert(c.right_id.clone(), right);
    }
    ScoreTable::new("elo", ratings)
}
