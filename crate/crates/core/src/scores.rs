//! Item scores: the common output of the trained scorer and every baseline.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that maps an item id to a latent score.
pub trait ScoreLookup {
    fn score(&self, id: &str) -> Option<f64>;

    fn require(&self, id: &str) -> Result<f64> {
        self.score(id).ok_or_else(|| Error::UnknownItem(id.to_string()))
    }
}

impl ScoreLookup for HashMap<String, f64> {
    fn score(&self, id: &str) -> Option<f64> {
        self.get(id).copied()
    }
}

impl<T: ScoreLookup + ?Sized> ScoreLookup for &T {
    fn score(&self, id: &str) -> Option<f64> {
        (**self).score(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: HashMap<String, f64>,
    pub method: String,
    pub fitted_at: DateTime<Utc>,
}

impl ScoreTable {
    pub fn new(method: impl Into<String>, scores: HashMap<String, f64>) -> Result<Self> {
        if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFinite {
                id: id.clone(),
                what: "score",
            });
        }
        Ok(Self {
            scores,
            method: method.into(),
            fitted_at: Utc::now(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores sorted by descending value, equal scores by ascending id.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut rows: Vec<(&str, f64)> = self
            .scores
            .iter()
            .map(|(id, &s)| (id.as_str(), s))
            .collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    /// Assigns `value` to every id in `ids` that has no score yet.
    pub fn fill_missing<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>, value: f64) {
        for id in ids {
            self.scores.entry(id.to_string()).or_insert(value);
        }
    }
}

impl ScoreLookup for ScoreTable {
    fn score(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_breaks_ties_by_id() {
        let table = ScoreTable::new(
            "x",
            HashMap::from([("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)]),
        )
        .unwrap();
        let ids: Vec<&str> = table.ranked().iter().map(|r| r.0).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ScoreTable::new("x", HashMap::from([("a".into(), f64::NAN)])).is_err());
    }
}
