//! Domain types shared by every module: items, comparisons, datasets and
//! deterministic splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of a single pairwise judgment.
///
/// Encoded as `-1` (left chosen), `0` (tie) or `+1` (right chosen).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Outcome {
    Left,
    Tie,
    Right,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Left, Outcome::Tie, Outcome::Right];

    pub fn value(self) -> i64 {
        match self {
            Outcome::Left => -1,
            Outcome::Tie => 0,
            Outcome::Right => 1,
        }
    }

    /// `y` as a real number, used by the ranking losses.
    pub fn sign(self) -> f64 {
        self.value() as f64
    }

    /// Class index of the 3-way classifier: left 0, tie 1, right 2.
    pub fn class_index(self) -> usize {
        match self {
            Outcome::Left => 0,
            Outcome::Tie => 1,
            Outcome::Right => 2,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Outcome> {
        Outcome::ALL.get(index).copied()
    }

    pub fn is_tie(self) -> bool {
        self == Outcome::Tie
    }

    /// Outcome seen from the other side of the pair.
    pub fn flipped(self) -> Outcome {
        match self {
            Outcome::Left => Outcome::Right,
            Outcome::Tie => Outcome::Tie,
            Outcome::Right => Outcome::Left,
        }
    }
}

impl TryFrom<i64> for Outcome {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        match value {
            -1 => Ok(Outcome::Left),
            0 => Ok(Outcome::Tie),
            1 => Ok(Outcome::Right),
            other => Err(Error::InvalidOutcome(other)),
        }
    }
}

impl From<Outcome> for i64 {
    fn from(value: Outcome) -> Self {
        value.value()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// An entity under comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default)]
    pub attributes: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_uri: Option<String>,
}

impl Item {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            features,
            attributes: BTreeMap::new(),
            media_uri: None,
        }
    }

    pub fn with_attributes(mut self, attributes: BTreeMap<String, f64>) -> Self {
        self.attributes = attributes;
        self
    }
}

/// One pairwise judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub left_id: String,
    pub right_id: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub respondent_id: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl Comparison {
    pub fn new(
        left_id: impl Into<String>,
        right_id: impl Into<String>,
        outcome: Outcome,
        created_at: DateTime<Utc>,
    ) -> Self {
        Self {
            left_id: left_id.into(),
            right_id: right_id.into(),
            outcome,
            respondent_id: None,
            created_at,
        }
    }

    pub fn with_respondent(mut self, respondent: impl Into<String>) -> Self {
        self.respondent_id = Some(respondent.into());
        self
    }

    /// Id of the chosen item, `None` for ties.
    pub fn winner(&self) -> Option<&str> {
        match self.outcome {
            Outcome::Left => Some(&self.left_id),
            Outcome::Right => Some(&self.right_id),
            Outcome::Tie => None,
        }
    }
}

/// Swaps the display sides of a comparison. Ties stay ties.
pub fn swap_augment(comparison: &Comparison) -> Comparison {
    Comparison {
        left_id: comparison.right_id.clone(),
        right_id: comparison.left_id.clone(),
        outcome: comparison.outcome.flipped(),
        respondent_id: comparison.respondent_id.clone(),
        created_at: comparison.created_at,
    }
}

/// Validated, immutable item catalog with an id index.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSet {
    items: Vec<Item>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl ItemSet {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let dim = items.first().map_or(0, |item| item.features.len());
        let mut index = HashMap::with_capacity(items.len());
        for (position, item) in items.iter().enumerate() {
            if item.features.len() != dim {
                return Err(Error::FeatureDimension {
                    id: item.id.clone(),
                    expected: dim,
                    found: item.features.len(),
                });
            }
            if item.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    id: item.id.clone(),
                    what: "feature",
                });
            }
            if item.attributes.values().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    id: item.id.clone(),
                    what: "attribute",
                });
            }
            if index.insert(item.id.clone(), position).is_some() {
                return Err(Error::DuplicateItem(item.id.clone()));
            }
        }
        Ok(Self { items, index, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn features(&self, id: &str) -> Result<&[f64]> {
        self.get(id)
            .map(|item| item.features.as_slice())
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Item> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Item] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Item> {
        self.items
    }
}

impl<'a> IntoIterator for &'a ItemSet {
    type Item = &'a Item;
    type IntoIter = std::slice::Iter<'a, Item>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Items plus comparisons with referential integrity.
///
/// The item set is shared, so subsets produced by [`split`] are cheap.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Arc<ItemSet>,
    comparisons: Vec<Comparison>,
}

/// Builds a validated dataset.
pub fn make_dataset(items: Vec<Item>, comparisons: Vec<Comparison>) -> Result<Dataset> {
    Dataset::from_item_set(Arc::new(ItemSet::new(items)?), comparisons)
}

impl Dataset {
    pub fn from_item_set(items: Arc<ItemSet>, comparisons: Vec<Comparison>) -> Result<Self> {
        for (index, comparison) in comparisons.iter().enumerate() {
            for id in [&comparison.left_id, &comparison.right_id] {
                if items.get(id).is_none() {
                    return Err(Error::DanglingId {
                        index,
                        id: id.clone(),
                    });
                }
            }
            if comparison.left_id == comparison.right_id {
                return Err(Error::SelfComparison {
                    index,
                    id: comparison.left_id.clone(),
                });
            }
        }
        Ok(Self { items, comparisons })
    }

    pub fn items(&self) -> &ItemSet {
        &self.items
    }

    pub fn shared_items(&self) -> Arc<ItemSet> {
        Arc::clone(&self.items)
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn len(&self) -> usize {
        self.comparisons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comparisons.is_empty()
    }

    pub fn tie_count(&self) -> usize {
        self.comparisons.iter().filter(|c| c.outcome.is_tie()).count()
    }

    pub fn tie_fraction(&self) -> f64 {
        if self.comparisons.is_empty() {
            0.0
        } else {
            self.tie_count() as f64 / self.comparisons.len() as f64
        }
    }

    /// Same items, different comparisons. Ids are assumed to come from this
    /// dataset, so no re-validation happens.
    pub fn with_comparisons(&self, comparisons: Vec<Comparison>) -> Dataset {
        Dataset {
            items: Arc::clone(&self.items),
            comparisons,
        }
    }

    /// Ids of every item touched by at least one comparison, in first-seen order.
    pub fn compared_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut ids = Vec::new();
        for c in &self.comparisons {
            for id in [c.left_id.as_str(), c.right_id.as_str()] {
                if seen.insert(id) {
                    ids.push(id);
                }
            }
        }
        ids
    }
}

/// Train/dev/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, dev: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            fractions: (train, dev, test),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 70-10-20 protocol.
    pub fn standard(seed: u64) -> Self {
        Self {
            fractions: (0.7, 0.1, 0.2),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        for f in [a, b, c] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "split fraction {f} must lie in (0, 1)"
                )));
            }
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        Ok(())
    }

    /// Partition sizes for `n` comparisons by largest-remainder rounding.
    /// Leftover units go to the largest fractional parts; equal parts favour
    /// train, then dev.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let (a, b, c) = self.fractions;
        let quotas = [a * n as f64, b * n as f64, c * n as f64];
        let mut sizes = quotas.map(|q| q.floor() as usize);
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| {
            let fi = quotas[i] - quotas[i].floor();
            let fj = quotas[j] - quotas[j].floor();
            fj.total_cmp(&fi).then(i.cmp(&j))
        });
        for &slot in order.iter().take(n.saturating_sub(assigned)) {
            sizes[slot] += 1;
        }
        sizes
    }
}

/// Seeded shuffle of comparisons into train, dev and test.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let n = dataset.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 3 comparisons, got {n}"
        )));
    }
    let [n_train, n_dev, _] = spec.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let take = |range: &[usize]| -> Vec<Comparison> {
        range
            .iter()
            .map(|&i| dataset.comparisons[i].clone())
            .collect()
    };
    let train = take(&order[..n_train]);
    let dev = take(&order[n_train..n_train + n_dev]);
    let test = take(&order[n_train + n_dev..]);
    Ok((
        dataset.with_comparisons(train),
        dataset.with_comparisons(dev),
        dataset.with_comparisons(test),
    ))
}
