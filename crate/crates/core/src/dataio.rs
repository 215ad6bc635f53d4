//! File formats and rating-to-pairwise conversion.
//!
//! * items: JSON lines, `{"id", "features": [...], "attributes": {...}, "media_uri"?}`
//! * comparisons: CSV `left_id,right_id,outcome,respondent_id,created_at`
//! * ratings: CSV `respondent_id,item_id,rating`
//! * scores: CSV `item_id,score,method`

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::ScoreTable;
use crate::types::{Comparison, Item, Outcome};

/// Per-dimension mean and standard deviation used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; 0 marks a constant dimension.
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn from_items(items: &[Item]) -> Self {
        let dim = items.first().map_or(0, |i| i.features.len());
        let n = items.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for item in items {
            for (m, x) in mean.iter_mut().zip(&item.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for item in items {
            for ((v, x), m) in var.iter_mut().zip(&item.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Self { mean, std }
    }

    /// Z-scores `features` in place; constant dimensions map to 0.
    pub fn apply(&self, features: &mut [f64]) {
        for ((x, m), s) in features.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = if *s > 0.0 { (*x - m) / s } else { 0.0 };
        }
    }
}

/// Loads raw items from JSON lines without standardisation.
pub fn load_items_raw(path: impl AsRef<Path>) -> Result<Vec<Item>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut items: Vec<Item> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let item: Item = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(first) = items.first() {
            if item.features.len() != first.features.len() {
                return Err(parse_err(format!(
                    "item {:?} has {} features, expected {}",
                    item.id,
                    item.features.len(),
                    first.features.len()
                )));
            }
        }
        if item.features.iter().chain(item.attributes.values()).any(|v| !v.is_finite()) {
            return Err(parse_err(format!("item {:?} has non-finite values", item.id)));
        }
        items.push(item);
    }
    Ok(items)
}

/// Loads items and z-scores their features with statistics of this file.
pub fn load_items(path: impl AsRef<Path>) -> Result<(Vec<Item>, FeatureStats)> {
    let mut items = load_items_raw(path)?;
    let stats = FeatureStats::from_items(&items);
    for item in &mut items {
        stats.apply(&mut item.features);
    }
    Ok((items, stats))
}

/// Loads items and z-scores them with externally supplied statistics.
pub fn load_items_with_stats(path: impl AsRef<Path>, stats: &FeatureStats) -> Result<Vec<Item>> {
    let mut items = load_items_raw(path)?;
    for item in &mut items {
        if item.features.len() != stats.mean.len() {
            return Err(Error::FeatureDimension {
                id: item.id.clone(),
                expected: stats.mean.len(),
                found: item.features.len(),
            });
        }
        stats.apply(&mut item.features);
    }
    Ok(items)
}

pub fn write_items(items: &[Item], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ComparisonRow {
    left_id: String,
    right_id: String,
    outcome: i64,
    respondent_id: String,
    created_at: String,
}

pub const COMPARISON_HEADER: [&str; 5] =
    ["left_id", "right_id", "outcome", "respondent_id", "created_at"];

pub fn load_comparisons(path: impl AsRef<Path>) -> Result<Vec<Comparison>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    for column in COMPARISON_HEADER {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {column:?}"),
            });
        }
    }
    let mut comparisons = Vec::new();
    for (k, row) in reader.deserialize::<ComparisonRow>().enumerate() {
        let line = k + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let outcome = Outcome::try_from(row.outcome).map_err(|e| parse_err(e.to_string()))?;
        let created_at = DateTime::parse_from_rfc3339(&row.created_at)
            .map_err(|e| parse_err(format!("bad timestamp {:?}: {e}", row.created_at)))?
            .with_timezone(&Utc);
        comparisons.push(Comparison {
            left_id: row.left_id,
            right_id: row.right_id,
            outcome,
            respondent_id: (!row.respondent_id.is_empty()).then_some(row.respondent_id),
            created_at,
        });
    }
    Ok(comparisons)
}

pub fn write_comparisons(comparisons: &[Comparison], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for c in comparisons {
        writer.serialize(ComparisonRow {
            left_id: c.left_id.clone(),
            right_id: c.right_id.clone(),
            outcome: c.outcome.value(),
            respondent_id: c.respondent_id.clone().unwrap_or_default(),
            created_at: c.created_at.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
        })?;
    }
    if comparisons.is_empty() {
        writer.write_record(COMPARISON_HEADER)?;
    }
    writer.flush()?;
    Ok(())
}

/// One ordinal rating from one respondent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub respondent_id: String,
    pub item_id: String,
    pub rating: u32,
}

/// Loads ratings; with `scale = Some(k)` every rating must lie in `1..=k`.
pub fn load_ratings(path: impl AsRef<Path>, scale: Option<u32>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut ratings = Vec::new();
    for (k, row) in reader.deserialize::<RatingRecord>().enumerate() {
        let line = k + 2;
        let record = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let upper = scale.unwrap_or(u32::MAX);
        if record.rating < 1 || record.rating > upper {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("rating {} outside 1..={upper}", record.rating),
            });
        }
        ratings.push(record);
    }
    Ok(ratings)
}

/// Options of [`ratings_to_pairs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionOptions {
    /// Timestamp of the first generated comparison; row `k` gets `base + k µs`.
    pub base_time: DateTime<Utc>,
    /// Optional cap on pairs per respondent, sampled with `seed`.
    pub max_pairs_per_respondent: Option<usize>,
    pub seed: u64,
}

impl Default for ConversionOptions {
    fn default() -> Self {
        Self {
            base_time: Utc::now(),
            max_pairs_per_respondent: None,
            seed: 0,
        }
    }
}

/// Expands per-respondent ratings into pairwise comparisons.
///
/// Every unordered pair of items rated by the same respondent yields one
/// comparison with the smaller id on the left; the higher rating wins and
/// equal ratings give a tie. Respondents are processed in id order.
pub fn ratings_to_pairs(
    ratings: &[RatingRecord],
    options: &ConversionOptions,
) -> Result<Vec<Comparison>> {
    let mut by_respondent: BTreeMap<&str, BTreeMap<&str, u32>> = BTreeMap::new();
    let mut duplicates = Vec::new();
    for r in ratings {
        let entry = by_respondent.entry(&r.respondent_id).or_default();
        if entry.insert(&r.item_id, r.rating).is_some() {
            duplicates.push((r.respondent_id.clone(), r.item_id.clone()));
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::DuplicateRatings(duplicates));
    }

    let mut out = Vec::new();
    for (respondent, rated) in &by_respondent {
        let rated: Vec<(&str, u32)> = rated.iter().map(|(id, r)| (*id, *r)).collect();
        let mut pairs = Vec::with_capacity(rated.len() * rated.len().saturating_sub(1) / 2);
        for a in 0..rated.len() {
            for b in a + 1..rated.len() {
                pairs.push((a, b));
            }
        }
        if let Some(cap) = options.max_pairs_per_respondent {
            if pairs.len() > cap {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                let mut keep = index::sample(&mut rng, pairs.len(), cap).into_vec();
                keep.sort_unstable();
                pairs = keep.into_iter().map(|k| pairs[k]).collect();
            }
        }
        for (a, b) in pairs {
            let (left, left_rating) = rated[a];
            let (right, right_rating) = rated[b];
            let outcome = match left_rating.cmp(&right_rating) {
                std::cmp::Ordering::Greater => Outcome::Left,
                std::cmp::Ordering::Less => Outcome::Right,
                std::cmp::Ordering::Equal => Outcome::Tie,
            };
            let created_at = options.base_time + Duration::microseconds(out.len() as i64);
            out.push(Comparison::new(left, right, outcome, created_at).with_respondent(*respondent));
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    item_id: String,
    score: f64,
    method: String,
}

/// Writes scores sorted by descending score, equal scores by item id.
pub fn export_scores(table: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    if table.is_empty() {
        return Err(Error::InsufficientData("empty score table".into()));
    }
    let mut writer = csv::Writer::from_path(path)?;
    for (id, score) in table.ranked() {
        writer.serialize(ScoreRow {
            item_id: id.to_string(),
            score,
            method: table.method.clone(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut scores = HashMap::new();
    let mut method = String::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row?;
        method = row.method;
        scores.insert(row.item_id, row.score);
    }
    ScoreTable::new(method, scores)
}
