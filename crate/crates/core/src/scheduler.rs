//! Pair selection for live surveys: attribute-matched partners with balanced
//! exposure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Item;

/// Attribute values prepared for matching: continuous attributes are
/// standardised over the catalog, `{0,1}` indicators are kept as is and
/// matched exactly.
#[derive(Debug, Clone)]
pub struct Catalog {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    values: Vec<BTreeMap<String, f64>>,
    binary: BTreeSet<String>,
}

impl Catalog {
    pub fn new(items: &[Item]) -> Result<Self> {
        let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for item in items {
            for (name, &v) in &item.attributes {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        id: item.id.clone(),
                        what: "attribute",
                    });
                }
                columns.entry(name).or_default().push(v);
            }
        }
        let mut binary = BTreeSet::new();
        let mut scale: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for (name, vals) in &columns {
            if vals.iter().all(|&v| v == 0.0 || v == 1.0) {
                binary.insert(name.to_string());
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            scale.insert(name, (mean, if std > 0.0 { std } else { 1.0 }));
        }
        let mut index = BTreeMap::new();
        for (k, item) in items.iter().enumerate() {
            if index.insert(item.id.clone(), k).is_some() {
                return Err(Error::DuplicateItem(item.id.clone()));
            }
        }
        let values = items
            .iter()
            .map(|item| {
                item.attributes
                    .iter()
                    .map(|(name, &v)| {
                        let v = match scale.get(name.as_str()) {
                            Some(&(mean, std)) => (v - mean) / std,
                            None => v,
                        };
                        (name.clone(), v)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            ids: items.iter().map(|i| i.id.clone()).collect(),
            index,
            values,
            binary,
        })
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

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Number of distinct attribute names in the catalog.
    pub fn schema_size(&self) -> usize {
        let mut names = BTreeSet::new();
        for v in &self.values {
            names.extend(v.keys());
        }
        names.len()
    }

    fn matches(&self, anchor: usize, other: usize, names: &[&String], tolerance: f64) -> bool {
        let (a, b) = (&self.values[anchor], &self.values[other]);
        names.iter().all(|&name| match (a.get(name), b.get(name)) {
            (Some(x), Some(y)) if self.binary.contains(name) => x == y,
            (Some(x), Some(y)) => (x - y).abs() <= tolerance,
            _ => false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub shown_counts: BTreeMap<String, u64>,
    pub n_match_attributes: usize,
    pub match_tolerance: f64,
    /// Response ids already counted.
    pub seen_responses: BTreeSet<String>,
    rng: ChaCha8Rng,
}

impl SchedulerState {
    pub fn new(seed: u64) -> Self {
        Self::with_matching(seed, 8, 0.1)
    }

    pub fn with_matching(seed: u64, n_match_attributes: usize, match_tolerance: f64) -> Self {
        Self {
            shown_counts: BTreeMap::new(),
            n_match_attributes,
            match_tolerance,
            seen_responses: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_match_attributes == 0 {
            return Err(Error::InvalidConfig("n_match_attributes must be at least 1".into()));
        }
        if !(self.match_tolerance.is_finite() && self.match_tolerance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "match_tolerance must be >= 0, got {}",
                self.match_tolerance
            )));
        }
        Ok(())
    }

    pub fn shown(&self, id: &str) -> u64 {
        self.shown_counts.get(id).copied().unwrap_or(0)
    }

    /// Picks uniformly among `pool` members with the fewest showings.
    fn least_shown(&mut self, catalog: &Catalog, pool: &[usize]) -> Option<usize> {
        let min = pool.iter().map(|&k| self.shown(&catalog.ids[k])).min()?;
        let lowest: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&k| self.shown(&catalog.ids[k]) == min)
            .collect();
        lowest.choose(&mut self.rng).copied()
    }

    /// Next pair to show as `(left, right)`.
    pub fn next_pair(&mut self, catalog: &Catalog) -> Result<(String, String)> {
        self.validate()?;
        if catalog.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 items to schedule, have {}",
                catalog.len()
            )));
        }
        let everyone: Vec<usize> = (0..catalog.len()).collect();
        let anchor = self.least_shown(catalog, &everyone).expect("non-empty catalog");
        let others: Vec<usize> = everyone.into_iter().filter(|&k| k != anchor).collect();

        let present: Vec<&String> = catalog.values[anchor].keys().collect();
        let k = self.n_match_attributes.min(present.len());
        let drawn: Vec<&String> = present.choose_multiple(&mut self.rng, k).copied().collect();

        let mut partner = None;
        let mut width = drawn.len();
        while width >= 1 {
            let names = &drawn[..width];
            let candidates: Vec<usize> = others
                .iter()
                .copied()
                .filter(|&o| catalog.matches(anchor, o, names, self.match_tolerance))
                .collect();
            if let Some(p) = self.least_shown(catalog, &candidates) {
                partner = Some(p);
                break;
            }
            width /= 2;
        }
        let partner = match partner {
            Some(p) => p,
            None => self.least_shown(catalog, &others).expect("at least one other item"),
        };
        let (a, b) = (catalog.ids[anchor].clone(), catalog.ids[partner].clone());
        Ok(if self.rng.random_bool(0.5) { (a, b) } else { (b, a) })
    }

    /// Counts one answered pair. Returns false if `response_id` was already
    /// recorded, leaving the state untouched.
    pub fn record_response(
        &mut self,
        catalog: &Catalog,
        response_id: &str,
        left_id: &str,
        right_id: &str,
    ) -> Result<bool> {
        for id in [left_id, right_id] {
            if !catalog.contains(id) {
                return Err(Error::UnknownItem(id.to_string()));
            }
        }
        if !self.seen_responses.insert(response_id.to_string()) {
            return Ok(false);
        }
        *self.shown_counts.entry(left_id.to_string()).or_default() += 1;
        *self.shown_counts.entry(right_id.to_string()).or_default() += 1;
        Ok(true)
    }

    /// max - min of shown counts over the catalog (unshown items count 0).
    pub fn exposure_spread(&self, catalog: &Catalog) -> u64 {
        let counts: Vec<u64> = catalog.ids.iter().map(|id| self.shown(id)).collect();
        counts.iter().max().unwrap_or(&0) - counts.iter().min().unwrap_or(&0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let state: Self = serde_json::from_slice(&fs::read(path)?)?;
        state.validate()?;
        Ok(state)
    }
}

/// Issues and records `rounds` pairs in sequence, as a survey with every
/// answer returned would.
pub fn simulate_schedule(
    state: &mut SchedulerState,
    catalog: &Catalog,
    rounds: usize,
) -> Result<Vec<(String, String)>> {
    let mut issued = Vec::with_capacity(rounds);
    for k in 0..rounds {
        let (l, r) = state.next_pair(catalog)?;
        let rid = format!("sim-{k}-{}", state.seen_responses.len());
        state.record_response(catalog, &rid, &l, &r)?;
        issued.push((l, r));
    }
    Ok(issued)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_catalog(n: usize) -> Catalog {
        let attrs: BTreeMap<String, f64> =
            (0..12).map(|k| (format!("a{k}"), if k % 2 == 0 { 1.0 } else { 0.5 })).collect();
        let items: Vec<Item> = (0..n)
            .map(|i| Item::new(format!("i{i}"), vec![0.0]).with_attributes(attrs.clone()))
            .collect();
        Catalog::new(&items).unwrap()
    }

    #[test]
    fn two_items_always_pair_with_random_sides() {
        let cat = uniform_catalog(2);
        let mut s = SchedulerState::new(1);
        let mut lefts = BTreeSet::new();
        for k in 0..20 {
            let (l, r) = s.next_pair(&cat).unwrap();
            assert_ne!(l, r);
            s.record_response(&cat, &k.to_string(), &l, &r).unwrap();
            lefts.insert(l);
        }
        assert_eq!(lefts.len(), 2);
    }

    #[test]
    fn balanced_exposure_on_uniform_catalog() {
        let cat = uniform_catalog(10);
        let mut s = SchedulerState::new(7);
        simulate_schedule(&mut s, &cat, 100).unwrap();
        assert!(s.exposure_spread(&cat) <= 2);
        assert_eq!(s.shown_counts.values().sum::<u64>(), 200);
    }

    #[test]
    fn partner_matches_on_drawn_attributes() {
        // Items 0 and 1 share every attribute; 2 and 3 differ everywhere.
        let mk = |id: &str, x: f64, flag: f64| {
            Item::new(id, vec![0.0]).with_attributes(BTreeMap::from([
                ("width".to_string(), x),
                ("lane".to_string(), flag),
            ]))
        };
        let items = vec![mk("a", 0.0, 1.0), mk("b", 0.0, 1.0), mk("c", 10.0, 0.0), mk("d", -10.0, 0.0)];
        let cat = Catalog::new(&items).unwrap();
        let mut s = SchedulerState::new(3);
        // Make a the unique least-shown item.
        for (k, (l, r)) in [("b", "c"), ("c", "d"), ("b", "d")].iter().enumerate() {
            s.record_response(&cat, &k.to_string(), l, r).unwrap();
        }
        let (l, r) = s.next_pair(&cat).unwrap();
        let pair: BTreeSet<String> = [l, r].into();
        assert_eq!(pair, BTreeSet::from(["a".to_string(), "b".to_string()]));
    }

    #[test]
    fn dead_end_falls_back_to_least_shown() {
        let items: Vec<Item> = (0..4)
            .map(|i| Item::new(format!("i{i}"), vec![0.0])
                .with_attributes(BTreeMap::from([("x".to_string(), i as f64 * 100.0)])))
            .collect();
        let cat = Catalog::new(&items).unwrap();
        let mut s = SchedulerState::new(5);
        simulate_schedule(&mut s, &cat, 40).unwrap();
        assert!(s.exposure_spread(&cat) <= 2);
    }

    #[test]
    fn duplicate_response_is_ignored() {
        let cat = uniform_catalog(3);
        let mut s = SchedulerState::new(0);
        assert!(s.record_response(&cat, "r1", "i0", "i1").unwrap());
        assert!(!s.record_response(&cat, "r1", "i0", "i1").unwrap());
        assert_eq!(s.shown("i0"), 1);
        assert_eq!(s.shown("i1"), 1);
        assert!(matches!(s.record_response(&cat, "r2", "i0", "zz"), Err(Error::UnknownItem(_))));
    }

    #[test]
    fn errors_on_tiny_catalog_and_bad_config() {
        let mut s = SchedulerState::new(0);
        assert!(s.next_pair(&uniform_catalog(1)).is_err());
        let mut bad = SchedulerState::with_matching(0, 0, 0.1);
        assert!(matches!(bad.next_pair(&uniform_catalog(3)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn checkpoint_resumes_identically() {
        let cat = uniform_catalog(6);
        let mut s = SchedulerState::new(11);
        simulate_schedule(&mut s, &cat, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sched.json");
        s.save(&path).unwrap();
        let mut restored = SchedulerState::load(&path).unwrap();
        assert_eq!(restored, s);
        assert_eq!(restored.next_pair(&cat).unwrap(), s.next_pair(&cat).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn anchor_is_least_shown_and_never_self(seed in 0u64..500, n in 2usize..12, rounds in 1usize..60) {
            let cat = uniform_catalog(n);
            let mut s = SchedulerState::new(seed);
            for k in 0..rounds {
                let min = cat.ids().iter().map(|id| s.shown(id)).min().unwrap();
                let (l, r) = s.next_pair(&cat).unwrap();
                prop_assert_ne!(&l, &r);
                prop_assert!(s.shown(&l) == min || s.shown(&r) == min);
                s.record_response(&cat, &k.to_string(), &l, &r).unwrap();
            }
            prop_assert!(s.exposure_spread(&cat) <= 2);
            prop_assert_eq!(s.shown_counts.values().sum::<u64>(), 2 * rounds as u64);
        }

        #[test]
        fn same_seed_same_schedule(seed in 0u64..1000) {
            let cat = uniform_catalog(5);
            let a = simulate_schedule(&mut SchedulerState::new(seed), &cat, 15).unwrap();
            let b = simulate_schedule(&mut SchedulerState::new(seed), &cat, 15).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
