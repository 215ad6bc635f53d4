//! Synthetic worlds with known latent scores, comparison sampling and the
//! accuracy-versus-budget experiment.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    elo_fit, outcome_probabilities, rank_centrality, rao_kupper_fit, skill_fit, EloConfig, RcConfig,
    RkConfig, SkillConfig,
};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::score_items;
use crate::scores::ScoreTable;
use crate::trainer::{train, TrainConfig};
use crate::types::{make_dataset, split, Comparison, Dataset, Item, Outcome, SplitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    /// `s = w . x` with a unit-norm `w`.
    Linear,
    /// `s = v . tanh(W x + b)`.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    /// Noisy perceived scores; a tie when they differ by less than the bandwidth.
    Perceptual,
    /// Outcomes drawn from Rao-Kupper probabilities with `pi = exp(s)`.
    RaoKupper { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_items: usize,
    pub feature_dim: usize,
    pub avg_comparisons_per_item: f64,
    pub tie_bandwidth: f64,
    pub respondent_noise: f64,
    pub generator: Generator,
    pub sampling: Sampling,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_items: 200,
            feature_dim: 16,
            avg_comparisons_per_item: 3.3,
            tie_bandwidth: 0.3,
            respondent_noise: 0.2,
            generator: Generator::Linear,
            sampling: Sampling::Perceptual,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_items < 2 {
            return bad(format!("need at least 2 items, got {}", self.n_items));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.avg_comparisons_per_item.is_finite() && self.avg_comparisons_per_item > 0.0) {
            return bad(format!(
                "avg_comparisons_per_item must be > 0, got {}",
                self.avg_comparisons_per_item
            ));
        }
        if !(self.tie_bandwidth >= 0.0) {
            return bad(format!("tie_bandwidth must be >= 0, got {}", self.tie_bandwidth));
        }
        if !(self.respondent_noise.is_finite() && self.respondent_noise >= 0.0) {
            return bad(format!("respondent_noise must be >= 0, got {}", self.respondent_noise));
        }
        if let Generator::Mlp { hidden: 0 } = self.generator {
            return bad("mlp generator needs a hidden layer".into());
        }
        if let Sampling::RaoKupper { theta } = self.sampling {
            if !(theta.is_finite() && theta >= 1.0) {
                return bad(format!("Rao-Kupper theta must be >= 1, got {theta}"));
            }
        }
        Ok(())
    }

    /// `round(avg * n / 2)`: each comparison exposes two items.
    pub fn comparison_count(&self) -> usize {
        (self.avg_comparisons_per_item * self.n_items as f64 / 2.0).round() as usize
    }
}

/// Hidden parameters of the scoring function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneratorParams {
    Linear { w: Vec<f64> },
    Mlp { w1: Vec<Vec<f64>>, b1: Vec<f64>, v: Vec<f64> },
}

impl GeneratorParams {
    pub fn score(&self, x: &[f64]) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        match self {
            GeneratorParams::Linear { w } => dot(w, x),
            GeneratorParams::Mlp { w1, b1, v } => w1
                .iter()
                .zip(b1)
                .zip(v)
                .map(|((row, b), vk)| vk * (dot(row, x) + b).tanh())
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub items: Vec<Item>,
    /// Aligned with `items`.
    pub true_scores: Vec<f64>,
    pub generator: GeneratorParams,
}

impl SimWorld {
    pub fn score_table(&self) -> Result<ScoreTable> {
        let scores = self
            .items
            .iter()
            .zip(&self.true_scores)
            .map(|(item, s)| (item.id.clone(), *s))
            .collect();
        ScoreTable::new("truth", scores)
    }

    pub fn true_score(&self, id: &str) -> Option<f64> {
        self.items
            .iter()
            .position(|item| item.id == id)
            .map(|k| self.true_scores[k])
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn gen_world(config: &SimConfig) -> Result<SimWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.feature_dim;
    let generator = match config.generator {
        Generator::Linear => {
            let mut w = gaussian_vec(&mut rng, d, 1.0);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                w[0] = 1.0;
            } else {
                w.iter_mut().for_each(|x| *x /= norm);
            }
            GeneratorParams::Linear { w }
        }
        Generator::Mlp { hidden } => {
            let w1 = (0..hidden)
                .map(|_| gaussian_vec(&mut rng, d, 1.0 / (d as f64).sqrt()))
                .collect();
            let b1 = gaussian_vec(&mut rng, hidden, 0.1);
            let v = gaussian_vec(&mut rng, hidden, 1.0 / (hidden as f64).sqrt());
            GeneratorParams::Mlp { w1, b1, v }
        }
    };
    let width = (config.n_items - 1).to_string().len();
    let items: Vec<Item> = (0..config.n_items)
        .map(|k| Item::new(format!("s{k:0width$}"), gaussian_vec(&mut rng, d, 1.0)))
        .collect();
    let true_scores: Vec<f64> = items.iter().map(|item| generator.score(&item.features)).collect();
    if true_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("generator produced a non-finite score".into()));
    }
    Ok(SimWorld {
        items,
        true_scores,
        generator,
    })
}

fn sim_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_704_067_200, 0).expect("valid timestamp")
}

/// Samples `config.comparison_count()` comparisons between uniformly drawn
/// distinct items. Timestamps advance one second per comparison.
pub fn gen_comparisons(world: &SimWorld, config: &SimConfig) -> Result<Vec<Comparison>> {
    config.validate()?;
    let n = world.items.len();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 items".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, config.respondent_noise)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let base = sim_epoch();
    let comparisons = (0..config.comparison_count())
        .map(|k| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let (s_i, s_j) = (world.true_scores[i], world.true_scores[j]);
            let outcome = match config.sampling {
                Sampling::Perceptual => {
                    let diff = (s_i + noise.sample(&mut rng)) - (s_j + noise.sample(&mut rng));
                    if diff.abs() < config.tie_bandwidth {
                        Outcome::Tie
                    } else if diff > 0.0 {
                        Outcome::Left
                    } else {
                        Outcome::Right
                    }
                }
                Sampling::RaoKupper { theta } => {
                    let top = s_i.max(s_j);
                    let p = outcome_probabilities((s_i - top).exp(), (s_j - top).exp(), theta);
                    let u: f64 = rng.random();
                    if u < p[0] {
                        Outcome::Left
                    } else if u < p[0] + p[1] {
                        Outcome::Tie
                    } else {
                        Outcome::Right
                    }
                }
            };
            Comparison::new(
                &world.items[i].id,
                &world.items[j].id,
                outcome,
                base + Duration::seconds(k as i64),
            )
        })
        .collect();
    Ok(comparisons)
}

/// World plus comparisons as a validated dataset.
pub fn simulate(config: &SimConfig) -> Result<(SimWorld, Dataset)> {
    let world = gen_world(config)?;
    let comparisons = gen_comparisons(&world, config)?;
    let dataset = make_dataset(world.items.clone(), comparisons)?;
    Ok((world, dataset))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pcs,
    Elo,
    Skill,
    RankCentrality,
    RaoKupper,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Pcs,
        Method::Elo,
        Method::Skill,
        Method::RankCentrality,
        Method::RaoKupper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pcs => "pcs",
            Method::Elo => "elo",
            Method::Skill => "skill",
            Method::RankCentrality => "rank_centrality",
            Method::RaoKupper => "rao_kupper",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Fitting settings shared by every cell of a budget experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetOptions {
    pub train: TrainConfig,
    /// Margin used for the reported 3-class accuracy.
    pub gamma: f64,
    pub elo: EloConfig,
    pub skill: SkillConfig,
    pub rank_centrality: RcConfig,
    pub rao_kupper: RkConfig,
}

impl Default for BudgetOptions {
    fn default() -> Self {
        Self {
            train: TrainConfig::small_data(),
            gamma: 0.3,
            elo: EloConfig::default(),
            skill: SkillConfig::default(),
            rank_centrality: RcConfig::default(),
            rao_kupper: RkConfig {
                prior_games: 1.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub avg_comparisons: f64,
    pub method: Method,
    pub seed: u64,
    pub accuracy2: Option<f64>,
    pub accuracy3: f64,
    /// Tie fraction of the generated comparisons.
    pub tie_fraction: f64,
}

/// Test-set scores of one method. Items never seen in training get a neutral
/// score: the method's prior or the mean of its fitted strengths.
pub fn fit_method(
    method: Method,
    train_set: &Dataset,
    dev_set: &Dataset,
    options: &BudgetOptions,
) -> Result<ScoreTable> {
    let comps = train_set.comparisons();
    let (mut table, neutral) = match method {
        Method::Pcs => {
            let (params, _) = train(train_set, dev_set, &options.train)?;
            return score_items(&params, train_set.items(), "pcs");
        }
        Method::Elo => (elo_fit(comps, &options.elo)?, options.elo.initial_rating),
        Method::Skill => {
            let (table, _) = skill_fit(comps, &options.skill)?;
            let prior = options.skill.mu0 - 3.0 * options.skill.sigma0;
            (table, prior)
        }
        Method::RankCentrality => {
            let fit = rank_centrality(comps, &options.rank_centrality)?;
            let mean = 1.0 / fit.table.len() as f64;
            (fit.table, mean)
        }
        Method::RaoKupper => {
            let fit = rao_kupper_fit(comps, &options.rao_kupper)?;
            let mean = -(fit.table.len() as f64).ln();
            (fit.table, mean)
        }
    };
    table.fill_missing(train_set.items().iter().map(|item| item.id.as_str()), neutral);
    Ok(table)
}

/// Regenerates a world at every budget and seed (world seed = `base.seed + k`),
/// splits 70-10-20, fits every method on train and evaluates on test.
pub fn run_budget_experiment(
    base: &SimConfig,
    budgets: &[f64],
    methods: &[Method],
    n_seeds: usize,
    options: &BudgetOptions,
) -> Result<Vec<BudgetRow>> {
    if budgets.is_empty() || methods.is_empty() || n_seeds == 0 {
        return Err(Error::InvalidConfig(
            "budget experiment needs budgets, methods and at least one seed".into(),
        ));
    }
    let cells: Vec<(f64, u64)> = budgets
        .iter()
        .flat_map(|&b| (0..n_seeds as u64).map(move |k| (b, base.seed + k)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(budget, seed)| {
            let config = SimConfig {
                avg_comparisons_per_item: budget,
                seed,
                ..*base
            };
            let (_, dataset) = simulate(&config)?;
            let (train_set, dev_set, test_set) = split(&dataset, &SplitSpec::standard(seed))?;
            let mut opts = *options;
            opts.train.hyper.seed = seed;
            methods
                .iter()
                .map(|&method| {
                    let table = fit_method(method, &train_set, &dev_set, &opts)?;
                    let report = metrics::evaluate(&table, test_set.comparisons(), options.gamma)?;
                    Ok(BudgetRow {
                        avg_comparisons: budget,
                        method,
                        seed,
                        accuracy2: report.accuracy2,
                        accuracy3: report.accuracy3,
                        tie_fraction: dataset.tie_fraction(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub avg_comparisons: f64,
    pub method: Method,
    pub mean_accuracy2: f64,
    /// Sample standard deviation; zero with a single seed.
    pub std_accuracy2: f64,
    pub n_seeds: usize,
}

/// Mean and spread of test 2-class accuracy per (budget, method), in first-seen order.
pub fn summarize(rows: &[BudgetRow]) -> Vec<BudgetSummary> {
    let mut order: Vec<(u64, Method)> = Vec::new();
    let mut groups: HashMap<(u64, Method), Vec<f64>> = HashMap::new();
    for row in rows {
        let key = (row.avg_comparisons.to_bits(), row.method);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        let entry = groups.entry(key).or_default();
        if let Some(acc) = row.accuracy2 {
            entry.push(acc);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let values = &groups[&key];
            let n = values.len();
            let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
            let std = if n < 2 {
                0.0
            } else {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            BudgetSummary {
                avg_comparisons: f64::from_bits(key.0),
                method: key.1,
                mean_accuracy2: mean,
                std_accuracy2: std,
                n_seeds: n,
            }
        })
        .collect()
}

pub fn write_budget_csv(rows: &[BudgetRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["avg_comparisons", "method", "seed", "accuracy2", "accuracy3", "tie_fraction"])?;
    for r in rows {
        out.write_record([
            r.avg_comparisons.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            r.accuracy2.map(|a| a.to_string()).unwrap_or_default(),
            r.accuracy3.to_string(),
            r.tie_fraction.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            n_items: 30,
            feature_dim: 4,
            avg_comparisons_per_item: 4.0,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn worlds_are_reproducible_and_shaped() {
        let c = SimConfig::default();
        let a = gen_world(&c).unwrap();
        assert_eq!(a, gen_world(&c).unwrap());
        assert_eq!(a.items.len(), 200);
        assert!(a.items.iter().all(|i| i.features.len() == 16));
        let GeneratorParams::Linear { w } = &a.generator else { panic!() };
        assert!((w.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.generator.score(&[0.0; 16]), 0.0);
        let b = gen_world(&SimConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a.true_scores, b.true_scores);
    }

    #[test]
    fn mlp_worlds_are_finite() {
        let c = SimConfig { generator: Generator::Mlp { hidden: 8 }, ..small(3) };
        let w = gen_world(&c).unwrap();
        assert!(w.true_scores.iter().all(|s| s.is_finite()));
        assert!(w.true_scores.iter().any(|&s| s != w.true_scores[0]));
    }

    #[test]
    fn comparison_count_formula() {
        let c = SimConfig { n_items: 100, avg_comparisons_per_item: 3.3, ..Default::default() };
        assert_eq!(c.comparison_count(), 165);
        let w = gen_world(&c).unwrap();
        assert_eq!(gen_comparisons(&w, &c).unwrap().len(), 165);
    }

    #[test]
    fn noiseless_outcomes_follow_true_scores() {
        let c = SimConfig { tie_bandwidth: 0.0, respondent_noise: 0.0, ..small(4) };
        let (w, d) = simulate(&c).unwrap();
        assert_eq!(d.tie_count(), 0);
        for cmp in d.comparisons() {
            let (l, r) = (w.true_score(&cmp.left_id).unwrap(), w.true_score(&cmp.right_id).unwrap());
            assert_eq!(cmp.outcome, if l > r { Outcome::Left } else { Outcome::Right });
            assert_ne!(cmp.left_id, cmp.right_id);
        }
    }

    #[test]
    fn huge_bandwidth_gives_only_ties() {
        let c = SimConfig { tie_bandwidth: 1e9, ..small(5) };
        let (_, d) = simulate(&c).unwrap();
        assert_eq!(d.tie_count(), d.len());
    }

    #[test]
    fn tie_fraction_grows_with_bandwidth() {
        let mean_ties = |tau: f64| {
            (0..10)
                .map(|s| simulate(&SimConfig { tie_bandwidth: tau, respondent_noise: 0.2, ..small(s) })
                    .unwrap().1.tie_fraction())
                .sum::<f64>() / 10.0
        };
        let (a, b, c) = (mean_ties(0.0), mean_ties(0.5), mean_ties(1.0));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn rao_kupper_sampling_produces_ties() {
        let c = SimConfig { sampling: Sampling::RaoKupper { theta: 2.0 }, ..small(6) };
        let (_, d) = simulate(&c).unwrap();
        assert!(d.tie_count() > 0 && d.tie_count() < d.len());
        let bad = SimConfig { sampling: Sampling::RaoKupper { theta: 0.5 }, ..small(6) };
        assert!(gen_world(&bad).is_err());
    }

    #[test]
    fn budget_rows_and_summary() {
        let base = SimConfig { n_items: 20, feature_dim: 3, ..Default::default() };
        let mut options = BudgetOptions::default();
        options.train.hyper.max_epochs = 2;
        options.train.width = 8;
        let rows = run_budget_experiment(&base, &[4.0], &[Method::Elo], 1, &options).unwrap();
        assert_eq!(rows.len(), 1);
        let rows = run_budget_experiment(&base, &[3.0, 6.0], &Method::ALL, 2, &options).unwrap();
        assert_eq!(rows.len(), 20);
        let again = run_budget_experiment(&base, &[3.0, 6.0], &Method::ALL, 2, &options).unwrap();
        assert_eq!(rows, again);
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 10);
        assert!(summary.iter().all(|s| s.n_seeds == 2));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("budget.csv");
        write_budget_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("avg_comparisons,method,seed,accuracy2,accuracy3,tie_fraction\n"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn noiseless_high_budget_is_easy_for_everyone() {
        let base = SimConfig {
            n_items: 40,
            feature_dim: 4,
            tie_bandwidth: 0.0,
            respondent_noise: 0.0,
            ..Default::default()
        };
        let mut options = BudgetOptions::default();
        options.train.hyper.learning_rate = 0.01;
        options.train.hyper.batch_size = 64;
        options.train.width = 16;
        let rows = run_budget_experiment(&base, &[60.0], &Method::ALL, 1, &options).unwrap();
        for r in rows {
            assert!(r.accuracy2.unwrap() >= 0.9, "{:?}", r);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("gp".parse::<Method>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn budget_formula_is_exact(n in 2usize..60, avg in 0.1f64..8.0, seed in 0u64..1000) {
            let c = SimConfig { n_items: n, feature_dim: 2, avg_comparisons_per_item: avg, seed, ..Default::default() };
            let w = gen_world(&c).unwrap();
            let comps = gen_comparisons(&w, &c).unwrap();
            prop_assert_eq!(comps.len(), (avg * n as f64 / 2.0).round() as usize);
            prop_assert!(comps.iter().all(|x| x.left_id != x.right_id));
        }
    }
}
