//! Rao-Kupper tie extension of Bradley-Terry, fitted by minorize-maximize.
//!
//! P(i beats j) = pi_i / (pi_i + theta pi_j)
//! P(tie)       = (theta^2 - 1) pi_i pi_j / ((pi_i + theta pi_j)(pi_j + theta pi_i))

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::ScoreTable;
use crate::types::{Comparison, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RkConfig {
    /// Stop when one sweep changes the log-likelihood by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Virtual games per item against a fixed average opponent (half won,
    /// half lost). Zero gives the plain maximum-likelihood fit.
    pub prior_games: f64,
}

impl Default for RkConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
            prior_games: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkParams {
    /// Strengths, normalised to sum to 1.
    pub pi: BTreeMap<String, f64>,
    /// Tie parameter, `>= 1`; exactly 1 when the data has no ties.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaoKupperFit {
    pub params: RkParams,
    /// Log-likelihood of the observed comparisons (virtual games excluded).
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Scores are `ln pi`.
    pub table: ScoreTable,
}

/// `[P(i wins), P(tie), P(j wins)]`.
pub fn outcome_probabilities(pi_i: f64, pi_j: f64, theta: f64) -> [f64; 3] {
    let a = pi_i + theta * pi_j;
    let b = pi_j + theta * pi_i;
    [pi_i / a, (theta * theta - 1.0) * pi_i * pi_j / (a * b), pi_j / b]
}

/// Sufficient statistics over `n` real items plus an optional anchor at index `n`.
struct Counts {
    n: usize,
    /// Wins plus ties per item.
    credit: Vec<f64>,
    /// `pairs[(i, j)]`: multiplicity of `ln(pi_i + theta pi_j)` in the likelihood.
    pairs: Vec<((usize, usize), f64)>,
    ties: f64,
}

impl Counts {
    fn log_likelihood(&self, pi: &[f64], theta: f64) -> f64 {
        let mut ll = 0.0;
        for (i, &a) in self.credit.iter().enumerate() {
            if a > 0.0 {
                ll += a * pi[i].ln();
            }
        }
        for &((i, j), m) in &self.pairs {
            ll -= m * (pi[i] + theta * pi[j]).ln();
        }
        if self.ties > 0.0 {
            ll += self.ties * (theta * theta - 1.0).ln();
        }
        ll
    }
}

fn build_counts(
    comparisons: &[Comparison],
    index: &HashMap<&str, usize>,
    n: usize,
    prior_games: f64,
) -> Counts {
    let slots = if prior_games > 0.0 { n + 1 } else { n };
    let mut credit = vec![0.0; slots];
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ties = 0.0;
    for c in comparisons {
        let l = index[c.left_id.as_str()];
        let r = index[c.right_id.as_str()];
        match c.outcome {
            Outcome::Left => {
                credit[l] += 1.0;
                *pairs.entry((l, r)).or_default() += 1.0;
            }
            Outcome::Right => {
                credit[r] += 1.0;
                *pairs.entry((r, l)).or_default() += 1.0;
            }
            Outcome::Tie => {
                credit[l] += 1.0;
                credit[r] += 1.0;
                ties += 1.0;
                *pairs.entry((l, r)).or_default() += 1.0;
                *pairs.entry((r, l)).or_default() += 1.0;
            }
        }
    }
    if prior_games > 0.0 {
        let half = prior_games / 2.0;
        for i in 0..n {
            credit[i] += half;
            credit[n] += half;
            *pairs.entry((i, n)).or_default() += half;
            *pairs.entry((n, i)).or_default() += half;
        }
    }
    Counts {
        n,
        credit,
        pairs: pairs.into_iter().collect(),
        ties,
    }
}

pub fn rao_kupper_fit(comparisons: &[Comparison], config: &RkConfig) -> Result<RaoKupperFit> {
    if !(config.tolerance > 0.0 && config.prior_games >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad Rao-Kupper config {config:?}")));
    }
    let ids: Vec<String> = comparisons
        .iter()
        .flat_map(|c| [c.left_id.clone(), c.right_id.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = ids.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "Rao-Kupper needs at least 2 items, got {n}"
        )));
    }
    let index: HashMap<&str, usize> =
        ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let anchored = config.prior_games > 0.0;
    let counts = build_counts(comparisons, &index, n, config.prior_games);
    if !anchored {
        if let Some(k) = counts.credit.iter().position(|&a| a == 0.0) {
            return Err(Error::Numerical(format!(
                "no finite maximum: item {:?} never wins or ties; use prior_games > 0",
                ids[k]
            )));
        }
    }
    let real = build_counts(comparisons, &index, n, 0.0);

    let slots = counts.credit.len();
    let mut pi = vec![1.0 / n as f64; slots];
    let mut theta = if counts.ties > 0.0 { 1.5 } else { 1.0 };
    let mut ll = counts.log_likelihood(&pi, theta);
    let mut iterations = 0;
    let mut change = f64::INFINITY;

    while iterations < config.max_iterations {
        iterations += 1;
        // Strengths: pi_i = credit_i / sum of minorizer slopes.
        let mut slope = vec![0.0; slots];
        for &((i, j), m) in &counts.pairs {
            let denom = pi[i] + theta * pi[j];
            slope[i] += m / denom;
            slope[j] += m * theta / denom;
        }
        for i in 0..counts.n {
            pi[i] = counts.credit[i] / slope[i];
        }
        if !anchored {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
        }
        // Tie parameter: maximise T ln(theta^2 - 1) - theta C.
        if counts.ties > 0.0 {
            let c: f64 = counts
                .pairs
                .iter()
                .map(|&((i, j), m)| m * pi[j] / (pi[i] + theta * pi[j]))
                .sum();
            let r = counts.ties / c;
            theta = r + (1.0 + r * r).sqrt();
        }
        let next = counts.log_likelihood(&pi, theta);
        if !next.is_finite() {
            return Err(Error::Numerical("Rao-Kupper log-likelihood diverged".into()));
        }
        change = next - ll;
        ll = next;
        if change.abs() < config.tolerance {
            break;
        }
    }
    if change.abs() >= config.tolerance {
        return Err(Error::NonConvergence {
            method: "rao-kupper",
            iterations,
            residual: change.abs(),
        });
    }

    let total: f64 = pi[..n].iter().sum();
    let normalized: Vec<f64> = pi[..n].iter().map(|p| p / total).collect();
    let log_likelihood = real.log_likelihood(&normalized, theta);
    let params = RkParams {
        pi: ids.iter().cloned().zip(normalized.iter().copied()).collect(),
        theta,
    };
    let scores = ids
        .iter()
        .cloned()
        .zip(normalized.iter().map(|p| p.ln()))
        .collect();
    Ok(RaoKupperFit {
        params,
        log_likelihood,
        iterations,
        table: ScoreTable::new("rao_kupper", scores)?,
    })
}

/// Log-likelihood of `comparisons` under fixed parameters.
pub fn log_likelihood(comparisons: &[Comparison], params: &RkParams) -> Result<f64> {
    let mut ll = 0.0;
    for c in comparisons {
        let pi_l = *params
            .pi
            .get(&c.left_id)
            .ok_or_else(|| Error::UnknownItem(c.left_id.clone()))?;
        let pi_r = *params
            .pi
            .get(&c.right_id)
            .ok_or_else(|| Error::UnknownItem(c.right_id.clone()))?;
        let p = outcome_probabilities(pi_l, pi_r, params.theta);
        ll += p[c.outcome.class_index()].ln();
    }
    Ok(ll)
}
