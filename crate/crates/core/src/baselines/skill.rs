//! Two-player Gaussian skill updates with a draw margin (TrueSkill-style).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::chronological;
use crate::error::{Error, Result};
use crate::scores::ScoreTable;
use crate::types::{Comparison, Outcome};

/// Below this the normal CDF is treated as zero and asymptotic forms are used.
const TINY_CDF: f64 = 2.222_758_749e-162;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillConfig {
    pub mu0: f64,
    pub sigma0: f64,
    pub beta: f64,
    pub tau: f64,
    /// `None` uses the tie fraction of the data being fitted.
    pub draw_probability: Option<f64>,
}

impl Default for SkillConfig {
    fn default() -> Self {
        let sigma0 = 25.0 / 3.0;
        Self {
            mu0: 25.0,
            sigma0,
            beta: sigma0 / 2.0,
            tau: sigma0 / 100.0,
            draw_probability: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillRating {
    pub mu: f64,
    pub sigma: f64,
}

impl SkillRating {
    /// Conservative estimate `mu - 3 sigma`.
    pub fn conservative(&self) -> f64 {
        self.mu - 3.0 * self.sigma
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Draw margin in skill units for a two-player game.
fn draw_margin(draw_probability: f64, beta: f64) -> f64 {
    std_normal().inverse_cdf((draw_probability + 1.0) / 2.0) * 2f64.sqrt() * beta
}

/// Mean and variance corrections for a decided game, `t` and `eps` already
/// divided by `c`.
fn win_factors(t: f64, eps: f64) -> (f64, f64) {
    let n = std_normal();
    let x = t - eps;
    let denom = n.cdf(x);
    if denom < TINY_CDF {
        return (-x, 1.0);
    }
    let v = n.pdf(x) / denom;
    (v, v * (v + x))
}

/// Mean and variance corrections for a drawn game.
fn draw_factors(t: f64, eps: f64) -> (f64, f64) {
    let n = std_normal();
    let denom = n.cdf(eps - t) - n.cdf(-eps - t);
    if denom < TINY_CDF {
        let v = if t < 0.0 { -t - eps } else { -t + eps };
        return (v, 1.0);
    }
    let v = (n.pdf(-eps - t) - n.pdf(eps - t)) / denom;
    let w = v * v + ((eps - t) * n.pdf(eps - t) + (eps + t) * n.pdf(eps + t)) / denom;
    (v, w)
}

/// Posterior ratings after one comparison; `draw_probability` must be resolved.
pub fn skill_update(
    left: SkillRating,
    right: SkillRating,
    outcome: Outcome,
    beta: f64,
    tau: f64,
    draw_probability: f64,
) -> Result<(SkillRating, SkillRating)> {
    // Orient as (first, second) with first the winner for decided games.
    let (first, second) = match outcome {
        Outcome::Right => (right, left),
        _ => (left, right),
    };
    let var1 = first.sigma * first.sigma + tau * tau;
    let var2 = second.sigma * second.sigma + tau * tau;
    let c2 = 2.0 * beta * beta + var1 + var2;
    let c = c2.sqrt();
    let t = (first.mu - second.mu) / c;
    let eps = draw_margin(draw_probability, beta) / c;
    let (v, w) = if outcome.is_tie() {
        draw_factors(t, eps)
    } else {
        win_factors(t, eps)
    };
    let first_new = SkillRating {
        mu: first.mu + var1 / c * v,
        sigma: (var1 * (1.0 - var1 / c2 * w)).sqrt(),
    };
    let second_new = SkillRating {
        mu: second.mu - var2 / c * v,
        sigma: (var2 * (1.0 - var2 / c2 * w)).sqrt(),
    };
    for r in [first_new, second_new] {
        if !(r.mu.is_finite() && r.sigma.is_finite()) {
            return Err(Error::Numerical(format!(
                "skill update produced {r:?} (v={v}, w={w}); check beta/draw probability"
            )));
        }
    }
    Ok(match outcome {
        Outcome::Right => (second_new, first_new),
        _ => (first_new, second_new),
    })
}

/// Sequential fit in timestamp order; returns `mu - 3 sigma` scores and the
/// full posterior per item.
pub fn skill_fit(
    comparisons: &[Comparison],
    config: &SkillConfig,
) -> Result<(ScoreTable, HashMap<String, SkillRating>)> {
    let draw_probability = match config.draw_probability {
        Some(p) => p,
        None if comparisons.is_empty() => 0.0,
        None => {
            comparisons.iter().filter(|c| c.outcome.is_tie()).count() as f64
                / comparisons.len() as f64
        }
    };
    if !(0.0..1.0).contains(&draw_probability) {
        return Err(Error::InvalidConfig(format!(
            "draw probability must lie in [0, 1), got {draw_probability}"
        )));
    }
    if !(config.sigma0 > 0.0 && config.beta > 0.0 && config.tau >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad skill config {config:?}")));
    }
    let prior = SkillRating {
        mu: config.mu0,
        sigma: config.sigma0,
    };
    let mut ratings: HashMap<String, SkillRating> = HashMap::new();
    for c in chronological(comparisons) {
        let left = *ratings.get(&c.left_id).unwrap_or(&prior);
        let right = *ratings.get(&c.right_id).unwrap_or(&prior);
        let (l, r) = skill_update(left, right, c.outcome, config.beta, config.tau, draw_probability)?;
        ratings.insert(c.left_id.clone(), l);
        ratings.insert(c.right_id.clone(), r);
    }
    let scores = ratings
        .iter()
        .map(|(id, r)| (id.clone(), r.conservative()))
        .collect();
    Ok((ScoreTable::new("skill", scores)?, ratings))
}
