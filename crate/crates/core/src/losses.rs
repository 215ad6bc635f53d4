//! Loss functions of the multi-loss objective.
//!
//! Every comparison contributes a softmax cross-entropy term from the fusion
//! head, plus either a margin hinge on the ranking scores (non-ties) or a
//! contraction term pulling tied scores within the margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Outcome;

/// Margin ranking hinge for a decided comparison.
///
/// Zero iff the chosen side leads by at least `gamma`:
/// `max(0, gamma + y * (f_left - f_right))` with `y = -1` for a left win.
pub fn hinge_rank_loss(f_left: f64, f_right: f64, outcome: Outcome, gamma: f64) -> Result<f64> {
    if outcome.is_tie() {
        return Err(Error::InvalidConfig(
            "hinge ranking loss is undefined for ties".into(),
        ));
    }
    Ok(hinge_argument(f_left, f_right, outcome, gamma).max(0.0))
}

/// Argument of the hinge, `gamma - (-y) * (f_left - f_right)`.
pub(crate) fn hinge_argument(f_left: f64, f_right: f64, outcome: Outcome, gamma: f64) -> f64 {
    gamma + outcome.sign() * (f_left - f_right)
}

/// Tie contraction `max(0, |f_left - f_right| - gamma)`.
pub fn tie_loss(f_left: f64, f_right: f64, gamma: f64) -> f64 {
    ((f_left - f_right).abs() - gamma).max(0.0)
}

/// Per-comparison ranking term: hinge for decided outcomes, contraction for ties.
/// Unweighted.
pub fn ranking_term(f_left: f64, f_right: f64, outcome: Outcome, gamma: f64) -> f64 {
    match outcome {
        Outcome::Tie => tie_loss(f_left, f_right, gamma),
        _ => hinge_argument(f_left, f_right, outcome, gamma).max(0.0),
    }
}

/// Numerically stable softmax over three logits.
pub fn softmax(logits: &[f64; 3]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// Cross-entropy of the 3-way classifier; classes ordered left, tie, right.
pub fn softmax_ce(logits: &[f64; 3], outcome: Outcome) -> Result<f64> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    Ok(log_sum - logits[outcome.class_index()])
}

/// Weights of the multi-loss objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda_rank: f64,
    pub lambda_tie: f64,
    /// Weight of the cross-entropy term; `0` gives the pure ranking objective.
    pub classification: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma", self.gamma),
            ("lambda_rank", self.lambda_rank),
            ("lambda_tie", self.lambda_tie),
            ("classification", self.classification),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Inputs of one batch entry for [`combined_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub f_left: f64,
    pub f_right: f64,
    pub logits: [f64; 3],
    pub outcome: Outcome,
}

/// Loss components of a batch.
///
/// `classification`, `ranking` and `tie` are sums over the batch divided by
/// the batch size, so `total = classification + lambda_rank * ranking +
/// lambda_tie * tie`. The `*_class_mean` fields divide by the class counts
/// instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub ranking: f64,
    pub tie: f64,
    pub ranking_class_mean: Option<f64>,
    pub tie_class_mean: Option<f64>,
    pub n_nontie: usize,
    pub n_tie: usize,
}

/// Mean multi-loss over a batch.
pub fn combined_loss(pairs: &[PairTerm], weights: &LossWeights) -> Result<LossBreakdown> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let mut ce_sum = 0.0;
    let mut hinge_sum = 0.0;
    let mut tie_sum = 0.0;
    let (mut n_nontie, mut n_tie) = (0usize, 0usize);
    for p in pairs {
        if weights.classification > 0.0 {
            ce_sum += softmax_ce(&p.logits, p.outcome)?;
        }
        match p.outcome {
            Outcome::Tie => {
                n_tie += 1;
                tie_sum += tie_loss(p.f_left, p.f_right, weights.gamma);
            }
            _ => {
                n_nontie += 1;
                hinge_sum += hinge_argument(p.f_left, p.f_right, p.outcome, weights.gamma).max(0.0);
            }
        }
    }
    let n = pairs.len() as f64;
    let classification = weights.classification * ce_sum / n;
    let ranking = hinge_sum / n;
    let tie = tie_sum / n;
    Ok(LossBreakdown {
        total: classification + weights.lambda_rank * ranking + weights.lambda_tie * tie,
        classification,
        ranking,
        tie,
        ranking_class_mean: (n_nontie > 0).then(|| hinge_sum / n_nontie as f64),
        tie_class_mean: (n_tie > 0).then(|| tie_sum / n_tie as f64),
        n_nontie,
        n_tie,
    })
}
