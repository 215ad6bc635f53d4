//! Classical paired-comparison models used as benchmarks.

mod elo;
mod rank_centrality;
mod rao_kupper;
mod skill;

pub use elo::{elo_fit, EloConfig};
pub use rank_centrality::{rank_centrality, RankCentralityFit, RcConfig};
pub use rao_kupper::{
    log_likelihood as rao_kupper_log_likelihood, outcome_probabilities, rao_kupper_fit, RaoKupperFit,
    RkConfig, RkParams,
};
pub use skill::{skill_fit, skill_update, SkillConfig, SkillRating};

pub use crate::scores::{ScoreLookup, ScoreTable};

use crate::error::Result;
use crate::types::{Comparison, Outcome};

/// Comparisons in fitting order: by timestamp, equal timestamps in input order.
pub(crate) fn chronological(comparisons: &[Comparison]) -> Vec<&Comparison> {
    let mut ordered: Vec<&Comparison> = comparisons.iter().collect();
    ordered.sort_by_key(|c| c.created_at);
    ordered
}

/// Margin rule on a score table: a side wins only when it leads by more than
/// `gamma`.
pub fn baseline_predict(
    table: &impl ScoreLookup,
    left_id: &str,
    right_id: &str,
    gamma: f64,
) -> Result<Outcome> {
    let left = table.require(left_id)?;
    let right = table.require(right_id)?;
    Ok(crate::metrics::predict_3class(left, right, gamma))
}
