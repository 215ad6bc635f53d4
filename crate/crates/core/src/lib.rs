//! Tie-aware pairwise comparison ranking.
//!
//! A feature-based scorer trained with a classification, margin ranking and
//! tie loss, classical paired-comparison baselines, evaluation metrics,
//! simulation and survey pair scheduling.

pub mod baselines;
pub mod dataio;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scheduler;
pub mod scores;
pub mod simulator;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use scores::{ScoreLookup, ScoreTable};
pub use types::{make_dataset, split, swap_augment, Comparison, Dataset, Item, ItemSet, Outcome, SplitSpec};
