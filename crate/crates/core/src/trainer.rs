//! Mini-batch training with dev-set early stopping, margin sweeps and
//! real/synthetic dataset mixing.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::{init_params, Dims, Hyperparams, ModelParams, Network, PairInput};
use crate::types::{Comparison, Dataset, Item, ItemSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    /// When false, tie comparisons are removed before training.
    pub use_ties: bool,
    pub use_classification_head: bool,
    /// Randomly swap the sides of each batch entry with probability 1/2.
    pub swap_augmentation: bool,
    /// Epochs without dev-accuracy improvement before stopping.
    pub patience: usize,
    /// Width of the hidden layers.
    pub width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            use_ties: true,
            use_classification_head: true,
            swap_augmentation: true,
            patience: 3,
            width: 64,
        }
    }
}

impl TrainConfig {
    /// Settings for training sets of a few hundred comparisons, where the
    /// default batch of 128 would allow only a handful of steps per epoch.
    pub fn small_data() -> Self {
        Self {
            hyper: Hyperparams {
                batch_size: 32,
                max_epochs: 50,
                ..Hyperparams::default()
            },
            patience: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if self.width == 0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss averaged over the epoch's comparisons.
    pub loss_total: f64,
    pub loss_classification: f64,
    pub loss_ranking: f64,
    pub loss_tie: f64,
    pub dev_accuracy2: Option<f64>,
    pub dev_accuracy3: Option<f64>,
    /// Learning rate in force after the epoch's last step.
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record([
            "epoch",
            "loss_total",
            "loss_classification",
            "loss_ranking",
            "loss_tie",
            "dev_accuracy2",
            "dev_accuracy3",
            "learning_rate",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.loss_total.to_string(),
                e.loss_classification.to_string(),
                e.loss_ranking.to_string(),
                e.loss_tie.to_string(),
                opt(e.dev_accuracy2),
                opt(e.dev_accuracy3),
                e.learning_rate.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Rank-head scores of every item referenced by `comparisons`.
fn score_compared(
    network: &Network,
    items: &ItemSet,
    comparisons: &[Comparison],
) -> Result<HashMap<String, f64>> {
    let mut scores = HashMap::new();
    for c in comparisons {
        for id in [&c.left_id, &c.right_id] {
            if !scores.contains_key(id) {
                scores.insert(id.clone(), network.rank_score(items.features(id)?)?);
            }
        }
    }
    Ok(scores)
}

/// Trains a fresh model and returns the parameters of the epoch with the best
/// dev 2-class accuracy (earliest on ties). Without decided dev comparisons
/// there is nothing to select on, and the last epoch is returned.
pub fn train(
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    let comparisons: Vec<&Comparison> = train_set
        .comparisons()
        .iter()
        .filter(|c| config.use_ties || !c.outcome.is_tie())
        .collect();
    if comparisons.is_empty() {
        return Err(Error::InsufficientData(if config.use_ties {
            "empty training set".into()
        } else {
            "no non-tie comparisons to train on".into()
        }));
    }
    let items = train_set.items();
    let dims = Dims::with_width(items.dim(), config.width);
    let mut params = init_params(&dims, config.hyper)?;
    let weights = config.hyper.loss_weights(config.use_classification_head);

    let inputs: Vec<(&[f64], &[f64], _)> = comparisons
        .iter()
        .map(|c| Ok((items.features(&c.left_id)?, items.features(&c.right_id)?, c.outcome)))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.hyper.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    let dev_items = dev_set.items();

    for epoch in 1..=config.hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for chunk in order.chunks(config.hyper.batch_size) {
            let batch: Vec<PairInput<'_>> = chunk
                .iter()
                .map(|&k| {
                    let (left, right, outcome) = inputs[k];
                    if config.swap_augmentation && rng.random_bool(0.5) {
                        PairInput { left: right, right: left, outcome: outcome.flipped() }
                    } else {
                        PairInput { left, right, outcome }
                    }
                })
                .collect();
            let (loss, grads) = params.network.loss_and_gradient(&batch, &weights)?;
            let m = batch.len() as f64;
            sums[0] += loss.total * m;
            sums[1] += loss.classification * m;
            sums[2] += loss.ranking * m;
            sums[3] += loss.tie * m;
            crate::model::adam_step(&mut params, &grads)?;
        }
        if params.network.params().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
        }
        let n = inputs.len() as f64;

        let (dev_accuracy2, dev_accuracy3) = if dev_set.is_empty() {
            (None, None)
        } else {
            let scores = score_compared(&params.network, dev_items, dev_set.comparisons())?;
            let report = metrics::evaluate(&scores, dev_set.comparisons(), config.hyper.gamma)?;
            (report.accuracy2, Some(report.accuracy3))
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss_total: sums[0] / n,
            loss_classification: sums[1] / n,
            loss_ranking: sums[2] / n,
            loss_tie: sums[3] / n,
            dev_accuracy2,
            dev_accuracy3,
            learning_rate: params.effective_learning_rate(),
        });

        match dev_accuracy2 {
            Some(acc) if best.as_ref().is_none_or(|(b, _)| acc > *b) => {
                best = Some((acc, params.clone()));
                history.best_epoch = epoch;
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            None => history.best_epoch = epoch,
        }
    }
    let params = match best {
        Some((_, p)) if history.epochs.iter().any(|e| e.dev_accuracy2.is_some()) => p,
        _ => params,
    };
    Ok((params, history))
}

/// One row of a margin sweep, evaluated on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub accuracy2: Option<f64>,
    pub accuracy3: f64,
    pub tie_recall: Option<f64>,
    pub mean_misclassified_loss: Option<f64>,
    pub n_misclassified: usize,
    pub best_epoch: usize,
}

impl SweepRow {
    fn from_report(report: &EvalReport, best_epoch: usize) -> Self {
        Self {
            gamma: report.gamma,
            accuracy2: report.accuracy2,
            accuracy3: report.accuracy3,
            tie_recall: report.tie_recall(),
            mean_misclassified_loss: report.mean_misclassified_loss,
            n_misclassified: report.n_misclassified,
            best_epoch,
        }
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = File::create(path)?;
    writeln!(
        out,
        "gamma,accuracy2,accuracy3,tie_recall,mean_misclassified_loss,n_misclassified,best_epoch"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.gamma,
            opt(r.accuracy2),
            r.accuracy3,
            opt(r.tie_recall),
            opt(r.mean_misclassified_loss),
            r.n_misclassified,
            r.best_epoch
        )?;
    }
    Ok(())
}

/// Trains one model per margin (in parallel) and evaluates each on `test`
/// at its own margin.
pub fn sweep_gamma(
    train_set: &Dataset,
    dev_set: &Dataset,
    test_set: &Dataset,
    gammas: &[f64],
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::InvalidConfig("no gamma values to sweep".into()));
    }
    if gammas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("gamma values must be ascending".into()));
    }
    if test_set.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    gammas
        .par_iter()
        .map(|&gamma| {
            let mut cfg = *config;
            cfg.hyper.gamma = gamma;
            let (params, history) = train(train_set, dev_set, &cfg)?;
            let scores = score_compared(&params.network, test_set.items(), test_set.comparisons())?;
            let report = metrics::evaluate(&scores, test_set.comparisons(), gamma)?;
            Ok(SweepRow::from_report(&report, history.best_epoch))
        })
        .collect()
}

/// Real comparisons plus a seeded sample of `round(ratio * |real|)` synthetic
/// ones, drawn without replacement. Item ids are prefixed with `real:` and
/// `syn:`.
pub fn mix_datasets(real: &Dataset, synthetic: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::InvalidConfig(format!("mixing ratio must be > 0, got {ratio}")));
    }
    if real.items().dim() != synthetic.items().dim() {
        return Err(Error::DimensionMismatch {
            expected: real.items().dim(),
            found: synthetic.items().dim(),
        });
    }
    let wanted = (ratio * real.len() as f64).round() as usize;
    if wanted > synthetic.len() {
        return Err(Error::InsufficientData(format!(
            "ratio {ratio} needs {wanted} synthetic comparisons, only {} available",
            synthetic.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, synthetic.len(), wanted).into_vec();
    picked.sort_unstable();

    let relabel = |prefix: &str, items: &ItemSet| -> Vec<Item> {
        items
            .iter()
            .map(|item| Item {
                id: format!("{prefix}{}", item.id),
                ..item.clone()
            })
            .collect()
    };
    let rename = |prefix: &str, c: &Comparison| Comparison {
        left_id: format!("{prefix}{}", c.left_id),
        right_id: format!("{prefix}{}", c.right_id),
        ..c.clone()
    };
    let mut items = relabel("real:", real.items());
    items.extend(relabel("syn:", synthetic.items()));
    let mut comparisons: Vec<Comparison> =
        real.comparisons().iter().map(|c| rename("real:", c)).collect();
    comparisons.extend(picked.iter().map(|&k| rename("syn:", &synthetic.comparisons()[k])));
    Dataset::from_item_set(Arc::new(ItemSet::new(items)?), comparisons)
}
