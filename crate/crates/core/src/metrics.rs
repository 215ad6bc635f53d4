//! Evaluation metrics over scored comparisons.
//!
//! Every metric takes a [`ScoreLookup`]: a trained model is evaluated through
//! its [`ScoreTable`](crate::scores::ScoreTable) of ranking-head scores.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses;
use crate::scores::ScoreLookup;
use crate::types::{Comparison, Outcome};

/// Side with the higher score; `None` on exact equality.
pub fn predict_2class(f_left: f64, f_right: f64) -> Option<Outcome> {
    if f_left > f_right {
        Some(Outcome::Left)
    } else if f_right > f_left {
        Some(Outcome::Right)
    } else {
        None
    }
}

/// Margin rule: a side wins only if it leads by strictly more than `gamma`.
pub fn predict_3class(f_left: f64, f_right: f64, gamma: f64) -> Outcome {
    if f_left > f_right + gamma {
        Outcome::Left
    } else if f_right > f_left + gamma {
        Outcome::Right
    } else {
        Outcome::Tie
    }
}

fn pair_scores(scores: &impl ScoreLookup, c: &Comparison) -> Result<(f64, f64)> {
    Ok((scores.require(&c.left_id)?, scores.require(&c.right_id)?))
}

/// Share of non-tie comparisons whose winner has the higher score. Equal
/// scores count as wrong; tie comparisons are ignored.
pub fn accuracy_2class(scores: &impl ScoreLookup, comparisons: &[Comparison]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for c in comparisons.iter().filter(|c| !c.outcome.is_tie()) {
        let (fl, fr) = pair_scores(scores, c)?;
        total += 1;
        if predict_2class(fl, fr) == Some(c.outcome) {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::InsufficientData(
            "2-class accuracy needs at least one non-tie comparison".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Share of all comparisons classified correctly by the margin rule.
pub fn accuracy_3class(
    scores: &impl ScoreLookup,
    comparisons: &[Comparison],
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    if comparisons.is_empty() {
        return Err(Error::InsufficientData("no comparisons to evaluate".into()));
    }
    let mut correct = 0usize;
    for c in comparisons {
        let (fl, fr) = pair_scores(scores, c)?;
        if predict_3class(fl, fr, gamma) == c.outcome {
            correct += 1;
        }
    }
    Ok(correct as f64 / comparisons.len() as f64)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("gamma must be >= 0, got {gamma}")))
    }
}

/// Mean training-style loss over the comparisons the margin rule gets wrong.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisclassifiedLoss {
    /// `None` when nothing is misclassified.
    pub mean: Option<f64>,
    pub count: usize,
}

/// Hinge loss for misclassified decided comparisons, tie contraction loss for
/// misclassified ties, both at `gamma`, averaged over the misclassified set.
pub fn misclassified_loss(
    scores: &impl ScoreLookup,
    comparisons: &[Comparison],
    gamma: f64,
) -> Result<MisclassifiedLoss> {
    check_gamma(gamma)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in comparisons {
        let (fl, fr) = pair_scores(scores, c)?;
        if predict_3class(fl, fr, gamma) != c.outcome {
            sum += losses::ranking_term(fl, fr, c.outcome, gamma);
            count += 1;
        }
    }
    Ok(MisclassifiedLoss {
        mean: (count > 0).then(|| sum / count as f64),
        count,
    })
}

/// Histograms of signed score differences `f_left - f_right`, by true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiffHistogram {
    pub bin_width: f64,
    /// Indexed by class (left, tie, right); maps bin index `k` (covering
    /// `[k * bin_width, (k + 1) * bin_width)`) to its count.
    pub bins: [BTreeMap<i64, usize>; 3],
    /// Mean `|f_left - f_right|` per class, `None` for empty classes.
    pub mean_abs_diff: [Option<f64>; 3],
    pub counts: [usize; 3],
}

impl RankDiffHistogram {
    pub fn bin_left(&self, bin: i64) -> f64 {
        bin as f64 * self.bin_width
    }

    /// Rows `(class, bin_left, count)` in class then bin order.
    pub fn rows(&self) -> Vec<(Outcome, f64, usize)> {
        Outcome::ALL
            .iter()
            .flat_map(|&o| {
                self.bins[o.class_index()]
                    .iter()
                    .map(move |(&bin, &count)| (o, self.bin_left(bin), count))
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["class", "bin_left", "count"])?;
        for (class, left, count) in self.rows() {
            writer.write_record([class.to_string(), left.to_string(), count.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn rank_diff_histogram(
    scores: &impl ScoreLookup,
    comparisons: &[Comparison],
    bin_width: f64,
) -> Result<RankDiffHistogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "bin width must be > 0, got {bin_width}"
        )));
    }
    let mut bins: [BTreeMap<i64, usize>; 3] = Default::default();
    let mut abs_sum = [0.0; 3];
    let mut counts = [0usize; 3];
    for c in comparisons {
        let (fl, fr) = pair_scores(scores, c)?;
        let diff = fl - fr;
        let k = c.outcome.class_index();
        *bins[k].entry((diff / bin_width).floor() as i64).or_default() += 1;
        abs_sum[k] += diff.abs();
        counts[k] += 1;
    }
    let mean_abs_diff =
        std::array::from_fn(|k| (counts[k] > 0).then(|| abs_sum[k] / counts[k] as f64));
    Ok(RankDiffHistogram {
        bin_width,
        bins,
        mean_abs_diff,
        counts,
    })
}

/// All evaluation metrics at one margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Over non-tie comparisons; `None` when there are none.
    pub accuracy2: Option<f64>,
    /// Over all comparisons.
    pub accuracy3: f64,
    pub gamma: f64,
    pub mean_misclassified_loss: Option<f64>,
    pub n_misclassified: usize,
    /// `class_confusion[truth][predicted]` with classes (left, tie, right).
    pub class_confusion: [[usize; 3]; 3],
    /// Number of comparisons per true class.
    pub n_evaluated: [usize; 3],
}

impl EvalReport {
    /// Recall of the tie class under the margin rule; `None` without ties.
    pub fn tie_recall(&self) -> Option<f64> {
        let ties = self.n_evaluated[1];
        (ties > 0).then(|| self.class_confusion[1][1] as f64 / ties as f64)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

pub fn evaluate(
    scores: &impl ScoreLookup,
    comparisons: &[Comparison],
    gamma: f64,
) -> Result<EvalReport> {
    check_gamma(gamma)?;
    if comparisons.is_empty() {
        return Err(Error::InsufficientData("no comparisons to evaluate".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    let (mut decided, mut decided_correct) = (0usize, 0usize);
    for c in comparisons {
        let (fl, fr) = pair_scores(scores, c)?;
        let predicted = predict_3class(fl, fr, gamma);
        confusion[c.outcome.class_index()][predicted.class_index()] += 1;
        if !c.outcome.is_tie() {
            decided += 1;
            if predict_2class(fl, fr) == Some(c.outcome) {
                decided_correct += 1;
            }
        }
    }
    let correct3: usize = (0..3).map(|k| confusion[k][k]).sum();
    let misclassified = misclassified_loss(scores, comparisons, gamma)?;
    Ok(EvalReport {
        accuracy2: (decided > 0).then(|| decided_correct as f64 / decided as f64),
        accuracy3: correct3 as f64 / comparisons.len() as f64,
        gamma,
        mean_misclassified_loss: misclassified.mean,
        n_misclassified: misclassified.count,
        class_confusion: confusion,
        n_evaluated: confusion.map(|row| row.iter().sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::swap_augment;
    use chrono::{DateTime, Utc};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn ts() -> DateTime<Utc> {
        DateTime::from_timestamp(0, 0).unwrap()
    }

    fn cmp(l: &str, r: &str, y: i64) -> Comparison {
        Comparison::new(l, r, Outcome::try_from(y).unwrap(), ts())
    }

    fn table(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn two_class_examples() {
        let s = table(&[("a", 3.0), ("b", 2.0), ("c", 1.0), ("d", 0.0)]);
        let perfect = [cmp("a", "b", -1), cmp("d", "c", 1)];
        assert_eq!(accuracy_2class(&s, &perfect).unwrap(), 1.0);

        // 4 decided (3 right) + 2 ties that must be ignored.
        let mixed = [
            cmp("a", "b", -1),
            cmp("b", "c", -1),
            cmp("c", "d", 1),
            cmp("d", "a", 1),
            cmp("a", "d", 0),
            cmp("b", "c", 0),
        ];
        assert_eq!(accuracy_2class(&s, &mixed).unwrap(), 0.75);

        let flat = table(&[("a", 1.0), ("b", 1.0)]);
        assert_eq!(accuracy_2class(&flat, &[cmp("a", "b", -1), cmp("b", "a", 1)]).unwrap(), 0.0);
        assert!(accuracy_2class(&flat, &[cmp("a", "b", 0)]).is_err());
        assert!(matches!(
            accuracy_2class(&flat, &[cmp("a", "zz", 1)]),
            Err(Error::UnknownItem(_))
        ));
    }

    #[test]
    fn three_class_examples() {
        let flat = table(&[("a", 0.5), ("b", 0.5), ("c", 0.5)]);
        let ties = [cmp("a", "b", 0), cmp("b", "c", 0)];
        assert_eq!(accuracy_3class(&flat, &ties, 0.1).unwrap(), 1.0);

        // gamma = 0 and distinct scores: tie class unreachable.
        let s = table(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        let set = [cmp("a", "b", -1), cmp("b", "c", 1), cmp("a", "c", 0)];
        assert_eq!(accuracy_3class(&s, &set, 0.0).unwrap(), 1.0 / 3.0);

        // Five comparisons, gamma 0.5, scores a=2, b=1.6, c=1, d=0:
        //  a-b  diff 0.4 -> tie,   truth tie    ok
        //  a-c  diff 1.0 -> left,  truth left   ok
        //  c-d  diff 1.0 -> left,  truth right  wrong
        //  b-c  diff 0.6 -> left,  truth tie    wrong
        //  d-b  diff -1.6 -> right, truth right ok
        let s = table(&[("a", 2.0), ("b", 1.6), ("c", 1.0), ("d", 0.0)]);
        let set = [cmp("a", "b", 0), cmp("a", "c", -1), cmp("c", "d", 1), cmp("b", "c", 0), cmp("d", "b", 1)];
        assert_eq!(accuracy_3class(&s, &set, 0.5).unwrap(), 0.6);
        assert!(accuracy_3class(&s, &[], 0.5).is_err());
    }

    #[test]
    fn margin_boundary_is_a_tie() {
        assert_eq!(predict_3class(1.5, 1.0, 0.5), Outcome::Tie);
        assert_eq!(predict_3class(1.0, 1.5, 0.5), Outcome::Tie);
        assert_eq!(predict_3class(1.5000001, 1.0, 0.5), Outcome::Left);
        assert_eq!(predict_3class(1.0, 1.0, 0.0), Outcome::Tie);
    }

    #[test]
    fn misclassified_loss_examples() {
        let s = table(&[("a", 0.2), ("b", 0.8)]);
        let one = misclassified_loss(&s, &[cmp("a", "b", -1)], 0.1).unwrap();
        assert_eq!(one.count, 1);
        assert!((one.mean.unwrap() - 0.7).abs() < 1e-12);
        let none = misclassified_loss(&s, &[cmp("a", "b", 1)], 0.1).unwrap();
        assert_eq!(none, MisclassifiedLoss { mean: None, count: 0 });
        // A misclassified tie contributes its contraction loss.
        let tie = misclassified_loss(&s, &[cmp("a", "b", 0)], 0.1).unwrap();
        assert!((tie.mean.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_examples() {
        let flat = table(&[("a", 1.0), ("b", 1.0)]);
        let h = rank_diff_histogram(&flat, &[cmp("a", "b", -1), cmp("a", "b", 0), cmp("b", "a", 1)], 0.25).unwrap();
        for k in 0..3 {
            assert_eq!(h.bins[k], BTreeMap::from([(0, 1)]));
            assert_eq!(h.mean_abs_diff[k], Some(0.0));
        }

        // Six comparisons, bin width 0.5, scores a=1, b=0.75, c=0, d=-0.5.
        // left:  a-c 1.0 -> bin 2; b-d 1.25 -> bin 2; c-a -1.0 -> bin -2
        // tie:   a-b 0.25 -> bin 0; b-a -0.25 -> bin -1
        // right: d-c -0.5 -> bin -1
        let s = table(&[("a", 1.0), ("b", 0.75), ("c", 0.0), ("d", -0.5)]);
        let set = [
            cmp("a", "c", -1),
            cmp("b", "d", -1),
            cmp("c", "a", -1),
            cmp("a", "b", 0),
            cmp("b", "a", 0),
            cmp("d", "c", 1),
        ];
        let h = rank_diff_histogram(&s, &set, 0.5).unwrap();
        assert_eq!(h.bins[0], BTreeMap::from([(-2, 1), (2, 2)]));
        assert_eq!(h.bins[1], BTreeMap::from([(-1, 1), (0, 1)]));
        assert_eq!(h.bins[2], BTreeMap::from([(-1, 1)]));
        assert_eq!(h.counts, [3, 2, 1]);
        assert_eq!(h.mean_abs_diff, [Some(3.25 / 3.0), Some(0.25), Some(0.5)]);
        assert_eq!(h.rows()[0], (Outcome::Left, -1.0, 1));
        assert!(rank_diff_histogram(&s, &set, 0.0).is_err());
    }

    #[test]
    fn report_is_consistent_with_confusion() {
        let s = table(&[("a", 2.0), ("b", 1.6), ("c", 1.0), ("d", 0.0)]);
        let set = [cmp("a", "b", 0), cmp("a", "c", -1), cmp("c", "d", 1), cmp("b", "c", 0), cmp("d", "b", 1)];
        let r = evaluate(&s, &set, 0.5).unwrap();
        assert_eq!(r.accuracy3, 0.6);
        assert_eq!(r.n_evaluated, [1, 2, 2]);
        assert_eq!(r.class_confusion[2], [1, 0, 1]);
        assert_eq!(r.accuracy2, Some(accuracy_2class(&s, &set).unwrap()));
        assert_eq!(r.tie_recall(), Some(0.5));
        assert_eq!(r.n_misclassified, 2);
    }

    proptest! {
        #[test]
        fn metrics_survive_side_swaps(
            raw in prop::collection::vec((0usize..6, 0usize..6, -1i64..=1), 1..40),
            scores in prop::collection::vec(-2.0f64..2.0, 6),
            gamma in 0.0f64..1.0,
        ) {
            let s: HashMap<String, f64> =
                scores.iter().enumerate().map(|(k, v)| (format!("i{k}"), *v)).collect();
            let set: Vec<Comparison> = raw.iter()
                .filter(|(l, r, _)| l != r)
                .map(|(l, r, y)| cmp(&format!("i{l}"), &format!("i{r}"), *y))
                .collect();
            prop_assume!(!set.is_empty());
            let swapped: Vec<Comparison> = set.iter().map(swap_augment).collect();
            let a = evaluate(&s, &set, gamma).unwrap();
            let b = evaluate(&s, &swapped, gamma).unwrap();
            prop_assert_eq!(a.accuracy2, b.accuracy2);
            prop_assert_eq!(a.accuracy3, b.accuracy3);
            prop_assert_eq!(a.n_misclassified, b.n_misclassified);
            match (a.mean_misclassified_loss, b.mean_misclassified_loss) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
            prop_assert!((0.0..=1.0).contains(&a.accuracy3));
            let total: usize = a.class_confusion.iter().flatten().sum();
            prop_assert_eq!(total, set.len());
            let h = rank_diff_histogram(&s, &set, 0.3).unwrap();
            let hs = rank_diff_histogram(&s, &swapped, 0.3).unwrap();
            prop_assert_eq!(h.counts, [hs.counts[2], hs.counts[1], hs.counts[0]]);
            for k in 0..3 {
                prop_assert_eq!(h.bins[k].values().sum::<usize>(), h.counts[k]);
            }
        }

        #[test]
        fn zero_margin_matches_two_class(
            raw in prop::collection::vec((0usize..6, 0usize..6, any::<bool>()), 1..40),
            perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            // Distinct scores, no true ties: the two accuracies coincide.
            let s: HashMap<String, f64> =
                perm.iter().enumerate().map(|(k, v)| (format!("i{k}"), *v as f64)).collect();
            let set: Vec<Comparison> = raw.iter()
                .filter(|(l, r, _)| l != r)
                .map(|(l, r, left)| cmp(&format!("i{l}"), &format!("i{r}"), if *left { -1 } else { 1 }))
                .collect();
            prop_assume!(!set.is_empty());
            prop_assert_eq!(accuracy_2class(&s, &set).unwrap(), accuracy_3class(&s, &set, 0.0).unwrap());
        }
    }
}
