//! Ranking metrics and pseudo-label precision.

use crate::error::{Error, Result};
use crate::losses::{ConfidentSet, LabelVector};
use crate::numcore::Matrix;

/// Per-sample, per-class scores with binary ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Matrix,
    truth: Vec<bool>,
}

impl ScoreTable {
    pub fn new(scores: Matrix, truth: Vec<bool>) -> Result<Self> {
        if truth.len() != scores.rows() * scores.cols() {
            return Err(Error::shape(
                "ScoreTable",
                format!("{} truth entries for {:?} scores", truth.len(), scores.shape()),
            ));
        }
        Ok(Self { scores, truth })
    }

    pub fn n_samples(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.cols()
    }

    pub fn class_scores(&self, c: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|i| self.scores[(i, c)]).collect()
    }

    pub fn class_truth(&self, c: usize) -> Vec<bool> {
        (0..self.n_samples())
            .map(|i| self.truth[i * self.n_classes() + c])
            .collect()
    }
}

/// Average of precision@rank over the positives, ranking by descending score
/// with ties broken by ascending sample index. `None` when there are no
/// positives.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), truth.len());
    let total = truth.iter().filter(|&&t| t).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

impl MapReport {
    pub fn skipped(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.is_none())
            .map(|(c, _)| c)
    }

    /// CSV report: `class,ap` rows (empty AP for skipped classes) then `mAP`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, names: &[String]) -> Result<()> {
        writeln!(w, "class,ap")?;
        for (c, ap) in self.per_class.iter().enumerate() {
            let name = names.get(c).map_or_else(|| c.to_string(), Clone::clone);
            match ap {
                Some(v) => writeln!(w, "{name},{v:.6}")?,
                None => writeln!(w, "{name},")?,
            }
        }
        writeln!(w, "mAP,{:.6}", self.map)?;
        Ok(())
    }
}

/// Unweighted mean of per-class AP over classes that have a positive.
pub fn mean_ap(table: &ScoreTable) -> Result<MapReport> {
    let per_class: Vec<Option<f64>> = (0..table.n_classes())
        .map(|c| average_precision(&table.class_scores(c), &table.class_truth(c)))
        .collect();
    let kept: Vec<f64> = per_class.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Evaluation("no class has a positive sample".into()));
    }
    let map = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(MapReport { per_class, map })
}

/// Fraction of selected (sample, class) pairs that are true positives;
/// `None` when nothing was selected.
pub fn pseudo_precision<'a>(
    selections: impl IntoIterator<Item = (&'a ConfidentSet, &'a LabelVector)>,
) -> Option<f64> {
    let mut selected = 0usize;
    let mut correct = 0usize;
    for (set, truth) in selections {
        for &c in set.indices() {
            selected += 1;
            if truth.is_positive(c) {
                correct += 1;
            }
        }
    }
    (selected > 0).then(|| correct as f64 / selected as f64)
}

/// Running counterpart of [`pseudo_precision`] for use inside a training loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrecisionCounter {
    pub selected: usize,
    pub correct: usize,
}

impl PrecisionCounter {
    pub fn record(&mut self, set: &ConfidentSet, truth: &LabelVector) {
        for &c in set.indices() {
            self.selected += 1;
            if truth.is_positive(c) {
                self.correct += 1;
            }
        }
    }

    pub fn precision(&self) -> Option<f64> {
        (self.selected > 0).then(|| self.correct as f64 / self.selected as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.1, 0.8], &[true, false, true]), Some(1.0));
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.3], &[true]), Some(1.0));
        assert_eq!(average_precision(&[0.3, 0.2], &[false, false]), None);
        // tie: lower index ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
    }

    #[test]
    fn map_examples() {
        let scores = Matrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let t = ScoreTable::new(scores, vec![true, false, false, true]).unwrap();
        assert_eq!(mean_ap(&t).unwrap().map, 1.0);

        // class 0 perfect; class 1 positive ranked second of two
        let scores = Matrix::from_rows(&[vec![0.9, 0.9], vec![0.1, 0.1]]).unwrap();
        let t = ScoreTable::new(scores, vec![true, false, false, true]).unwrap();
        assert_eq!(mean_ap(&t).unwrap().map, 0.75);

        let scores = Matrix::from_rows(&[vec![0.9, 0.9]]).unwrap();
        let t = ScoreTable::new(scores, vec![false, true]).unwrap();
        let r = mean_ap(&t).unwrap();
        assert_eq!(r.skipped().collect::<Vec<_>>(), vec![0]);
        assert_eq!(r.map, 1.0);

        let t = ScoreTable::new(Matrix::zeros(1, 2), vec![false, false]).unwrap();
        assert!(matches!(mean_ap(&t), Err(Error::Evaluation(_))));
    }

    #[test]
    fn precision_examples() {
        let truth = LabelVector::new(vec![1, 0, 1]).unwrap();
        let all = ConfidentSet::new(vec![0, 2]);
        assert_eq!(pseudo_precision([(&all, &truth)]), Some(1.0));
        let mixed = ConfidentSet::new(vec![0, 1, 2]);
        let p = pseudo_precision([(&mixed, &truth)]).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        let empty = ConfidentSet::default();
        assert_eq!(pseudo_precision([(&empty, &truth)]), None);

        let mut counter = PrecisionCounter::default();
        counter.record(&mixed, &truth);
        assert_eq!(counter.precision(), pseudo_precision([(&mixed, &truth)]));
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_transform(
            scores in prop::collection::vec(-5.0f64..5.0, 1..30),
            truth in prop::collection::vec(any::<bool>(), 30),
        ) {
            let truth = &truth[..scores.len()];
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(average_precision(&scores, truth), average_precision(&mapped, truth));
        }
    }
}
