//! ROC/AUC, confusion-derived metrics, F1-optimal thresholds and
//! stratified k-fold splitting.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SplitMix64;
use crate::{Error, Result, Scalar};

fn check_pair<T>(scores: &[T], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y).count();
    (pos, labels.len() - pos)
}

fn require_both_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Usage(format!(
            "need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

fn sorted_order<T: Scalar>(scores: &[T]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap_or(Ordering::Equal));
    Ok(order)
}

/// Mann-Whitney AUC with half credit for ties, via one sort and average
/// ranks.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    check_pair(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes(labels)?;
    let order = sorted_order(scores)?;
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct
/// score, sorted by fpr.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_pair(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes(labels)?;
    let mut order = sorted_order(scores)?;
    order.reverse();
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Writes `fpr,tpr` rows under a header.
pub fn write_roc_csv(points: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// `num / den`, or 1.0 when the denominator is zero. The flag reports
/// whether the ratio was defined.
fn ratio_or_one(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (1.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Precision of the positive class; 1.0 when nothing is predicted
    /// positive (see [`ConfusionMatrix::precision_pos_defined`]).
    pub fn precision_pos(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp).0
    }

    pub fn precision_pos_defined(&self) -> bool {
        ratio_or_one(self.tp, self.tp + self.fp).1
    }

    pub fn precision_neg(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fn_).0
    }

    pub fn precision_neg_defined(&self) -> bool {
        ratio_or_one(self.tn, self.tn + self.fn_).1
    }

    pub fn sensitivity_pos(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_).0
    }

    /// Sensitivity of the negative class, i.e. specificity.
    pub fn sensitivity_neg(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp).0
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// F1 of the positive class; 0 when it has no support and no
    /// positive predictions.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }
}

/// Confusion counts with the rule "positive iff score >= threshold".
pub fn confusion_at<T: Scalar>(scores: &[T], labels: &[bool], threshold: T) -> Result<ConfusionMatrix> {
    check_pair(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Candidate thresholds in increasing order: one below the minimum, the
/// midpoints between consecutive distinct scores, one above the maximum.
pub fn threshold_candidates<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    let order = sorted_order(scores)?;
    let mut distinct: Vec<T> = order.iter().map(|&i| scores[i]).collect();
    distinct.dedup();
    let (Some(&lo), Some(&hi)) = (distinct.first(), distinct.last()) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(lo - T::one());
    for w in distinct.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / T::lit(2.0);
        // adjacent floats: a midpoint that rounds down would flip w[0]
        out.push(if mid > w[0] { mid } else { w[1] });
    }
    out.push(hi + T::one());
    Ok(out)
}

/// Smallest candidate threshold maximizing the positive-class F1, with
/// the F1 it attains.
pub fn best_f1_threshold<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<(T, f64)> {
    check_pair(scores, labels)?;
    let (n_pos, _) = require_both_classes(labels)?;
    let candidates = threshold_candidates(scores)?;
    let order = sorted_order(scores)?;

    // Sweep candidates upward; `cut` counts samples below the threshold.
    let (mut tp, mut pred_pos) = (n_pos, scores.len());
    let mut cut = 0;
    let mut best: Option<(usize, usize, usize)> = None; // (candidate, tp, pred_pos)
    for (c, &t) in candidates.iter().enumerate() {
        while cut < order.len() && scores[order[cut]] < t {
            if labels[order[cut]] {
                tp -= 1;
            }
            pred_pos -= 1;
            cut += 1;
        }
        // F1 = 2 tp / (pred_pos + n_pos); compare exactly by cross-multiplying.
        let better = match best {
            None => true,
            Some((_, btp, bpp)) => (tp as u128) * ((bpp + n_pos) as u128) > (btp as u128) * ((pred_pos + n_pos) as u128),
        };
        if better {
            best = Some((c, tp, pred_pos));
        }
    }
    let (c, tp, pred_pos) = best.expect("at least two candidates");
    Ok((candidates[c], 2.0 * tp as f64 / (pred_pos + n_pos) as f64))
}

/// Stratified fold index per sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    /// `(positives, negatives)` per fold.
    pub fn class_counts(&self, labels: &[bool]) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); self.k];
        for (&f, &y) in self.fold_of.iter().zip(labels) {
            if y {
                counts[f].0 += 1;
            } else {
                counts[f].1 += 1;
            }
        }
        counts
    }
}

/// Shuffles each class with the seed and deals it round-robin to folds.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Usage(format!("need k >= 2 folds, got {k}")));
    }
    let (pos, neg) = class_counts(labels);
    if pos < k || neg < k {
        return Err(Error::Usage(format!(
            "each class needs at least {k} samples, got {pos} positives and {neg} negatives"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut fold_of = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        for (j, &i) in idx.iter().enumerate() {
            fold_of[i] = j % k;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi && !yj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_perfect_and_tied() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2], &[false, false, true]).unwrap(), 0.0);
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..200 {
            let n = 2 + (rng.next_f64() * 60.0) as usize;
            let scores: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 8.0).floor() / 8.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.3)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = roc_auc(&scores, &labels).unwrap();
            assert!((fast - pair_count_auc(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_single_class_is_usage_error() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::Usage(_))));
    }

    #[test]
    fn roc_curve_is_sorted_and_anchored() {
        let pts = roc_curve(&[0.1, 0.4, 0.35, 0.8, 0.4], &[false, false, true, true, true]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        // trapezoid area equals the rank statistic
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8, 0.4], &[false, false, true, true, true]).unwrap();
        assert!((area - auc).abs() < 1e-12);
    }

    #[test]
    fn crafted_confusion_counts() {
        // tp=3, fp=1, fn=2, tn=4
        let scores = [0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.3, 0.2, 0.1, 0.4];
        let labels = [true, true, true, false, true, true, false, false, false, false];
        let cm = confusion_at(&scores, &labels, 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 3, fp: 1, tn: 4, fn_: 2 });
        assert_eq!(cm.precision_pos(), 0.75);
        assert_eq!(cm.sensitivity_pos(), 0.6);
        assert_eq!(cm.precision_neg(), 4.0 / 6.0);
        assert_eq!(cm.sensitivity_neg(), 0.8);
        assert_eq!(cm.accuracy(), 0.7);
    }

    #[test]
    fn extreme_thresholds() {
        let scores = [0.1, 0.4, 0.6, 0.9];
        let labels = [false, false, true, true];
        let all_pos = confusion_at(&scores, &labels, f64::NEG_INFINITY).unwrap();
        assert_eq!(all_pos.sensitivity_pos(), 1.0);
        assert_eq!(all_pos.sensitivity_neg(), 0.0);
        let none = confusion_at(&scores, &labels, f64::INFINITY).unwrap();
        assert_eq!(none.precision_pos(), 1.0);
        assert!(!none.precision_pos_defined());
        let perfect = confusion_at(&scores, &labels, 0.5).unwrap();
        assert_eq!(perfect.precision_pos(), 1.0);
        assert_eq!(perfect.sensitivity_pos(), 1.0);
        assert!(perfect.precision_pos_defined());
    }

    #[test]
    fn best_threshold_example() {
        let (t, f1) = best_f1_threshold(&[0.1, 0.4, 0.6, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(t, 0.5);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn best_threshold_is_exhaustive_maximizer() {
        let mut rng = SplitMix64::new(12);
        for _ in 0..200 {
            let n = 2 + (rng.next_f64() * 40.0) as usize;
            let scores: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 10.0).floor() / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let (t, f1) = best_f1_threshold(&scores, &labels).unwrap();
            let cands = threshold_candidates(&scores).unwrap();
            let f1s: Vec<f64> = cands
                .iter()
                .map(|&c| confusion_at(&scores, &labels, c).unwrap().f1())
                .collect();
            let max = f1s.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(f1, confusion_at(&scores, &labels, t).unwrap().f1());
            assert!((f1 - max).abs() < 1e-15);
            let first = cands.iter().zip(&f1s).find(|(_, &f)| f == max).unwrap().0;
            assert_eq!(t, *first);
        }
    }

    #[test]
    fn adjacent_float_midpoint() {
        let lo = 0.5f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let c = threshold_candidates(&[lo, hi]).unwrap();
        assert_eq!(c.len(), 3);
        let cm = confusion_at(&[lo, hi], &[false, true], c[1]).unwrap();
        assert_eq!((cm.tp, cm.tn), (1, 1));
    }

    #[test]
    fn kfold_table_counts() {
        let mut labels = vec![false; 13_794];
        labels.extend(std::iter::repeat_n(true, 2_158));
        let folds = stratified_kfold(&labels, 5, 0).unwrap();
        for (pos, neg) in folds.class_counts(&labels) {
            assert!(pos == 431 || pos == 432);
            assert!(neg == 2758 || neg == 2759);
        }
    }

    #[test]
    fn kfold_partition_and_errors() {
        let labels: Vec<bool> = (0..37).map(|i| i % 3 == 0).collect();
        let folds = stratified_kfold(&labels, 4, 9).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in 0..4 {
            for i in folds.validation_indices(f) {
                seen[i] += 1;
            }
            assert_eq!(
                folds.validation_indices(f).len() + folds.training_indices(f).len(),
                labels.len()
            );
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(matches!(stratified_kfold(&labels, 1, 0), Err(Error::Usage(_))));
        assert!(stratified_kfold(&[true, false, false], 2, 0).is_err());
    }
}
