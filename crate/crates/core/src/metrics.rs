//! Confusion-matrix based segmentation metrics.
//!
//! Undefined ratios (`0/0`) are reported as NaN. A class whose F1 is NaN
//! makes the mean F1 NaN as well; mIoU skips classes with an empty union and
//! average accuracy skips classes with no true pixels.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[i * k + j]` = pixels of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    /// Row-major `k x k` counts.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if k == 0 || counts.len() != k * k {
            return Err(Error::shape(format!("{} counts cannot form a {k}x{k} matrix", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn from_labels(k: usize, truth: &[u8], pred: &[u8]) -> Result<Self> {
        let mut cm = Self::new(k);
        cm.accumulate(truth, pred)?;
        Ok(cm)
    }

    pub fn accumulate(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::shape("truth and prediction lengths differ"));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t >= self.k || p >= self.k {
                return Err(Error::invalid(format!("label outside [0, {})", self.k)));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    /// Matrices add entrywise; merging is associative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape("class count mismatch"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Pixels predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, c)).sum()
    }

    /// Pixels whose true class is `c`.
    pub fn actual(&self, c: usize) -> u64 {
        (0..self.k).map(|j| self.get(c, j)).sum()
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.predicted(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.actual(c))
    }
}

/// Harmonic mean of precision and recall; NaN when either is undefined or both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision.is_nan() || recall.is_nan() || precision + recall == 0.0 {
        f64::NAN
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k).map(|c| f1_from(cm.precision(c), cm.recall(c))).collect()
}

/// NaN if any class F1 is NaN.
pub fn mean_f1(cm: &ConfusionMatrix) -> f64 {
    let f1 = f1_per_class(cm);
    f1.iter().sum::<f64>() / f1.len() as f64
}

/// `TP / (TP + FP + FN)`; NaN for an empty union.
pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k)
        .map(|c| {
            let tp = cm.true_positives(c);
            ratio(tp, cm.predicted(c) + cm.actual(c) - tp)
        })
        .collect()
}

pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let defined: Vec<f64> = iou_per_class(cm).into_iter().filter(|v| !v.is_nan()).collect();
    if defined.is_empty() {
        return Err(Error::invalid("every class has an empty union"));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Mean of per-class recalls over classes that have at least one true pixel.
pub fn average_accuracy(cm: &ConfusionMatrix) -> f64 {
    let recalls: Vec<f64> = (0..cm.k).map(|c| cm.recall(c)).filter(|v| !v.is_nan()).collect();
    if recalls.is_empty() {
        return f64::NAN;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Precision and recall of the positive class 1 of a 2x2 matrix.
pub fn precision_recall_binary(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    if cm.k != 2 {
        return Err(Error::invalid("binary precision/recall needs a 2x2 matrix"));
    }
    Ok((cm.precision(1), cm.recall(1)))
}

/// Fraction of pixels per class over all masks.
pub fn class_proportions<'a>(masks: impl IntoIterator<Item = &'a [u8]>, k: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; k];
    for mask in masks {
        for &l in mask {
            let l = l as usize;
            if l >= k {
                return Err(Error::invalid(format!("label {l} outside [0, {k})")));
            }
            counts[l] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("no labelled pixels"));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub iou: Vec<f64>,
    pub miou: f64,
    pub aa: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

pub fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix, class_names: &[String]) -> Result<Self> {
        if class_names.len() != cm.k {
            return Err(Error::invalid(format!(
                "{} class names for {} classes",
                class_names.len(),
                cm.k
            )));
        }
        Ok(MetricsReport {
            class_names: class_names.to_vec(),
            f1: f1_per_class(&cm),
            mean_f1: mean_f1(&cm),
            iou: iou_per_class(&cm),
            miou: miou(&cm).unwrap_or(f64::NAN),
            aa: average_accuracy(&cm),
            precision: (0..cm.k).map(|c| cm.precision(c)).collect(),
            recall: (0..cm.k).map(|c| cm.recall(c)).collect(),
            confusion: cm,
        })
    }

    /// One row per class, then a summary row `summary,MeanF1,mIoU,mean precision,mean recall,AA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,f1,iou,precision,recall,aa\n");
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},",
                fmt_metric(self.f1[c]),
                fmt_metric(self.iou[c]),
                fmt_metric(self.precision[c]),
                fmt_metric(self.recall[c])
            );
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let _ = writeln!(
            s,
            "summary,{},{},{},{},{}",
            fmt_metric(self.mean_f1),
            fmt_metric(self.miou),
            fmt_metric(mean(&self.precision)),
            fmt_metric(mean(&self.recall)),
            fmt_metric(self.aa)
        );
        s
    }

    /// Per-class F1 followed by MeanF1, mIoU, AA.
    pub fn table_row(&self) -> Vec<f64> {
        let mut row = self.f1.clone();
        row.extend([self.mean_f1, self.miou, self.aa]);
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_matrix() {
        // truth 0: 2 right, 2 predicted as 1; truth 1: 4 right
        let cm = ConfusionMatrix::from_counts(2, vec![2, 2, 0, 4]).unwrap();
        let iou = iou_per_class(&cm);
        assert_eq!(iou[0], 0.5);
        assert_eq!(iou[1], 4.0 / 6.0);
        assert!((miou(&cm).unwrap() - 0.5833333).abs() < 1e-6);
        assert_eq!(average_accuracy(&cm), 0.75);
        // class 1: precision 4/6, recall 1
        assert_eq!(f1_per_class(&cm)[1], 2.0 * (4.0 / 6.0) / (4.0 / 6.0 + 1.0));
    }

    #[test]
    fn f1_closed_forms() {
        assert_eq!(f1_from(1.0, 1.0), 1.0);
        assert!((f1_from(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(f1_from(f64::NAN, 0.0).is_nan());
        assert!(f1_from(0.0, 0.0).is_nan());
    }

    #[test]
    fn never_predicted_class_is_nan() {
        let cm = ConfusionMatrix::from_labels(3, &[0, 1, 2, 2], &[0, 1, 1, 0]).unwrap();
        let f1 = f1_per_class(&cm);
        assert!(f1[2].is_nan());
        assert!(mean_f1(&cm).is_nan());
    }

    #[test]
    fn binary_precision_recall() {
        // TP=3, FP=1, FN=2, TN=4
        let cm = ConfusionMatrix::from_counts(2, vec![4, 1, 2, 3]).unwrap();
        assert_eq!(precision_recall_binary(&cm).unwrap(), (0.75, 0.6));
        let none = ConfusionMatrix::from_counts(2, vec![5, 0, 3, 0]).unwrap();
        let (p, r) = precision_recall_binary(&none).unwrap();
        assert!(p.is_nan());
        assert_eq!(r, 0.0);
        let perfect = ConfusionMatrix::from_counts(2, vec![5, 0, 0, 3]).unwrap();
        assert_eq!(precision_recall_binary(&perfect).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn miou_errors_when_all_empty() {
        assert!(miou(&ConfusionMatrix::new(3)).is_err());
        let disjoint = ConfusionMatrix::from_counts(2, vec![0, 3, 5, 0]).unwrap();
        assert_eq!(iou_per_class(&disjoint), vec![0.0, 0.0]);
    }

    #[test]
    fn proportions() {
        let single = vec![2u8; 10];
        assert_eq!(class_proportions([single.as_slice()], 3).unwrap(), vec![0.0, 0.0, 1.0]);
        let mut mask = vec![0u8; 4096];
        mask[..64].fill(3);
        let p = class_proportions([mask.as_slice()], 4).unwrap();
        assert_eq!(p[3], 0.015625);
        assert!(class_proportions(std::iter::empty::<&[u8]>(), 2).is_err());
    }

    #[test]
    fn csv_has_k_plus_one_rows() {
        let cm = ConfusionMatrix::from_labels(3, &[0, 1, 2], &[0, 1, 1]).unwrap();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = MetricsReport::from_confusion(cm, &names).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert!(csv.lines().nth(3).unwrap().starts_with("c,NaN"));
        assert!(csv.lines().last().unwrap().starts_with("summary,NaN"));
    }
}
