//! Multi-label classification metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `[N, C]` matrix of binary labels or predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    classes: usize,
    bits: Vec<bool>,
}

impl LabelMatrix {
    pub fn new(rows: usize, classes: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * classes {
            return Err(Error::dim(
                "label matrix",
                format!("{rows}x{classes} needs {} entries, got {}", rows * classes, bits.len()),
            ));
        }
        Ok(LabelMatrix { rows, classes, bits })
    }

    pub fn zeros(rows: usize, classes: usize) -> Self {
        LabelMatrix {
            rows,
            classes,
            bits: vec![false; rows * classes],
        }
    }

    /// One row per label set; indices `>= classes` are an error.
    pub fn from_label_sets<'a, I>(sets: I, classes: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut bits = Vec::new();
        let mut rows = 0;
        for set in sets {
            let start = bits.len();
            bits.resize(start + classes, false);
            for &c in set {
                if c >= classes {
                    return Err(Error::usage(format!("label {c} out of range for {classes} classes")));
                }
                bits[start + c] = true;
            }
            rows += 1;
        }
        Ok(LabelMatrix { rows, classes, bits })
    }

    /// Entries `>= 0.5` are positive.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [n, c] => Ok(LabelMatrix {
                rows: n,
                classes: c,
                bits: t.data().iter().map(|&v| v >= T::of(0.5)).collect(),
            }),
            ref s => Err(Error::dim("label matrix", format!("expected [N,C], got {s:?}"))),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.rows, self.classes], |i| if self.bits[i] { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, row: usize, class: usize) -> bool {
        self.bits[row * self.classes + class]
    }

    pub fn set(&mut self, row: usize, class: usize, value: bool) {
        self.bits[row * self.classes + class] = value;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.classes..(row + 1) * self.classes]
    }

    /// Positive class indices of `row`, ascending.
    pub fn row_indices(&self, row: usize) -> Vec<usize> {
        self.row(row)
            .iter()
            .enumerate()
            .filter_map(|(c, &b)| b.then_some(c))
            .collect()
    }

    /// Select rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(rows.len() * self.classes);
        for &r in rows {
            bits.extend_from_slice(self.row(r));
        }
        LabelMatrix {
            rows: rows.len(),
            classes: self.classes,
            bits,
        }
    }

    /// Reorder the class axis: column `j` of the result is column `perm[j]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Self {
        let mut out = LabelMatrix::zeros(self.rows, self.classes);
        for r in 0..self.rows {
            for (j, &c) in perm.iter().enumerate() {
                out.set(r, j, self.get(r, c));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true positives in the ground truth.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f1,
            support: tp + fn_,
            tp,
            fp,
            fn_,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_class: Vec<ClassScores>,
    /// Unweighted means of the per-class precision, recall and F1.
    pub macro_avg: ClassScores,
    /// Scores from counts pooled over all classes.
    pub micro_avg: ClassScores,
}

impl F1Report {
    pub fn macro_f1(&self) -> f64 {
        self.macro_avg.f1
    }

    pub fn micro_f1(&self) -> f64 {
        self.micro_avg.f1
    }
}

/// Per-class precision, recall and F1 plus macro and micro averages.
/// Every `0/0` ratio counts as 0.
pub fn f1_scores(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<F1Report> {
    if (pred.rows, pred.classes) != (truth.rows, truth.classes) {
        return Err(Error::dim(
            "f1_scores",
            format!(
                "pred {}x{} vs truth {}x{}",
                pred.rows, pred.classes, truth.rows, truth.classes
            ),
        ));
    }
    let c = pred.classes;
    let mut counts = vec![(0usize, 0usize, 0usize); c];
    for (i, (&p, &t)) in pred.bits.iter().zip(&truth.bits).enumerate() {
        let e = &mut counts[i % c];
        match (p, t) {
            (true, true) => e.0 += 1,
            (true, false) => e.1 += 1,
            (false, true) => e.2 += 1,
            (false, false) => {}
        }
    }
    let per_class: Vec<ClassScores> = counts
        .iter()
        .map(|&(tp, fp, fn_)| ClassScores::from_counts(tp, fp, fn_))
        .collect();
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let micro_avg = ClassScores::from_counts(tp, fp, fn_);
    let k = c.max(1) as f64;
    let macro_avg = ClassScores {
        precision: per_class.iter().map(|s| s.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|s| s.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|s| s.f1).sum::<f64>() / k,
        support: micro_avg.support,
        tp,
        fp,
        fn_,
    };
    Ok(F1Report {
        per_class,
        macro_avg,
        micro_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, classes: usize, bits: &[u8]) -> LabelMatrix {
        LabelMatrix::new(rows, classes, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let truth = m(3, 2, &[1, 0, 0, 1, 1, 1]);
        assert_eq!(f1_scores(&truth, &truth).unwrap().macro_f1(), 1.0);
        let none = LabelMatrix::zeros(3, 2);
        let r = f1_scores(&none, &truth).unwrap();
        assert_eq!(r.macro_f1(), 0.0);
        assert_eq!(r.per_class[0].precision, 0.0);
    }

    #[test]
    fn hand_built_confusion() {
        // class 0: tp=2 fp=1 fn=0 ; class 1: tp=1 fp=0 fn=2
        let pred = m(4, 2, &[1, 1, 1, 0, 1, 0, 0, 0]);
        let truth = m(4, 2, &[1, 1, 1, 1, 0, 0, 0, 1]);
        let r = f1_scores(&pred, &truth).unwrap();
        let f0 = 2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0);
        let f1 = 2.0 * 1.0 * (1.0 / 3.0) / (1.0 + 1.0 / 3.0);
        assert!((r.per_class[0].f1 - f0).abs() < 1e-15);
        assert!((r.per_class[1].f1 - f1).abs() < 1e-15);
        assert!((r.macro_f1() - (f0 + f1) / 2.0).abs() < 1e-15);
        // pooled tp=3 fp=1 fn=2
        let micro = 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
        assert!((r.micro_f1() - micro).abs() < 1e-15);
        assert_eq!(r.per_class[1].support, 3);
    }

    #[test]
    fn shape_mismatch() {
        assert!(f1_scores(&LabelMatrix::zeros(2, 2), &LabelMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn label_sets_roundtrip() {
        let sets: [&[usize]; 2] = [&[0, 2], &[]];
        let lm = LabelMatrix::from_label_sets(sets, 3).unwrap();
        assert_eq!(lm.row_indices(0), [0, 2]);
        assert!(lm.row_indices(1).is_empty());
        let bad: [&[usize]; 1] = [&[3]];
        assert!(LabelMatrix::from_label_sets(bad, 3).is_err());
    }
}
