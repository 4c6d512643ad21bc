//! Turning network outputs into decisions: mask binarization, removal of
//! small mask components, and per-class classifier thresholds.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::data::MaskSet;
use crate::error::{Error, Result};
use crate::metrics::LabelMatrix;
use crate::scalar::Scalar;

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// `mask = probs >= tau`, elementwise over a `[C,H,W]` soft map.
pub fn binarize<T: Scalar>(seg_probs: &Tensor<T>, tau: f64) -> Result<MaskSet> {
    if seg_probs.rank() != 3 {
        return Err(Error::dim(
            "binarize",
            format!("expected [C,H,W], got {:?}", seg_probs.shape()),
        ));
    }
    let tau = T::of(tau);
    let t = Tensor::<f32>::from_fn(seg_probs.shape(), |i| {
        if seg_probs.data()[i] >= tau {
            1.0
        } else {
            0.0
        }
    });
    MaskSet::new(t)
}

/// Minimum component area at side `S`: 4 pixels at `S = 64`, scaled by `(S/64)^2`.
pub fn default_min_area(side: usize) -> usize {
    let scaled = 4.0 * (side as f64 / 64.0) * (side as f64 / 64.0);
    (num_traits::Float::round(scaled) as usize).max(1)
}

/// Remove every 4-connected component of ones with fewer than `min_area` pixels.
pub fn denoise(mask: &Tensor<f32>, min_area: usize) -> Result<Tensor<f32>> {
    let (h, w) = match *mask.shape() {
        [h, w] => (h, w),
        ref s => return Err(Error::dim("denoise", format!("expected [H,W], got {s:?}"))),
    };
    if min_area == 0 {
        return Err(Error::usage("min_area must be at least 1"));
    }
    let on: Vec<bool> = mask.data().iter().map(|&v| v >= 0.5).collect();
    let mut out = vec![0.0f32; h * w];
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        component.clear();
        while let Some(p) = stack.pop() {
            component.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if on[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if component.len() >= min_area {
            for &p in &component {
                out[p] = 1.0;
            }
        }
    }
    Tensor::new(&[h, w], out)
}

/// [`denoise`] applied to every channel of a mask set.
pub fn denoise_masks(masks: &MaskSet, min_area: usize) -> Result<MaskSet> {
    let (c, h, w) = masks.dims();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        data.extend_from_slice(denoise(&masks.channel(ch), min_area)?.data());
    }
    MaskSet::new(Tensor::new(&[c, h, w], data)?)
}

/// One decision threshold per class, each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::usage(format!("threshold {bad} outside (0, 1)")));
        }
        Ok(ThresholdVector(values))
    }

    pub fn uniform(classes: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `{0.05, 0.10, ..., 0.95}`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Squared error `sum_i (1[p_i >= t] - y_i)^2`, i.e. the misclassification count.
pub fn threshold_error<T: Scalar>(probs: &Tensor<T>, labels: &LabelMatrix, class: usize, t: f64) -> usize {
    let c = labels.classes();
    let t = T::of(t);
    (0..labels.rows())
        .filter(|&i| (probs.data()[i * c + class] >= t) != labels.get(i, class))
        .count()
}

/// Per class, the grid value with the least squared error on the fitting set;
/// ties go to the smallest grid value.
pub fn fit_thresholds<T: Scalar>(
    probs: &Tensor<T>,
    labels: &LabelMatrix,
    grid: &[f64],
) -> Result<ThresholdVector> {
    check_probs("fit_thresholds", probs, labels)?;
    if labels.rows() == 0 {
        return Err(Error::usage("fit_thresholds needs at least one sample"));
    }
    if grid.is_empty() {
        return Err(Error::usage("threshold grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::usage("threshold grid must be strictly ascending"));
    }
    let thresholds = (0..labels.classes())
        .map(|class| {
            let mut best = grid[0];
            let mut best_err = usize::MAX;
            for &t in grid {
                let err = threshold_error(probs, labels, class, t);
                if err < best_err {
                    best_err = err;
                    best = t;
                }
            }
            best
        })
        .collect();
    ThresholdVector::new(thresholds)
}

/// `pred[i][c] = probs[i][c] >= t_c`. With `force_argmax`, a row with no
/// positive gets its highest-probability class (first on ties).
pub fn predict_labels<T: Scalar>(
    probs: &Tensor<T>,
    thresholds: &ThresholdVector,
    force_argmax: bool,
) -> Result<LabelMatrix> {
    let (n, c) = match *probs.shape() {
        [n, c] => (n, c),
        ref s => return Err(Error::dim("predict_labels", format!("expected [N,C], got {s:?}"))),
    };
    if thresholds.len() != c {
        return Err(Error::dim(
            "predict_labels",
            format!("{} thresholds for {c} classes", thresholds.len()),
        ));
    }
    let mut out = LabelMatrix::zeros(n, c);
    for i in 0..n {
        let row = &probs.data()[i * c..(i + 1) * c];
        let mut any = false;
        for (k, (&p, &t)) in row.iter().zip(thresholds.as_slice()).enumerate() {
            if p >= T::of(t) {
                out.set(i, k, true);
                any = true;
            }
        }
        if force_argmax && !any {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            out.set(i, best, true);
        }
    }
    Ok(out)
}

fn check_probs<T: Scalar>(op: &str, probs: &Tensor<T>, labels: &LabelMatrix) -> Result<()> {
    if probs.shape() != [labels.rows(), labels.classes()] {
        return Err(Error::dim(
            op,
            format!(
                "probs {:?} vs labels [{}, {}]",
                probs.shape(),
                labels.rows(),
                labels.classes()
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(n: usize, c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[n, c], v.to_vec()).unwrap()
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        let p = Tensor::<f64>::new(&[1, 1, 3], vec![0.6, 0.5, 0.4999]).unwrap();
        let m = binarize(&p, 0.5).unwrap();
        assert_eq!(m.tensor().data(), &[1.0, 1.0, 0.0]);
        let c = Tensor::<f64>::full(&[2, 3, 3], 0.6);
        assert!(binarize(&c, 0.5).unwrap().tensor().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn denoise_cases() {
        let mut m = Tensor::<f32>::zeros(&[5, 5]);
        m.data_mut()[12] = 1.0;
        assert!(denoise(&m, 4).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(denoise(&m, 1).unwrap(), m);

        let mut block = Tensor::<f32>::zeros(&[5, 5]);
        for p in [6, 7, 11, 12] {
            block.data_mut()[p] = 1.0;
        }
        assert_eq!(denoise(&block, 4).unwrap(), block);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let mut m = Tensor::<f32>::zeros(&[3, 3]);
        m.data_mut()[0] = 1.0;
        m.data_mut()[4] = 1.0;
        assert!(denoise(&m, 2).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_area_scaling() {
        assert_eq!(default_min_area(64), 4);
        assert_eq!(default_min_area(128), 16);
        assert_eq!(default_min_area(32), 1);
    }

    #[test]
    fn grid_is_exact() {
        let g = default_grid();
        assert_eq!(g.len(), 19);
        assert_eq!(g[9], 0.5);
        assert_eq!(g[0], 0.05);
    }

    #[test]
    fn fit_separable_class_picks_smallest_zero_error() {
        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let p = probs(4, 1, &[0.95, 0.9, 0.1, 0.05]);
        let y = LabelMatrix::new(4, 1, vec![true, true, false, false]).unwrap();
        assert_eq!(fit_thresholds(&p, &y, &grid).unwrap().as_slice(), &[0.2]);

        let p = probs(3, 1, &[0.4, 0.2, 0.35]);
        let y = LabelMatrix::zeros(3, 1);
        assert_eq!(fit_thresholds(&p, &y, &grid).unwrap().as_slice(), &[0.5]);

        let p = probs(1, 1, &[0.5]);
        let y = LabelMatrix::new(1, 1, vec![true]).unwrap();
        assert_eq!(fit_thresholds(&p, &y, &grid).unwrap().as_slice(), &[0.1]);
    }

    #[test]
    fn fit_rejects_bad_grid() {
        let p = probs(1, 1, &[0.5]);
        let y = LabelMatrix::zeros(1, 1);
        assert!(fit_thresholds(&p, &y, &[]).is_err());
        assert!(fit_thresholds(&p, &y, &[0.5, 0.4]).is_err());
    }

    #[test]
    fn predict_with_and_without_argmax() {
        let t = ThresholdVector::uniform(2, 0.5).unwrap();
        let p = probs(1, 2, &[0.6, 0.4]);
        assert_eq!(predict_labels(&p, &t, false).unwrap().row_indices(0), [0]);

        let low = probs(2, 3, &[0.1, 0.3, 0.2, 0.05, 0.01, 0.02]);
        let plain = predict_labels(&low, &ThresholdVector::uniform(3, 0.5).unwrap(), false).unwrap();
        assert!(plain.row_indices(0).is_empty());
        let forced = predict_labels(&low, &ThresholdVector::uniform(3, 0.5).unwrap(), true).unwrap();
        assert_eq!(forced.row_indices(0), [1]);
        assert_eq!(forced.row_indices(1), [0]);
    }

    #[test]
    fn threshold_vector_range() {
        assert!(ThresholdVector::new(vec![0.0]).is_err());
        assert!(ThresholdVector::new(vec![1.0]).is_err());
        assert!(ThresholdVector::new(vec![0.3, 0.7]).is_ok());
    }
}
