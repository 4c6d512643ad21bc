use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Label frequency, labels-per-image histogram and pairwise co-occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStats {
    /// `frequency[c]`: samples containing class `c`.
    pub frequency: Vec<usize>,
    /// `histogram[k]`: samples with exactly `k` labels, `k = 0..=C`.
    pub histogram: Vec<usize>,
    /// Symmetric `C x C`; the diagonal equals `frequency`.
    pub cooccurrence: Vec<Vec<usize>>,
}

pub fn label_stats<'a, I>(label_sets: I, classes: usize) -> Result<LabelStats>
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let mut frequency = vec![0usize; classes];
    let mut histogram = vec![0usize; classes + 1];
    let mut cooccurrence = vec![vec![0usize; classes]; classes];
    let mut n = 0usize;
    for set in label_sets {
        n += 1;
        if let Some(&bad) = set.iter().find(|&&c| c >= classes) {
            return Err(Error::usage(alloc::format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        histogram[set.len().min(classes)] += 1;
        for (i, &a) in set.iter().enumerate() {
            frequency[a] += 1;
            cooccurrence[a][a] += 1;
            for &b in &set[i + 1..] {
                cooccurrence[a][b] += 1;
                cooccurrence[b][a] += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::usage("label statistics need at least one sample"));
    }
    Ok(LabelStats {
        frequency,
        histogram,
        cooccurrence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair() {
        let sets: [&[usize]; 1] = [&[1, 2]];
        let s = label_stats(sets, 4).unwrap();
        assert_eq!(s.cooccurrence[1][2], 1);
        assert_eq!(s.cooccurrence[2][1], 1);
        assert_eq!(s.histogram[2], 1);
        assert_eq!(s.histogram.iter().sum::<usize>(), 1);
        assert_eq!(s.frequency, [0, 1, 1, 0]);
    }

    #[test]
    fn empty_input_rejected() {
        let sets: [&[usize]; 0] = [];
        assert!(label_stats(sets, 3).is_err());
    }
}
