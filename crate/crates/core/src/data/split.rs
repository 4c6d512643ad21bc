use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Seeded random partition of `0..n`; the validation part has
/// `floor(n * val_fraction)` members. Both parts are returned ascending.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::usage(alloc::format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    // The small slack keeps e.g. 0.29 * 100 from flooring to 28.
    let n_val = ((n as f64) * val_fraction + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0x73_706c_6974));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val })
}

/// [`split_indices`] over manifest ids.
pub fn split(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let s = split_indices(manifest.len(), val_fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| manifest.ids[i].clone()).collect();
    Ok((pick(&s.train), pick(&s.val)))
}
