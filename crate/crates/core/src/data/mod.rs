//! Samples, ground-truth masks, synthetic data, augmentation, splitting and
//! label statistics.

mod augment;
mod sample;
mod split;
mod stats;
mod synth;

pub use augment::{augment, AugmentConfig, D4Element, Lighting};
pub use sample::{
    make_target_masks, Dataset, DatasetManifest, LabelSet, MaskSet, Sample, DEFAULT_GREEN_THRESHOLD, IMAGE_CHANNELS,
};
pub use split::{split, split_indices, Split};
pub use stats::{label_stats, LabelStats};
pub use synth::{class_weights, synth_dataset, SynthConfig, LABEL_COUNT_PROBS};

/// Channel order of every image: microtubules, protein of interest, nucleus, ER.
pub const RED: usize = 0;
pub const GREEN: usize = 1;
pub const BLUE: usize = 2;
pub const YELLOW: usize = 3;
