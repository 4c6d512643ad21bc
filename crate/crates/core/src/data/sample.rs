use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::GREEN;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_CHANNELS: usize = 4;
pub const DEFAULT_GREEN_THRESHOLD: f64 = 0.5;

/// Sorted, duplicate-free set of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new(mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        LabelSet(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        LabelSet::new(iter.into_iter().collect())
    }
}

/// A four-channel image in `[0, 1]` with its label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    image: Tensor<f32>,
    pub labels: LabelSet,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, labels: LabelSet) -> Result<Self> {
        match *image.shape() {
            [IMAGE_CHANNELS, _, _] => {}
            ref s => {
                return Err(Error::dim(
                    "sample",
                    format!("image must be [4,H,W], got {s:?}"),
                ))
            }
        }
        if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::usage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Sample {
            id: id.into(),
            image,
            labels,
        })
    }

    pub fn image(&self) -> &Tensor<f32> {
        &self.image
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        let plane = self.height() * self.width();
        &self.image.data()[ch * plane..(ch + 1) * plane]
    }

    /// Replace the image, keeping id and labels. Value range is re-checked.
    pub fn with_image(&self, image: Tensor<f32>) -> Result<Self> {
        Sample::new(self.id.clone(), image, self.labels.clone())
    }
}

/// Per-class segmentation maps `[C,H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Tensor<f32>,
}

impl MaskSet {
    pub fn new(masks: Tensor<f32>) -> Result<Self> {
        if masks.rank() != 3 {
            return Err(Error::dim(
                "mask set",
                format!("expected [C,H,W], got {:?}", masks.shape()),
            ));
        }
        Ok(MaskSet { masks })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.masks
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.masks
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.masks.shape();
        (s[0], s[1], s[2])
    }

    /// Channel `c` as an `[H,W]` tensor.
    pub fn channel(&self, c: usize) -> Tensor<f32> {
        let (_, h, w) = self.dims();
        let plane = h * w;
        Tensor::new(&[h, w], self.masks.data()[c * plane..(c + 1) * plane].to_vec())
            .expect("channel slice matches plane")
    }

    pub fn is_binary(&self) -> bool {
        self.masks.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn channel_is_empty(&self, c: usize) -> bool {
        let (_, h, w) = self.dims();
        self.masks.data()[c * h * w..(c + 1) * h * w].iter().all(|&v| v == 0.0)
    }
}

/// Ground truth: channel `c` is `green >= threshold` when `c` is labelled,
/// otherwise all zeros.
pub fn make_target_masks(sample: &Sample, classes: usize, green_threshold: f64) -> Result<MaskSet> {
    if !(green_threshold > 0.0 && green_threshold < 1.0) {
        return Err(Error::usage(format!(
            "green threshold {green_threshold} outside (0, 1)"
        )));
    }
    if let Some(m) = sample.labels.largest() {
        if m >= classes {
            return Err(Error::usage(format!("label {m} out of range for {classes} classes")));
        }
    }
    let (h, w) = (sample.height(), sample.width());
    let thr = green_threshold as f32;
    let green: Vec<f32> = sample
        .channel(GREEN)
        .iter()
        .map(|&v| if v >= thr { 1.0 } else { 0.0 })
        .collect();
    let mut data = alloc::vec![0.0f32; classes * h * w];
    for &c in sample.labels.as_slice() {
        data[c * h * w..(c + 1) * h * w].copy_from_slice(&green);
    }
    MaskSet::new(Tensor::new(&[classes, h, w], data)?)
}

/// Ordered list of sample ids with shared class count and image side.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub ids: Vec<String>,
    pub classes: usize,
    pub side: usize,
    pub labels: Vec<LabelSet>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.labels.len() {
            return Err(Error::usage(format!(
                "{} ids but {} label sets",
                self.ids.len(),
                self.labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (id, labels) in self.ids.iter().zip(&self.labels) {
            if !seen.insert(id.as_str()) {
                return Err(Error::usage(format!("duplicate sample id {id}")));
            }
            if let Some(m) = labels.largest() {
                if m >= self.classes {
                    return Err(Error::usage(format!(
                        "sample {id} has label {m} but only {} classes",
                        self.classes
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Samples held in memory, all `side x side` with labels below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub side: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(classes: usize, side: usize, samples: Vec<Sample>) -> Result<Self> {
        let ds = Dataset {
            classes,
            side,
            samples,
        };
        for s in &ds.samples {
            if s.height() != side || s.width() != side {
                return Err(Error::dim(
                    "dataset",
                    format!("sample {} is {}x{}, expected {side}x{side}", s.id, s.height(), s.width()),
                ));
            }
        }
        ds.manifest().validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            ids: self.samples.iter().map(|s| s.id.clone()).collect(),
            classes: self.classes,
            side: self.side,
            labels: self.samples.iter().map(|s| s.labels.clone()).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes,
            side: self.side,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}
