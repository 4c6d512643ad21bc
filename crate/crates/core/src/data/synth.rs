use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Dataset, LabelSet, Sample, BLUE, GREEN, RED, YELLOW};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{mix, standard_normal, stream_rng, uniform};

/// Probability of a sample carrying 1, 2 or 3 labels.
pub const LABEL_COUNT_PROBS: [f64; 3] = [0.55, 0.35, 0.10];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    pub side: usize,
    pub seed: u64,
    /// Class `c` is drawn with weight `(c + 1)^-imbalance`.
    pub imbalance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 100,
            classes: 4,
            side: 32,
            seed: 0,
            imbalance: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::usage("synthetic dataset needs n >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::usage(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.side < 16 {
            return Err(Error::usage(format!("image side must be >= 16, got {}", self.side)));
        }
        if !(self.imbalance >= 0.0) || !self.imbalance.is_finite() {
            return Err(Error::usage(format!("imbalance exponent {} must be >= 0", self.imbalance)));
        }
        Ok(())
    }
}

/// Unnormalised class sampling weights `(c + 1)^-imbalance`.
pub fn class_weights(classes: usize, imbalance: f64) -> Vec<f64> {
    (0..classes).map(|c| libm::pow((c + 1) as f64, -imbalance)).collect()
}

/// How one class marks the green channel.
#[derive(Debug, Clone, Copy)]
struct ClassPattern {
    blobs: usize,
    radius: f64,
    ring: bool,
    /// Preferred blob centre, in pixels.
    prior: (f64, f64),
}

fn class_pattern(class: usize, classes: usize, side: usize) -> ClassPattern {
    let s = side as f64;
    let angle = core::f64::consts::TAU * class as f64 / classes as f64;
    ClassPattern {
        blobs: 1 + class % 3,
        radius: s * (0.045 + 0.03 * (class % 4) as f64),
        ring: class % 2 == 1,
        prior: (s / 2.0 + 0.25 * s * libm::sin(angle), s / 2.0 + 0.25 * s * libm::cos(angle)),
    }
}

fn draw_label_count<R: Rng + ?Sized>(rng: &mut R, classes: usize) -> usize {
    let u: f64 = rng.random();
    let k = if u < LABEL_COUNT_PROBS[0] {
        1
    } else if u < LABEL_COUNT_PROBS[0] + LABEL_COUNT_PROBS[1] {
        2
    } else {
        3
    };
    k.min(classes)
}

/// `k` distinct classes, drawn one at a time with probability proportional
/// to the remaining weights.
fn draw_labels<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], k: usize) -> LabelSet {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&c| weights[c]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut choice = remaining.len() - 1;
        for (i, &c) in remaining.iter().enumerate() {
            if u < weights[c] {
                choice = i;
                break;
            }
            u -= weights[c];
        }
        picked.push(remaining.remove(choice));
    }
    LabelSet::new(picked)
}

fn stamp_disk(plane: &mut [f32], side: usize, cy: f64, cx: f64, radius: f64, ring: bool, value: f32) {
    let inner = if ring { (radius - 1.2).max(0.0) } else { -1.0 };
    let y0 = (cy - radius - 1.0).floor().max(0.0) as usize;
    let x0 = (cx - radius - 1.0).floor().max(0.0) as usize;
    let y1 = ((cy + radius + 1.0).ceil() as usize).min(side - 1);
    let x1 = ((cx + radius + 1.0).ceil() as usize).min(side - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if d <= radius && d >= inner {
                let p = &mut plane[y * side + x];
                *p = p.max(value);
            }
        }
    }
}

fn synth_sample(cfg: &SynthConfig, index: usize, weights: &[f64]) -> Result<Sample> {
    let side = cfg.side;
    let s = side as f64;
    let plane = side * side;
    let mut rng = stream_rng(cfg.seed, mix(&[0x7379_6e74, index as u64]));
    let k = draw_label_count(&mut rng, cfg.classes);
    let labels = draw_labels(&mut rng, weights, k);

    let mut image = vec![0.0f32; 4 * plane];
    // Class-independent backgrounds and landmark structure.
    for ch in [RED, GREEN, BLUE, YELLOW] {
        let hi = if ch == GREEN { 0.2 } else { 0.25 };
        for v in &mut image[ch * plane..(ch + 1) * plane] {
            *v = uniform(&mut rng, 0.0, hi) as f32;
        }
    }
    let cells = rng.random_range(2..=3);
    for _ in 0..cells {
        let cy = uniform(&mut rng, 0.2 * s, 0.8 * s);
        let cx = uniform(&mut rng, 0.2 * s, 0.8 * s);
        let r = uniform(&mut rng, 0.10 * s, 0.16 * s);
        let blue = uniform(&mut rng, 0.5, 0.9) as f32;
        stamp_disk(&mut image[BLUE * plane..(BLUE + 1) * plane], side, cy, cx, r, false, blue);
        let yellow = uniform(&mut rng, 0.4, 0.8) as f32;
        stamp_disk(&mut image[YELLOW * plane..(YELLOW + 1) * plane], side, cy, cx, 1.6 * r, true, yellow);
        let red = uniform(&mut rng, 0.3, 0.7) as f32;
        stamp_disk(&mut image[RED * plane..(RED + 1) * plane], side, cy, cx, 2.0 * r, false, red * 0.6);
    }

    // Protein signal: each labelled class stamps its own pattern.
    let jitter = 0.07 * s;
    for &c in labels.as_slice() {
        let pat = class_pattern(c, cfg.classes, side);
        for _ in 0..pat.blobs {
            let margin = pat.radius + 1.0;
            let cy = (pat.prior.0 + jitter * standard_normal(&mut rng)).clamp(margin, s - 1.0 - margin);
            let cx = (pat.prior.1 + jitter * standard_normal(&mut rng)).clamp(margin, s - 1.0 - margin);
            let value = uniform(&mut rng, 0.75, 1.0) as f32;
            stamp_disk(&mut image[GREEN * plane..(GREEN + 1) * plane], side, cy, cx, pat.radius, pat.ring, value);
        }
    }

    Sample::new(
        format!("s{index:05}"),
        Tensor::new(&[4, side, side], image)?,
        labels,
    )
}

/// Deterministic synthetic dataset. Sample `i` depends only on `(seed, i)`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let weights = class_weights(cfg.classes, cfg.imbalance);
    let samples = (0..cfg.n)
        .map(|i| synth_sample(cfg, i, &weights))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(cfg.classes, cfg.side, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism() {
        let cfg = SynthConfig {
            n: 10,
            seed: 7,
            ..SynthConfig::default()
        };
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg };
        assert_ne!(synth_dataset(&cfg).unwrap(), synth_dataset(&other).unwrap());
    }

    #[test]
    fn label_counts_within_bounds() {
        let ds = synth_dataset(&SynthConfig {
            n: 200,
            classes: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(ds.samples.iter().all(|s| (1..=3).contains(&s.labels.len())));
    }

    #[test]
    fn green_signal_present_for_labels() {
        let ds = synth_dataset(&SynthConfig {
            n: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        for s in &ds.samples {
            let bright = s.channel(GREEN).iter().filter(|&&v| v >= 0.5).count();
            assert!(bright > 0, "{}", s.id);
        }
    }

    #[test]
    fn invalid_parameters() {
        for cfg in [
            SynthConfig { n: 0, ..SynthConfig::default() },
            SynthConfig { classes: 1, ..SynthConfig::default() },
            SynthConfig { side: 8, ..SynthConfig::default() },
        ] {
            assert!(matches!(synth_dataset(&cfg), Err(Error::Usage(_))));
        }
    }
}
