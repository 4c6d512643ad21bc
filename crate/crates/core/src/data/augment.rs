use alloc::format;
use alloc::vec;

use rand::Rng;

use super::Sample;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::uniform;

/// An element of the dihedral group of the square: an optional horizontal
/// flip followed by `rotations` quarter turns counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct D4Element {
    pub rotations: u8,
    pub flip: bool,
}

impl D4Element {
    pub const IDENTITY: D4Element = D4Element {
        rotations: 0,
        flip: false,
    };

    pub fn all() -> [D4Element; 8] {
        let mut out = [D4Element::IDENTITY; 8];
        for (i, e) in out.iter_mut().enumerate() {
            e.rotations = (i % 4) as u8;
            e.flip = i >= 4;
        }
        out
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        D4Element::all()[rng.random_range(0..8)]
    }

    /// Apply to every `[H,W]` plane of a `[C,S,S]` tensor.
    pub fn apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (c, h, w) = match *t.shape() {
            [c, h, w] => (c, h, w),
            ref s => return Err(Error::dim("d4", format!("expected [C,H,W], got {s:?}"))),
        };
        if h != w {
            return Err(Error::dim("d4", format!("image must be square, got {h}x{w}")));
        }
        let s = h;
        let src = t.data();
        let mut out = vec![0.0f32; src.len()];
        let rot = self.rotations % 4;
        for ch in 0..c {
            let base = ch * s * s;
            for y in 0..s {
                for x in 0..s {
                    // Walk the output pixel back through the rotations, then the flip.
                    let (mut sy, mut sx) = (y, x);
                    for _ in 0..rot {
                        // Inverse of one counter-clockwise quarter turn.
                        let (ny, nx) = (sx, s - 1 - sy);
                        sy = ny;
                        sx = nx;
                    }
                    if self.flip {
                        sx = s - 1 - sx;
                    }
                    out[base + y * s + x] = src[base + sy * s + sx];
                }
            }
        }
        Tensor::new(t.shape(), out)
    }
}

/// Brightness change `x -> clamp(scale * x + shift, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lighting {
    pub scale: f32,
    pub shift: f32,
}

impl Lighting {
    pub const NONE: Lighting = Lighting {
        scale: 1.0,
        shift: 0.0,
    };

    pub fn apply(&self, t: &Tensor<f32>) -> Tensor<f32> {
        t.map(|v| (self.scale * v + self.shift).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub geometric: bool,
    pub lighting: bool,
    pub scale_range: (f64, f64),
    pub shift_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            geometric: true,
            lighting: true,
            scale_range: (0.8, 1.2),
            shift_range: (-0.05, 0.05),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            geometric: false,
            lighting: false,
            ..AugmentConfig::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.geometric || self.lighting
    }
}

/// Random D4 symmetry plus random lighting change. Labels are untouched.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Result<Sample> {
    if sample.height() != sample.width() {
        return Err(Error::dim(
            "augment",
            format!("image must be square, got {}x{}", sample.height(), sample.width()),
        ));
    }
    // Draw all randomness up front so the stream layout is fixed.
    let element = D4Element::random(rng);
    let scale = uniform(rng, cfg.scale_range.0, cfg.scale_range.1) as f32;
    let shift = uniform(rng, cfg.shift_range.0, cfg.shift_range.1) as f32;
    let mut image = sample.image().clone();
    if cfg.geometric {
        image = element.apply(&image)?;
    }
    if cfg.lighting {
        image = Lighting { scale, shift }.apply(&image);
    }
    sample.with_image(image)
}
