use alloc::format;

use crate::error::{Error, Result};

/// Shape hyperparameters of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TUNetConfig {
    /// Input side `S`; must be divisible by `2^levels`.
    pub side: usize,
    pub classes: usize,
    /// Encoder depth `L`.
    pub levels: usize,
    /// Width `W0` of the first encoder level; level `l` has `W0 * 2^l` channels.
    pub base_width: usize,
    pub dropout: f64,
}

impl Default for TUNetConfig {
    fn default() -> Self {
        TUNetConfig {
            side: 64,
            classes: 4,
            levels: 4,
            base_width: 16,
            dropout: 0.25,
        }
    }
}

impl TUNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::usage(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.base_width < 4 {
            return Err(Error::usage(format!("base width must be >= 4, got {}", self.base_width)));
        }
        if self.classes < 1 {
            return Err(Error::usage("need at least one class"));
        }
        if self.levels >= usize::BITS as usize || self.side == 0 || self.side % (1usize << self.levels) != 0 {
            return Err(Error::usage(format!(
                "side {} is not divisible by 2^{}",
                self.side, self.levels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::usage(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn bottleneck_side(&self) -> usize {
        self.side >> self.levels
    }

    /// Spatial side of the appearance features (one stride-2 conv past the bottleneck).
    pub fn feature_side(&self) -> usize {
        stride2_side(self.bottleneck_side())
    }

    /// Stride-2 convolutions needed to bring the segmentation maps down to [`Self::feature_side`].
    pub fn structural_downsamples(&self) -> usize {
        let target = self.feature_side();
        let mut size = self.side;
        let mut steps = 0;
        while size > target {
            size = stride2_side(size);
            steps += 1;
        }
        steps
    }
}

/// Output side of a 3x3 conv with padding 1 and stride 2.
pub(crate) fn stride2_side(size: usize) -> usize {
    (size + 2 - 3) / 2 + 1
}
