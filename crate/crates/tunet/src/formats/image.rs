//! Per-sample image tensors: `"TUNT"`, then little-endian u32 version, channel
//! count, height and width, then planar f32 data in R, G, B, Y order.

use std::fs;
use std::path::Path;

use tunet_core::data::IMAGE_CHANNELS;
use tunet_core::Tensor;

use super::bytes::Reader;
use crate::error::{CliError, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"TUNT";
pub const VERSION: u32 = 1;

pub fn encode_image(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w] = *image.shape() else {
        return Err(CliError::data(format!("image must be [C,H,W], got {:?}", image.shape())));
    };
    let mut out = Vec::with_capacity(20 + 4 * image.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, c as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// `what` names the source in error messages.
pub fn decode_image(bytes: &[u8], what: &str) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes, what);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::data(format!("{what}: unsupported image version {version}")));
    }
    let c = r.u32()? as usize;
    if c != IMAGE_CHANNELS {
        return Err(CliError::data(format!(
            "{what}: image has {c} channels, expected {IMAGE_CHANNELS}"
        )));
    }
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    let data = r.f32s(c * h * w)?;
    r.finish()?;
    Ok(Tensor::new(&[c, h, w], data)?)
}

pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_image(image)?).at(path)
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).at(path)?;
    decode_image(&bytes, &path.display().to_string())
}
