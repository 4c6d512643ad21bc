//! Parameter checkpoints: `"TUNC"`, u32 version, u32 entry count, then per
//! entry a u16 name length, the UTF-8 name, a u8 rank, `rank` u32 dims and the
//! f32 data, all little-endian. The run configuration is stored next to the
//! checkpoint as `<file>.cfg`.

use std::fs;
use std::path::{Path, PathBuf};

use tunet_core::model::ModelParams;
use tunet_core::Tensor;

use super::bytes::Reader;
use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"TUNC";
pub const VERSION: u32 = 1;

pub fn encode_params(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| CliError::data(format!("parameter name {name:?} is too long")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| CliError::data(format!("parameter {name} has rank {}", t.rank())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8], what: &str) -> Result<ModelParams<f32>> {
    let mut r = Reader::new(bytes, what);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::data(format!("{what}: unsupported checkpoint version {version}")));
    }
    let entries = r.u32()?;
    let mut params = ModelParams::new();
    for _ in 0..entries {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CliError::data(format!("{what}: parameter name is not UTF-8")))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CliError::data(format!("{what}: shape of {name} overflows")))?;
        let data = r.f32s(n)?;
        params
            .insert(name, Tensor::new(&shape, data)?)
            .map_err(|e| CliError::data(format!("{what}: {e}")))?;
    }
    r.finish()?;
    Ok(params)
}

/// `best.tunc` -> `best.tunc.cfg`.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Write the parameters and the sidecar configuration.
pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, config: &RunConfig) -> Result<()> {
    fs::write(path, encode_params(params)?).at(path)?;
    let cfg = config_path(path);
    fs::write(&cfg, config.to_text()).at(&cfg)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, RunConfig)> {
    let bytes = fs::read(path).at(path)?;
    let params = decode_params(&bytes, &path.display().to_string())?;
    let cfg = config_path(path);
    let text = fs::read_to_string(&cfg).at(&cfg)?;
    let mut config = RunConfig::default();
    config.merge_text(&text, &cfg.display().to_string())?;
    Ok((params, config))
}
