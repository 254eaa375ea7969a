//! Binary parameter checkpoints.
//!
//! Layout (little endian): 8-byte magic, `u32` format version, `u32` length
//! of the JSON model config that follows, `u64` parameter count, then the
//! parameters as `f32`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use segdec_core::{ModelConfig, SegDecNet};

pub const MAGIC: &[u8; 8] = b"SEGDECck";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &SegDecNet<f32>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config())?;
    let params = model.params();
    let mut out = Vec::with_capacity(24 + config.len() + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SegDecNet<f32>> {
    let mut rest = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            bail!("checkpoint is truncated");
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        bail!("not a segdec checkpoint");
    }
    let version = u32::from_le_bytes(take(4)?.try_into()?);
    if version != VERSION {
        bail!("checkpoint format version {version} is not supported (expected {VERSION})");
    }
    let config_len = u32::from_le_bytes(take(4)?.try_into()?) as usize;
    let config: ModelConfig = serde_json::from_slice(take(config_len)?).context("malformed embedded model config")?;
    let count = u64::from_le_bytes(take(8)?.try_into()?) as usize;
    let raw = take(count.checked_mul(4).context("parameter count overflows")?)?;
    let params = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if !rest.is_empty() {
        bail!("checkpoint has {} trailing bytes", rest.len());
    }
    let mut model = SegDecNet::new(config)?;
    model.load_params(params)?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &SegDecNet<f32>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<SegDecNet<f32>> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    decode_checkpoint(&bytes).with_context(|| format!("cannot load {}", path.display()))
}

/// Loads a checkpoint and checks that its architecture matches `expected`.
/// The init seed and gradient-stop flag are training details and may differ.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<SegDecNet<f32>> {
    let model = load_checkpoint(path)?;
    let got = model.config();
    let arch = |c: &ModelConfig| (c.input_channels, c.input_height, c.input_width, c.widths, c.feature_norm);
    if arch(got) != arch(expected) {
        bail!(
            "checkpoint {} was trained for {}x{}x{} input with widths {:?}, but {}x{}x{} with widths {:?} is required",
            path.display(),
            got.input_channels,
            got.input_height,
            got.input_width,
            got.widths,
            expected.input_channels,
            expected.input_height,
            expected.input_width,
            expected.widths
        );
    }
    Ok(model)
}
