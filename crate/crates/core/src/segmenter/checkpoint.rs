//! Flat binary checkpoints (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TSEG"
//! 4       4     version (u32) = 1
//! 8       4     input channels F (u32)
//! 12      4     hidden channels H (u32) = 8
//! 16      4     classes C (u32)
//! 20      ...   f32 values, in order:
//!                 conv1.weight [H][3][3][F], conv1.bias [H],
//!                 conv2.weight [H][3][3][H], conv2.bias [H],
//!                 head.weight  [C][1][1][H], head.bias  [C]
//! ```

use std::fs;
use std::path::Path;

use super::{ToySegmenter, HIDDEN};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSEG";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_checkpoint(model: &ToySegmenter) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + model.num_params() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        VERSION,
        model.in_channels() as u32,
        HIDDEN as u32,
        model.num_classes() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in model.tensors() {
        for &v in t.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToySegmenter> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a TSEG checkpoint".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (version, in_ch, hidden, classes) = (word(4), word(8), word(12), word(16));
    if version != VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    if hidden != HIDDEN || in_ch == 0 || classes == 0 {
        return Err(Error::Format(format!(
            "unsupported layer sizes in={in_ch} hidden={hidden} classes={classes}"
        )));
    }
    let mut model = ToySegmenter::zeros(in_ch, classes);
    let n = model.num_params();
    if bytes.len() != HEADER_LEN + n * 4 {
        return Err(Error::Format(format!(
            "checkpoint has {} payload bytes, expected {}",
            bytes.len() - HEADER_LEN,
            n * 4
        )));
    }
    let flat: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite parameter".into()));
    }
    model.set_flat_params(&flat)?;
    Ok(model)
}

pub fn save_checkpoint(model: &ToySegmenter, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToySegmenter> {
    decode_checkpoint(&fs::read(path)?)
}
