//! Head checkpoints.
//!
//! Layout, integers `u32` little-endian:
//!
//! ```text
//! "SPNM" | version = 1 | upsample_factor | layer_count | layer_count + 1 dims
//! | per layer: weights (input-major) then biases, f32 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{element_count, Reader, FORMAT_VERSION};
use crate::mlp::{Dense, MlpHead, LAYER_COUNT};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPNM";

pub fn encode_checkpoint(head: &MlpHead) -> Vec<u8> {
    let dims = head.dims();
    let mut out = Vec::with_capacity(16 + 4 * dims.len() + 4 * head.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.upsample_factor() as u32).to_le_bytes());
    out.extend_from_slice(&(LAYER_COUNT as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for layer in head.layers() {
        for v in layer.weight().iter().chain(layer.bias()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MlpHead> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let upsample = r.u32()?;
    let layers = r.u32()?;
    if layers as usize != LAYER_COUNT {
        return Err(Error::UnsupportedHeader {
            field: "layer_count",
            value: layers,
        });
    }
    let dims: Vec<u32> = (0..=LAYER_COUNT).map(|_| r.u32()).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(LAYER_COUNT);
    for pair in dims.windows(2) {
        let n = element_count(pair)?;
        let weight = r.f32s(n)?;
        let bias = r.f32s(pair[1] as usize)?;
        out.push(Dense::new(pair[0] as usize, pair[1] as usize, weight, bias)?);
    }
    r.finish()?;
    if let Some(layer) = out.iter().find(|l| l.weight().iter().chain(l.bias()).any(|v| !v.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "non-finite parameter in {}x{} layer",
            layer.in_dim(),
            layer.out_dim()
        )));
    }
    MlpHead::from_layers(out, upsample as usize)
}

pub fn write_checkpoint(head: &MlpHead, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(head)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<MlpHead> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
