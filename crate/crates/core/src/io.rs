//! Binary tensor (`.spnt`) and label (`.spnl`) files, plus catalog and loss
//! trace text files.
//!
//! Tensor layout, all integers `u32` little-endian:
//!
//! ```text
//! "SPNT" | version = 1 | dtype = 1 (f32) | ndim = 3 | h | w | c | h*w*c f32 LE
//! ```
//!
//! Label layout:
//!
//! ```text
//! "SPNL" | version = 1 | h | w | h*w u32 LE panoptic entries
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::grid::{FeatureMap, Grid, PanopticMap, DEFAULT_PATCH_SIZE};

pub const TENSOR_MAGIC: [u8; 4] = *b"SPNT";
pub const LABEL_MAGIC: [u8; 4] = *b"SPNL";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

/// Little-endian cursor over an in-memory file.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn version(&mut self) -> Result<u32> {
        let found = self.u32()?;
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found,
            });
        }
        Ok(found)
    }

    /// Reads `count` 4-byte words, failing with `Truncated` before allocating
    /// when the file is too short.
    pub fn words(&mut self, count: usize) -> Result<&'a [u8]> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::DimensionOverflow { dims: vec![count as u64] })?;
        self.take(bytes)
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        Ok(self
            .words(count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        Ok(self
            .words(count)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(Error::TrailingBytes(n as u64)),
        }
    }
}

/// Element count of `dims`, or `DimensionOverflow` if it (or its byte size)
/// cannot be addressed.
pub(crate) fn element_count(dims: &[u32]) -> Result<usize> {
    let overflow = || Error::DimensionOverflow {
        dims: dims.iter().map(|&d| d as u64).collect(),
    };
    let mut n: u64 = 1;
    for &d in dims {
        n = n.checked_mul(d as u64).ok_or_else(overflow)?;
    }
    let bytes = n.checked_mul(4).ok_or_else(overflow)?;
    if bytes > isize::MAX as u64 {
        return Err(overflow());
    }
    usize::try_from(n).map_err(|_| overflow())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn dim_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::ShapeMismatch(format!("{what} {value} exceeds u32")))
}

pub fn encode_grid(grid: &Grid<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(28 + grid.data().len() * 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    for v in [
        FORMAT_VERSION,
        DTYPE_F32,
        3,
        dim_u32(grid.height(), "height")?,
        dim_u32(grid.width(), "width")?,
        dim_u32(grid.channels(), "channels")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    r.version()?;
    let dtype = r.u32()?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedHeader { field: "dtype", value: dtype });
    }
    let ndim = r.u32()?;
    if ndim != 3 {
        return Err(Error::UnsupportedHeader { field: "ndim", value: ndim });
    }
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let n = element_count(&dims)?;
    let data = r.f32s(n)?;
    r.finish()?;
    Grid::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
}

/// Writes any float grid in the tensor format.
pub fn write_grid(grid: &Grid<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_grid(grid)?)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid<f32>> {
    decode_grid(&read_file(path.as_ref())?)
}

pub fn write_tensor(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_grid(map.grid(), path)
}

/// Reads a feature file assuming the default patch size.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_tensor_with_patch(path, DEFAULT_PATCH_SIZE)
}

pub fn read_tensor_with_patch(path: impl AsRef<Path>, patch_size: usize) -> Result<FeatureMap> {
    FeatureMap::new(read_grid(path)?, patch_size)
}

pub fn encode_labels(map: &PanopticMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + map.data().len() * 4);
    out.extend_from_slice(&LABEL_MAGIC);
    for v in [
        FORMAT_VERSION,
        dim_u32(map.height(), "height")?,
        dim_u32(map.width(), "width")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<PanopticMap> {
    let mut r = Reader::new(bytes);
    r.magic(LABEL_MAGIC)?;
    r.version()?;
    let dims = [r.u32()?, r.u32()?];
    let n = element_count(&dims)?;
    let data = r.u32s(n)?;
    r.finish()?;
    PanopticMap::new(dims[0] as usize, dims[1] as usize, data)
}

pub fn write_labels(map: &PanopticMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_labels(map)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<PanopticMap> {
    decode_labels(&read_file(path.as_ref())?)
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<ClassCatalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassCatalog::parse(&text)
}

pub fn write_catalog(catalog: &ClassCatalog, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), catalog.to_text().as_bytes())
}

/// Loss trace as `step,loss` CSV.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in trace.iter().enumerate() {
        let _ = writeln!(out, "{step},{loss}");
    }
    out
}

pub fn write_loss_trace(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), loss_trace_csv(trace).as_bytes())
}

pub fn write_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), text.as_bytes())
}
