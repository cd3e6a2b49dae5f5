//! Multi-scale test-time augmentation.
//!
//! At scale `s` the patch grid is cut into `s x s` tiles. Each tile is
//! resampled back to the full grid size, run through the head, and its
//! probabilities are resampled onto the tile's footprint in the output.
//! The per-scale maps are then averaged.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{softmax_channels, FeatureMap, Grid, ProbMap};
use crate::mlp::MlpHead;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSet(Vec<usize>);

impl ScaleSet {
    pub fn new(scales: Vec<usize>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidConfig("scale set is empty".into()));
        }
        if scales.contains(&0) {
            return Err(Error::InvalidConfig("scales must be at least 1".into()));
        }
        let mut sorted = scales.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!("duplicate scale in {scales:?}")));
        }
        Ok(Self(scales))
    }

    pub fn single() -> Self {
        Self(vec![1])
    }

    pub fn semantic_default() -> Self {
        Self(vec![1, 2, 3])
    }

    pub fn boundary_default() -> Self {
        Self(vec![3, 4, 5])
    }

    pub fn scales(&self) -> &[usize] {
        &self.0
    }
}

impl FromStr for ScaleSet {
    type Err = Error;

    /// Parses a comma-separated list such as `1,2,3`.
    fn from_str(s: &str) -> Result<Self> {
        let scales = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad scale {t:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(scales)
    }
}

impl std::fmt::Display for ScaleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Half-open span `[start, start + len)` of tile `t` out of `s` along an axis
/// of `dim` cells. The remainder goes to the last tile.
pub fn tile_span(dim: usize, s: usize, t: usize) -> (usize, usize) {
    let base = dim / s;
    let len = if t + 1 == s { dim - base * (s - 1) } else { base };
    (t * base, len)
}

/// One tile of a split patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    /// Tile features resampled to the full grid size.
    pub features: FeatureMap,
}

/// Splits the patch grid into `s x s` tiles in raster order.
pub fn tile_split(feats: &FeatureMap, s: usize) -> Result<Vec<Tile>> {
    let (hp, wp) = (feats.height_patches(), feats.width_patches());
    if s == 0 || s > hp || s > wp {
        return Err(Error::InvalidConfig(format!("scale {s} does not fit a {hp}x{wp} patch grid")));
    }
    let mut tiles = Vec::with_capacity(s * s);
    for ti in 0..s {
        let (row0, rows) = tile_span(hp, s, ti);
        for tj in 0..s {
            let (col0, cols) = tile_span(wp, s, tj);
            let features = feats.crop(row0, col0, rows, cols)?.resized(hp, wp)?;
            tiles.push(Tile {
                row0,
                col0,
                rows,
                cols,
                features,
            });
        }
    }
    Ok(tiles)
}

/// Head probabilities resampled to `(full_h, full_w)`.
pub fn predict(head: &MlpHead, feats: &FeatureMap, full_h: usize, full_w: usize) -> Result<ProbMap> {
    softmax_channels(&head.forward(feats)?).resized(full_h, full_w)
}

/// Probabilities at one scale, assembled from per-tile predictions.
pub fn predict_scale(head: &MlpHead, feats: &FeatureMap, s: usize, full_h: usize, full_w: usize) -> Result<ProbMap> {
    if full_h == 0 || full_w == 0 {
        return Err(Error::InvalidConfig(format!("cannot predict at {full_h}x{full_w}")));
    }
    if s == 1 {
        return predict(head, feats, full_h, full_w);
    }
    let (hp, wp) = (feats.height_patches(), feats.width_patches());
    let n = head.output_dim();
    let mut out = Grid::filled(full_h, full_w, n, 0.0f32);
    for tile in tile_split(feats, s)? {
        let (y0, y1) = (tile.row0 * full_h / hp, (tile.row0 + tile.rows) * full_h / hp);
        let (x0, x1) = (tile.col0 * full_w / wp, (tile.col0 + tile.cols) * full_w / wp);
        if y1 == y0 || x1 == x0 {
            continue;
        }
        let probs = predict(head, &tile.features, y1 - y0, x1 - x0)?;
        let row_len = (x1 - x0) * n;
        for (r, src) in probs.data().chunks_exact(row_len).enumerate() {
            let start = ((y0 + r) * full_w + x0) * n;
            out.data_mut()[start..start + row_len].copy_from_slice(src);
        }
    }
    Ok(ProbMap::from_grid_unchecked(out))
}

/// Per-pixel, per-class mean of probability maps of equal shape. Each mean is
/// taken over the sorted values in 64-bit, so list order does not matter.
pub fn scale_fuse(maps: &[ProbMap]) -> Result<ProbMap> {
    let first = maps.first().ok_or(Error::EmptyInput("scale maps"))?;
    if let Some(m) = maps.iter().find(|m| m.shape() != first.shape()) {
        return Err(Error::ShapeMismatch(format!(
            "probability maps {:?} and {:?}",
            first.shape(),
            m.shape()
        )));
    }
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let inv = 1.0 / maps.len() as f64;
    let mut buf = Vec::with_capacity(maps.len());
    let data = (0..first.data().len())
        .map(|i| {
            buf.clear();
            buf.extend(maps.iter().map(|m| m.data()[i]));
            buf.sort_unstable_by(f32::total_cmp);
            (buf.iter().map(|&v| v as f64).sum::<f64>() * inv) as f32
        })
        .collect();
    let (h, w, c) = first.shape();
    Ok(ProbMap::from_grid_unchecked(Grid::new(h, w, c, data)?))
}

/// Mean of the per-scale predictions at `(full_h, full_w)`.
pub fn predict_multiscale(
    head: &MlpHead,
    feats: &FeatureMap,
    scales: &ScaleSet,
    full_h: usize,
    full_w: usize,
) -> Result<ProbMap> {
    let maps = scales
        .scales()
        .iter()
        .map(|&s| predict_scale(head, feats, s, full_h, full_w))
        .collect::<Result<Vec<_>>>()?;
    scale_fuse(&maps)
}
