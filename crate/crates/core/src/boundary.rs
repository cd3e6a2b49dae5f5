//! Boundary targets from instance maps, and thresholding of predicted
//! boundary probabilities.

use crate::error::{Error, Result};
use crate::grid::{BoundaryMap, Grid, InstanceMap, ProbMap};
use crate::resample::bilinear_resample;

/// Probability above which a pixel counts as boundary.
pub const BOUNDARY_THRESHOLD: f32 = 0.5;

const NEIGHBORS_8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Marks every pixel with an in-image 8-neighbor of a different instance id.
/// Stuff carries id 0, so stuff/stuff contacts never mark and thing/stuff
/// contacts mark on both sides.
pub fn gt_boundary(instances: &InstanceMap) -> BoundaryMap {
    let (h, w) = (instances.height(), instances.width());
    let ids = instances.data();
    let mut out = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let id = ids[r * w + c];
            let differs = NEIGHBORS_8.iter().any(|&(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w && ids[nr as usize * w + nc as usize] != id
            });
            out[r * w + c] = differs as u8;
        }
    }
    BoundaryMap::new(h, w, out).expect("shape preserved")
}

/// Resamples the boundary channel to `(full_h, full_w)` and keeps pixels
/// strictly above [`BOUNDARY_THRESHOLD`].
pub fn binarize(probs: &ProbMap, full_h: usize, full_w: usize) -> Result<BoundaryMap> {
    if probs.classes() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "boundary probabilities need 2 classes, got {}",
            probs.classes()
        )));
    }
    let channel = Grid::new(
        probs.height(),
        probs.width(),
        1,
        probs.data().chunks_exact(2).map(|px| px[1]).collect(),
    )?;
    let full = bilinear_resample(&channel, full_h, full_w)?;
    Ok(BoundaryMap::from_bools(&full.map(|p| p > BOUNDARY_THRESHOLD)))
}

/// Pixel span `[start, end)` of output cell `i` when `input` cells are
/// pooled into `output` cells.
pub(crate) fn pool_span(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end.max(start + 1).min(input))
}

/// Max-pools a boundary map to `(out_h, out_w)`, so thin positives survive
/// downsampling.
pub fn max_pool(map: &BoundaryMap, out_h: usize, out_w: usize) -> Result<BoundaryMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig("pooled size must be positive".into()));
    }
    let (h, w) = (map.height(), map.width());
    if h == 0 || w == 0 {
        return Err(Error::EmptyInput("boundary map"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let cols: Vec<_> = (0..out_w).map(|j| pool_span(j, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, r1) = pool_span(i, h, out_h);
        for &(c0, c1) in &cols {
            let hit = (r0..r1).any(|r| map.data()[r * w + c0..r * w + c1].iter().any(|&b| b != 0));
            out.push(hit as u8);
        }
    }
    BoundaryMap::new(out_h, out_w, out)
}
