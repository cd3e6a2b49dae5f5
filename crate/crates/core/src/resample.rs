//! Bilinear resampling with the align-corners=false convention.
//!
//! Output pixel `i` samples source coordinate `(i + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Two-tap interpolation weights for one output index along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f32,
    pub w1: f32,
}

pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = (src - i0 as f64).clamp(0.0, 1.0);
            Tap {
                i0,
                i1,
                w0: (1.0 - frac) as f32,
                w1: frac as f32,
            }
        })
        .collect()
}

/// Precomputed separable resampling between two grid sizes.
#[derive(Debug, Clone)]
pub(crate) struct Resampler {
    pub in_w: usize,
    pub rows: Vec<Tap>,
    pub cols: Vec<Tap>,
}

impl Resampler {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            in_w,
            rows: axis_taps(in_h, out_h),
            cols: axis_taps(in_w, out_w),
        }
    }

    pub fn out_w(&self) -> usize {
        self.cols.len()
    }

    /// Interpolates output rows `row_start..row_end` into `out`
    /// (`(row_end - row_start) * out_w * channels` values).
    pub fn apply_rows(
        &self,
        src: &[f32],
        channels: usize,
        row_start: usize,
        row_end: usize,
        out: &mut [f32],
    ) {
        let in_w = self.in_w;
        let out_w = self.out_w();
        debug_assert_eq!(out.len(), (row_end - row_start) * out_w * channels);
        for (local, ty) in self.rows[row_start..row_end].iter().enumerate() {
            let r0 = &src[ty.i0 * in_w * channels..(ty.i0 + 1) * in_w * channels];
            let r1 = &src[ty.i1 * in_w * channels..(ty.i1 + 1) * in_w * channels];
            for (j, tx) in self.cols.iter().enumerate() {
                let dst = &mut out[(local * out_w + j) * channels..(local * out_w + j + 1) * channels];
                let a = &r0[tx.i0 * channels..(tx.i0 + 1) * channels];
                let b = &r0[tx.i1 * channels..(tx.i1 + 1) * channels];
                let c = &r1[tx.i0 * channels..(tx.i0 + 1) * channels];
                let d = &r1[tx.i1 * channels..(tx.i1 + 1) * channels];
                for k in 0..channels {
                    // Lerp form keeps constant inputs exact.
                    let top = a[k] + tx.w1 * (b[k] - a[k]);
                    let bottom = c[k] + tx.w1 * (d[k] - c[k]);
                    dst[k] = top + ty.w1 * (bottom - top);
                }
            }
        }
    }

    /// Adjoint of [`Resampler::apply_rows`]: scatters output-row gradients
    /// back onto the source grid, accumulating in `acc`.
    pub fn scatter_rows(
        &self,
        grad: &[f32],
        channels: usize,
        row_start: usize,
        row_end: usize,
        acc: &mut [f64],
    ) {
        let in_w = self.in_w;
        let out_w = self.out_w();
        for (local, ty) in self.rows[row_start..row_end].iter().enumerate() {
            for (j, tx) in self.cols.iter().enumerate() {
                let g = &grad[(local * out_w + j) * channels..(local * out_w + j + 1) * channels];
                let taps = [
                    (ty.i0, tx.i0, ty.w0 * tx.w0),
                    (ty.i0, tx.i1, ty.w0 * tx.w1),
                    (ty.i1, tx.i0, ty.w1 * tx.w0),
                    (ty.i1, tx.i1, ty.w1 * tx.w1),
                ];
                for (r, c, w) in taps {
                    if w == 0.0 {
                        continue;
                    }
                    let dst = &mut acc[(r * in_w + c) * channels..(r * in_w + c + 1) * channels];
                    for k in 0..channels {
                        dst[k] += (w * g[k]) as f64;
                    }
                }
            }
        }
    }
}

/// Bilinearly resamples a grid to `out_h x out_w`, keeping the channel count.
/// Equal sizes return an exact copy.
pub fn bilinear_resample(src: &Grid<f32>, out_h: usize, out_w: usize) -> Result<Grid<f32>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig(format!("cannot resample to {out_h}x{out_w}")));
    }
    if src.pixel_count() == 0 || src.channels() == 0 {
        return Err(Error::EmptyInput("resample source"));
    }
    if src.height() == out_h && src.width() == out_w {
        return Ok(src.clone());
    }
    let c = src.channels();
    let rs = Resampler::new(src.height(), src.width(), out_h, out_w);
    let mut out = vec![0.0f32; out_h * out_w * c];
    rs.apply_rows(src.data(), c, 0, out_h, &mut out);
    Grid::new(out_h, out_w, c, out)
}
