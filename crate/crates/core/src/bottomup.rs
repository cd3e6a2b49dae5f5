//! Center/offset targets and their inverse: center extraction, offset
//! grouping and majority-vote class assignment.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::grid::{Grid, InstanceMap, PanopticMap, SemanticMap, VOID_ID};
use crate::mlp::loss::PixelWeightMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetConfig {
    /// Gaussian spread in pixels; bumps are cut off beyond `3 * sigma`.
    pub sigma: f64,
    pub small_instance_weight: f32,
    pub small_instance_area: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            sigma: 8.0,
            small_instance_weight: 3.0,
            small_instance_area: 64 * 64,
        }
    }
}

/// Training targets for the center and offset heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// Single channel, values in `[0, 1]`.
    pub center: Grid<f32>,
    /// Channels `(dy, dx)` from each thing pixel to its instance centroid.
    pub offset: Grid<f32>,
    /// Thing pixels that belong to an instance.
    pub valid: Grid<bool>,
    pub weights: PixelWeightMap,
}

struct Segment {
    pixels: Vec<usize>,
    centroid: (f64, f64),
}

/// Thing segments keyed by panoptic entry, in raster order of first pixel.
fn thing_segments(pan: &PanopticMap, catalog: &ClassCatalog) -> Vec<Segment> {
    let w = pan.width();
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut segs: Vec<Vec<usize>> = Vec::new();
    for (i, &e) in pan.data().iter().enumerate() {
        let (sem, inst) = PanopticMap::decode(e);
        if inst == 0 || !catalog.is_thing(sem) {
            continue;
        }
        let k = *index.entry(e).or_insert_with(|| {
            segs.push(Vec::new());
            segs.len() - 1
        });
        segs[k].push(i);
    }
    segs.into_iter()
        .map(|pixels| {
            let n = pixels.len() as f64;
            let (sr, sc) = pixels
                .iter()
                .fold((0.0, 0.0), |(a, b), &i| (a + (i / w) as f64, b + (i % w) as f64));
            Segment {
                centroid: (sr / n, sc / n),
                pixels,
            }
        })
        .collect()
}

/// Encodes a panoptic map into center, offset, validity and weight targets.
///
/// Each instance contributes a Gaussian peaking at 1 on the pixel nearest its
/// mass centroid; overlapping bumps are max-combined. Offsets point at the
/// unrounded centroid.
pub fn encode_targets(pan: &PanopticMap, catalog: &ClassCatalog, cfg: &TargetConfig) -> Result<Targets> {
    if !(cfg.sigma > 0.0) || !(cfg.small_instance_weight >= 1.0) {
        return Err(Error::InvalidConfig("sigma must be positive and the small-instance weight at least 1".into()));
    }
    pan.validate(catalog)?;
    let (h, w) = (pan.height(), pan.width());
    let mut center = Grid::filled(h, w, 1, 0.0f32);
    let mut offset = Grid::filled(h, w, 2, 0.0f32);
    let mut valid = Grid::filled(h, w, 1, false);
    let mut weights = Grid::filled(h, w, 1, 1.0f32);
    let radius = (3.0 * cfg.sigma).floor() as isize;
    let denom = 2.0 * cfg.sigma * cfg.sigma;

    for seg in thing_segments(pan, catalog) {
        let (cy, cx) = seg.centroid;
        for &i in &seg.pixels {
            let (r, c) = (i / w, i % w);
            let o = offset.pixel_mut(r, c);
            o[0] = (cy - r as f64) as f32;
            o[1] = (cx - c as f64) as f32;
            valid.set(r, c, true);
            if seg.pixels.len() < cfg.small_instance_area {
                weights.set(r, c, cfg.small_instance_weight);
            }
        }
        let (py, px) = (cy.round() as isize, cx.round() as isize);
        for r in (py - radius).max(0)..=(py + radius).min(h as isize - 1) {
            for c in (px - radius).max(0)..=(px + radius).min(w as isize - 1) {
                let d2 = ((r - py).pow(2) + (c - px).pow(2)) as f64;
                let v = (-d2 / denom).exp() as f32;
                let slot = &mut center.pixel_mut(r as usize, c as usize)[0];
                *slot = slot.max(v);
            }
        }
    }
    Ok(Targets {
        center,
        offset,
        valid,
        weights: PixelWeightMap::new(weights)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterConfig {
    pub threshold: f32,
    /// Side of the square suppression window; odd.
    pub nms_window: usize,
    pub max_centers: usize,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            nms_window: 7,
            max_centers: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub row: usize,
    pub col: usize,
    pub score: f32,
}

/// Local maxima of a center heatmap.
///
/// A pixel qualifies when its score reaches the threshold, beats every
/// raster-earlier pixel of its window and is not below any later one, so a
/// plateau keeps only its raster-first pixel.
pub fn extract_centers(heat: &Grid<f32>, cfg: &CenterConfig) -> Result<Vec<Center>> {
    if heat.channels() != 1 {
        return Err(Error::ShapeMismatch("center heatmap must be single-channel".into()));
    }
    if cfg.nms_window.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("window {} must be odd", cfg.nms_window)));
    }
    if cfg.max_centers > u16::MAX as usize {
        return Err(Error::InvalidConfig(format!("at most {} centers", u16::MAX)));
    }
    let (h, w) = (heat.height(), heat.width());
    let v = heat.data();
    let rad = cfg.nms_window / 2;
    let mut centers = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let s = v[r * w + c];
            if !(s >= cfg.threshold) {
                continue;
            }
            let mut keep = true;
            'window: for rr in r.saturating_sub(rad)..=(r + rad).min(h - 1) {
                for cc in c.saturating_sub(rad)..=(c + rad).min(w - 1) {
                    let o = v[rr * w + cc];
                    let earlier = (rr, cc) < (r, c);
                    if (earlier && o >= s) || (!earlier && o > s) {
                        keep = false;
                        break 'window;
                    }
                }
            }
            if keep {
                centers.push(Center { row: r, col: c, score: s });
            }
        }
    }
    // Stable sort keeps raster order among equal scores.
    centers.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    centers.truncate(cfg.max_centers);
    Ok(centers)
}

/// Assigns each thing pixel to the center nearest `pixel + offset`; ties go
/// to the raster-first center. Instance ids are center list positions + 1.
pub fn group_pixels(centers: &[Center], offsets: &Grid<f32>, thing_mask: &Grid<bool>) -> Result<InstanceMap> {
    if offsets.channels() != 2 || !offsets.same_hw(thing_mask) {
        return Err(Error::ShapeMismatch(format!(
            "offsets {:?} vs mask {:?}",
            offsets.shape(),
            thing_mask.shape()
        )));
    }
    if centers.len() > u16::MAX as usize {
        return Err(Error::InvalidConfig(format!("{} centers exceed the id range", centers.len())));
    }
    let w = offsets.width();
    let data = thing_mask
        .data()
        .iter()
        .enumerate()
        .map(|(i, &thing)| {
            if !thing || centers.is_empty() {
                return 0;
            }
            let o = &offsets.data()[2 * i..2 * i + 2];
            let y = (i / w) as f64 + o[0] as f64;
            let x = (i % w) as f64 + o[1] as f64;
            let mut best = 0;
            let mut best_key = (f64::INFINITY, 0, 0);
            for (k, ctr) in centers.iter().enumerate() {
                let d = (y - ctr.row as f64).powi(2) + (x - ctr.col as f64).powi(2);
                let key = (d, ctr.row, ctr.col);
                if key.partial_cmp(&best_key) == Some(Ordering::Less) {
                    best = k;
                    best_key = key;
                }
            }
            best as u16 + 1
        })
        .collect();
    InstanceMap::new(offsets.height(), w, data)
}

/// Gives every class-agnostic instance the class most frequent among its
/// non-void pixels, ties to the smaller id. An instance whose winner is a
/// stuff class dissolves: its pixels keep their own classes without an
/// instance. Otherwise its non-void pixels take the most frequent thing
/// class. Void pixels stay void.
pub fn majority_vote(sem: &SemanticMap, inst: &InstanceMap, catalog: &ClassCatalog) -> Result<PanopticMap> {
    if !sem.same_hw(inst) {
        return Err(Error::ShapeMismatch(format!(
            "semantic {}x{} vs instances {}x{}",
            sem.height(),
            sem.width(),
            inst.height(),
            inst.width()
        )));
    }
    sem.validate(catalog)?;
    let n = catalog.len();
    let mut hist: HashMap<u16, Vec<usize>> = HashMap::new();
    for (&s, &id) in sem.data().iter().zip(inst.data()) {
        if id != 0 && s != VOID_ID {
            hist.entry(id).or_insert_with(|| vec![0; n])[s as usize] += 1;
        }
    }
    let argmax = |counts: &[usize], pred: &dyn Fn(u16) -> bool| {
        (0..n as u16)
            .filter(|&c| pred(c) && counts[c as usize] > 0)
            .fold(None, |best: Option<u16>, c| match best {
                Some(b) if counts[b as usize] >= counts[c as usize] => Some(b),
                _ => Some(c),
            })
    };
    let class_of: HashMap<u16, Option<u16>> = hist
        .iter()
        .map(|(&id, counts)| {
            let top = argmax(counts, &|_| true);
            let class = match top {
                Some(t) if catalog.is_thing(t) => argmax(counts, &|c| catalog.is_thing(c)),
                _ => None,
            };
            (id, class)
        })
        .collect();

    let mut out_sem = sem.data().to_vec();
    let mut out_inst = inst.data().to_vec();
    for (s, id) in out_sem.iter_mut().zip(out_inst.iter_mut()) {
        if *id == 0 {
            continue;
        }
        match class_of.get(id).copied().flatten() {
            Some(class) if *s != VOID_ID => *s = class,
            _ => *id = 0,
        }
    }
    let (h, w) = (sem.height(), sem.width());
    PanopticMap::from_parts(&SemanticMap::new(h, w, out_sem)?, &InstanceMap::new(h, w, out_inst)?, catalog)
}

/// Semantic map, center heatmap and offsets to a panoptic map.
pub fn fuse_bottomup(
    sem: &SemanticMap,
    heat: &Grid<f32>,
    offsets: &Grid<f32>,
    catalog: &ClassCatalog,
    cfg: &CenterConfig,
) -> Result<PanopticMap> {
    let centers = extract_centers(heat, cfg)?;
    let inst = group_pixels(&centers, offsets, &sem.thing_mask(catalog))?;
    majority_vote(sem, &inst, catalog)
}
