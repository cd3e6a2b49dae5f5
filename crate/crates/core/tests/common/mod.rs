//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is written for clarity, in 64-bit, and
//! shares no code with the library beyond its data types.

#![allow(dead_code)]

pub mod criteria;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use panlabel::fusion::Connectivity;
use panlabel::mlp::LAYER_COUNT;
use panlabel::{ClassCatalog, Grid, InstanceMap, MlpHead, PanopticMap, VOID_ID};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const PROB_FLOOR: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Dense math

/// Bilinear resampling, align-corners=false, evaluated pixel by pixel.
pub fn bilinear(src: &[f64], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, input: usize, output: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let t = if i1 == i0 { 0.0 } else { s - i0 as f64 };
        (i0, i1, t)
    };
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        let (y0, y1, ty) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, tx) = coord(x, w, ow);
            for k in 0..c {
                let at = |r: usize, q: usize| src[(r * w + q) * c + k];
                out[(y * ow + x) * c + k] = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                    + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
            }
        }
    }
    out
}

/// Head parameters in 64-bit, flattened layer by layer as weights then biases.
#[derive(Debug, Clone)]
pub struct Params {
    pub dims: [usize; LAYER_COUNT + 1],
    pub upsample: usize,
    pub flat: Vec<f64>,
}

impl Params {
    pub fn of(head: &MlpHead) -> Self {
        let mut flat = Vec::new();
        for l in head.layers() {
            flat.extend(l.weight().iter().map(|&v| v as f64));
            flat.extend(l.bias().iter().map(|&v| v as f64));
        }
        Self {
            dims: head.dims(),
            upsample: head.upsample_factor(),
            flat,
        }
    }

    /// `(weight, bias)` slices of layer `l`; weights are input-major.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let mut off = 0;
        for i in 0..l {
            off += self.dims[i] * self.dims[i + 1] + self.dims[i + 1];
        }
        let nw = self.dims[l] * self.dims[l + 1];
        (&self.flat[off..off + nw], &self.flat[off + nw..off + nw + self.dims[l + 1]])
    }
}

/// Recorded pre-activations, used to detect rectifier sign changes.
pub struct Forward {
    pub logits: Vec<f64>,
    pub pre: Vec<f64>,
}

fn affine(x: &[f64], w: &[f64], b: &[f64], i: usize, o: usize) -> Vec<f64> {
    x.chunks_exact(i)
        .flat_map(|px| (0..o).map(move |j| b[j] + (0..i).map(|k| px[k] * w[k * o + j]).sum::<f64>()))
        .collect()
}

/// Head forward pass: layer 1 per patch, bilinear upsampling, rectifier,
/// then three more layers per pixel with rectifiers between them.
pub fn forward(p: &Params, feats: &[f64], hp: usize, wp: usize) -> Forward {
    let d = p.dims;
    let (oh, ow) = (hp * p.upsample, wp * p.upsample);
    let (w1, b1) = p.layer(0);
    let z1 = affine(feats, w1, b1, d[0], d[1]);
    let mut x = bilinear(&z1, hp, wp, d[1], oh, ow);
    let mut pre = x.clone();
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    for l in 1..LAYER_COUNT {
        let (w, b) = p.layer(l);
        x = affine(&x, w, b, d[l], d[l + 1]);
        if l + 1 < LAYER_COUNT {
            pre.extend_from_slice(&x);
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Forward { logits: x, pre }
}

pub fn softmax(logits: &[f64], c: usize) -> Vec<f64> {
    logits
        .chunks_exact(c)
        .flat_map(|px| {
            let m = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = px.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Losses

/// `ceil(num / den * n)` in integer arithmetic, at least 1.
pub fn top_k(num: usize, den: usize, n: usize) -> usize {
    ((num * n).div_ceil(den)).max(1)
}

/// Per-pixel losses `-w ln p_y` of the non-void pixels, sorted descending,
/// with the top `k` summed and averaged.
pub fn bootstrapped_ce(probs: &[f64], c: usize, target: &[u16], weights: Option<&[f64]>, frac: (usize, usize)) -> f64 {
    let mut losses: Vec<f64> = target
        .iter()
        .enumerate()
        .filter(|(_, &y)| y != VOID_ID)
        .map(|(i, &y)| {
            let w = weights.map_or(1.0, |w| w[i]);
            -w * probs[i * c + y as usize].max(PROB_FLOOR).ln()
        })
        .collect();
    losses.sort_by(|a, b| b.total_cmp(a));
    let k = top_k(frac.0, frac.1, losses.len());
    losses[..k].iter().sum::<f64>() / k as f64
}

/// Indices of the pixels selected by [`bootstrapped_ce`] (ties by index).
pub fn hard_set(probs: &[f64], c: usize, target: &[u16], weights: Option<&[f64]>, frac: (usize, usize)) -> BTreeSet<usize> {
    let mut losses: Vec<(f64, usize)> = target
        .iter()
        .enumerate()
        .filter(|(_, &y)| y != VOID_ID)
        .map(|(i, &y)| (-weights.map_or(1.0, |w| w[i]) * probs[i * c + y as usize].max(PROB_FLOOR).ln(), i))
        .collect();
    losses.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = top_k(frac.0, frac.1, losses.len());
    losses[..k].iter().map(|l| l.1).collect()
}

/// Mean binary cross-entropy; `probs` holds two channels per pixel.
pub fn binary_ce(probs: &[f64], target: &[u8]) -> f64 {
    let n = target.len() as f64;
    -target
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = probs[2 * i + 1].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

pub fn l1_masked(pred: &[f64], target: &[f64], valid: &[bool], c: usize) -> f64 {
    let count = valid.iter().filter(|&&v| v).count() * c;
    if count == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, &v) in valid.iter().enumerate() {
        if v {
            for k in 0..c {
                sum += (pred[i * c + k] - target[i * c + k]).abs();
            }
        }
    }
    sum / count as f64
}

// ---------------------------------------------------------------------------
// Image algorithms

/// Components of a mask by breadth-first flood fill, as sets of raster indices.
pub fn flood_fill(mask: &Grid<bool>, conn: Connectivity) -> BTreeSet<BTreeSet<usize>> {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let steps: Vec<(isize, isize)> = match conn {
        Connectivity::Four => vec![(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => (-1..=1)
            .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
            .filter(|&d| d != (0, 0))
            .collect(),
    };
    let mut seen = vec![false; (h * w) as usize];
    let mut out = BTreeSet::new();
    for start in 0..(h * w) as usize {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.insert(p);
            let (r, c) = (p as isize / w, p as isize % w);
            for &(dr, dc) in &steps {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h || nc >= w {
                    continue;
                }
                let q = (nr * w + nc) as usize;
                if mask.data()[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.insert(comp);
    }
    out
}

/// Boundary by scanning every adjacent pixel pair once and marking both ends
/// of each pair whose ids differ.
pub fn boundary_scan(inst: &InstanceMap) -> Vec<u8> {
    let (h, w) = (inst.height(), inst.width());
    let id = |r: usize, c: usize| inst.data()[r * w + c];
    let mut out = vec![0u8; h * w];
    let mut mark = |a: (usize, usize), b: (usize, usize)| {
        if id(a.0, a.1) != id(b.0, b.1) {
            out[a.0 * w + a.1] = 1;
            out[b.0 * w + b.1] = 1;
        }
    };
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                mark((r, c), (r, c + 1));
            }
            if r + 1 < h {
                mark((r, c), (r + 1, c));
                if c + 1 < w {
                    mark((r, c), (r + 1, c + 1));
                }
                if c > 0 {
                    mark((r, c), (r + 1, c - 1));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Panoptic quality

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Pq {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PqOracle {
    /// Per class: (tp, fp, fn, iou sum).
    pub classes: BTreeMap<u16, (u64, u64, u64, f64)>,
}

impl PqOracle {
    pub fn class_pq(&self, class: u16) -> Pq {
        let (tp, fp, fn_, iou) = self.classes[&class];
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        Pq {
            pq: if denom > 0.0 { iou / denom } else { 0.0 },
            sq: if tp > 0 { iou / tp as f64 } else { 0.0 },
            rq: if denom > 0.0 { tp as f64 / denom } else { 0.0 },
        }
    }

    pub fn mean(&self, keep: impl Fn(u16) -> bool) -> Pq {
        let used: Vec<Pq> = self
            .classes
            .iter()
            .filter(|(&k, v)| keep(k) && v.0 + v.1 + v.2 > 0)
            .map(|(&k, _)| self.class_pq(k))
            .collect();
        if used.is_empty() {
            return Pq::default();
        }
        let n = used.len() as f64;
        Pq {
            pq: used.iter().map(|p| p.pq).sum::<f64>() / n,
            sq: used.iter().map(|p| p.sq).sum::<f64>() / n,
            rq: used.iter().map(|p| p.rq).sum::<f64>() / n,
        }
    }
}

/// Best partial matching of `n_gt` ground-truth segments to predictions by
/// exhaustive search: most matches first, then the largest IoU sum. Only
/// pairs with IoU strictly above 0.5 may match.
fn best_matching(iou: &[Vec<f64>], gi: usize, used: &mut Vec<bool>) -> (usize, f64, Vec<Option<usize>>) {
    if gi == iou.len() {
        return (0, 0.0, Vec::new());
    }
    let (mut best_n, mut best_s, mut best_m) = {
        let (n, s, mut m) = best_matching(iou, gi + 1, used);
        m.insert(0, None);
        (n, s, m)
    };
    for pi in 0..used.len() {
        if used[pi] || iou[gi][pi] <= 0.5 {
            continue;
        }
        used[pi] = true;
        let (n, s, mut m) = best_matching(iou, gi + 1, used);
        used[pi] = false;
        let (n, s) = (n + 1, s + iou[gi][pi]);
        if n > best_n || (n == best_n && s > best_s) {
            m.insert(0, Some(pi));
            best_n = n;
            best_s = s;
            best_m = m;
        }
    }
    (best_n, best_s, best_m)
}

/// Panoptic quality with exhaustive matching. Void ground-truth pixels are
/// removed from every union; unmatched predictions that are more than half
/// void are not false positives.
pub fn pq_oracle(pred: &PanopticMap, gt: &PanopticMap, catalog: &ClassCatalog) -> PqOracle {
    let void = VOID_ID as u32 * 1000;
    let segs = |m: &PanopticMap| -> BTreeMap<u32, BTreeSet<usize>> {
        let mut s: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        for (i, &e) in m.data().iter().enumerate() {
            if e / 1000 != VOID_ID as u32 {
                s.entry(e).or_default().insert(i);
            }
        }
        s
    };
    let gt_void: BTreeSet<usize> = gt
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e / 1000 == void / 1000)
        .map(|(i, _)| i)
        .collect();
    let (ps, gs) = (segs(pred), segs(gt));
    let mut out = PqOracle::default();
    for class in 0..catalog.len() as u16 {
        let p: Vec<&BTreeSet<usize>> = ps.iter().filter(|(&k, _)| k / 1000 == class as u32).map(|(_, v)| v).collect();
        let g: Vec<&BTreeSet<usize>> = gs.iter().filter(|(&k, _)| k / 1000 == class as u32).map(|(_, v)| v).collect();
        let iou: Vec<Vec<f64>> = g
            .iter()
            .map(|gs| {
                p.iter()
                    .map(|ps| {
                        let inter = gs.intersection(ps).count();
                        let void_in_pred = ps.intersection(&gt_void).count();
                        let union = gs.len() + ps.len() - inter - void_in_pred;
                        inter as f64 / union as f64
                    })
                    .collect()
            })
            .collect();
        let mut used = vec![false; p.len()];
        let (tp, sum, m) = best_matching(&iou, 0, &mut used);
        let matched_p: BTreeSet<usize> = m.iter().flatten().copied().collect();
        let fn_ = g.len() - tp;
        let fp = p
            .iter()
            .enumerate()
            .filter(|(i, ps)| {
                !matched_p.contains(i) && 2 * ps.intersection(&gt_void).count() <= ps.len()
            })
            .count();
        if tp + fp + fn_ > 0 {
            out.classes.insert(class, (tp as u64, fp as u64, fn_ as u64, sum));
        }
    }
    out
}

/// A random panoptic map: stuff background bands, up to `max_things`
/// rectangular thing instances and a few void rectangles.
pub fn random_panoptic(rng: &mut impl Rng, h: usize, w: usize, catalog: &ClassCatalog, max_things: usize) -> PanopticMap {
    let stuff: Vec<u16> = catalog.stuff_ids().collect();
    let things: Vec<u16> = catalog.thing_ids().collect();
    let split = rng.gen_range(0..=h);
    let (a, b) = (stuff[rng.gen_range(0..stuff.len())], stuff[rng.gen_range(0..stuff.len())]);
    let mut data: Vec<u32> = (0..h * w).map(|i| if i / w < split { a as u32 * 1000 } else { b as u32 * 1000 }).collect();
    let rect = |rng: &mut dyn rand::RngCore, value: u32, data: &mut Vec<u32>| {
        let (r0, c0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (r1, c1) = (rng.gen_range(r0 + 1..=h.min(r0 + h / 2 + 1)), rng.gen_range(c0 + 1..=w.min(c0 + w / 2 + 1)));
        for r in r0..r1 {
            for c in c0..c1 {
                data[r * w + c] = value;
            }
        }
    };
    let n = rng.gen_range(0..=max_things);
    for i in 0..n {
        let class = things[rng.gen_range(0..things.len())];
        rect(rng, class as u32 * 1000 + i as u32 + 1, &mut data);
    }
    for _ in 0..rng.gen_range(0..3) {
        rect(rng, VOID_ID as u32 * 1000, &mut data);
    }
    PanopticMap::new(h, w, data).unwrap()
}

/// A prediction derived from `gt`: a random shift of every segment, then a
/// few class swaps, merges and void patches.
pub fn perturb_panoptic(rng: &mut impl Rng, gt: &PanopticMap, catalog: &ClassCatalog) -> PanopticMap {
    let (h, w) = (gt.height(), gt.width());
    let (dr, dc) = (rng.gen_range(-2isize..=2), rng.gen_range(-2isize..=2));
    let mut data: Vec<u32> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as isize - dr, (i % w) as isize - dc);
            let (r, c) = (r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize);
            gt.data()[r * w + c]
        })
        .collect();
    let things: Vec<u16> = catalog.thing_ids().collect();
    let ids: BTreeSet<u32> = data.iter().copied().filter(|e| catalog.is_thing((e / 1000) as u16)).collect();
    for id in ids {
        match rng.gen_range(0..6) {
            0 => {
                let class = things[rng.gen_range(0..things.len())] as u32;
                data.iter_mut().filter(|e| **e == id).for_each(|e| *e = class * 1000 + id % 1000);
            }
            1 => {
                data.iter_mut().filter(|e| **e == id).for_each(|e| *e = id - id % 1000 + 50);
            }
            _ => {}
        }
    }
    if rng.gen_bool(0.5) {
        let (r0, c0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        for r in r0..h.min(r0 + 5) {
            for c in c0..w.min(c0 + 5) {
                data[r * w + c] = if rng.gen_bool(0.5) { VOID_ID as u32 * 1000 } else { things[0] as u32 * 1000 + 77 };
            }
        }
    }
    PanopticMap::new(h, w, data).unwrap()
}

/// Random instance map with up to `max_ids` ids placed as overlapping rectangles.
pub fn random_instances(rng: &mut impl Rng, h: usize, w: usize, max_ids: u16) -> InstanceMap {
    let mut data = vec![0u16; h * w];
    for _ in 0..rng.gen_range(0..6) {
        let id = rng.gen_range(0..=max_ids);
        let (r0, c0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (r1, c1) = (rng.gen_range(r0 + 1..=h), rng.gen_range(c0 + 1..=w));
        for r in r0..r1 {
            for c in c0..c1 {
                data[r * w + c] = id;
            }
        }
    }
    // Sprinkle single pixels so diagonal-only contacts occur.
    for _ in 0..rng.gen_range(0..4) {
        data[rng.gen_range(0..h * w)] = rng.gen_range(0..=max_ids);
    }
    InstanceMap::new(h, w, data).unwrap()
}

/// Random mask with density chosen per call so sparse and dense cases both occur.
pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> Grid<bool> {
    let density = rng.gen_range(0.1..0.9);
    Grid::from_fn(h, w, 1, |_, _, _| rng.gen_bool(density))
}
