//! Panoptic fusion of a semantic map and a boundary map.
//!
//! Per thing class: connected blobs below `min_blob_area` become void; the
//! remaining blobs lose their boundary pixels and split into candidate
//! instances; small candidates join their nearest large neighbour; boundary
//! pixels rejoin the nearest instance.

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::grid::{BoundaryMap, Grid, InstanceMap, PanopticMap, SemanticMap, PANOPTIC_DIVISOR, VOID_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }

    /// Neighbours already visited by a raster scan.
    fn causal(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got {other:?}"))),
        }
    }
}

/// A connected set of pixels, listed as raster indices in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// 1-based, in raster order of the first pixel.
    pub label: u32,
    pub pixels: Vec<usize>,
    pub area: usize,
    /// Mean `(row, col)`.
    pub centroid: (f64, f64),
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn neighbor(r: usize, c: usize, d: (isize, isize), h: usize, w: usize) -> Option<usize> {
    let (nr, nc) = (r as isize + d.0, c as isize + d.1);
    (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w).then(|| nr as usize * w + nc as usize)
}

/// Two-pass union-find labelling. Returns per-pixel labels (0 outside the
/// mask, otherwise 1-based in raster order of first pixel) and the count.
pub fn label_components(mask: &Grid<bool>, conn: Connectivity) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height(), mask.width());
    let m = mask.data();
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !m[i] {
                continue;
            }
            let mut current = 0u32;
            for &d in conn.causal() {
                if let Some(j) = neighbor(r, c, d, h, w) {
                    let l = labels[j];
                    if l == 0 {
                        continue;
                    }
                    if current == 0 {
                        current = l;
                    } else if l != current {
                        let (a, b) = (find(&mut parent, current), find(&mut parent, l));
                        if a != b {
                            parent[a.max(b) as usize] = a.min(b);
                        }
                    }
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[i] = current;
        }
    }
    // Provisional labels are created in raster order and roots are the
    // minimum of their set, so numbering roots in order is canonical.
    let mut canon = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in 1..parent.len() as u32 {
        let root = find(&mut parent, l);
        if root == l {
            count += 1;
            canon[l as usize] = count;
        } else {
            canon[l as usize] = canon[root as usize];
        }
    }
    for l in labels.iter_mut() {
        *l = canon[*l as usize];
    }
    (labels, count as usize)
}

/// Connected components of the true pixels of `mask`.
pub fn connected_components(mask: &Grid<bool>, conn: Connectivity) -> Vec<Component> {
    let w = mask.width();
    let (labels, count) = label_components(mask, conn);
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            pixels[l as usize - 1].push(i);
        }
    }
    pixels
        .into_iter()
        .enumerate()
        .map(|(k, px)| {
            let n = px.len() as f64;
            let (sr, sc) = px
                .iter()
                .fold((0.0, 0.0), |(a, b), &i| (a + (i / w) as f64, b + (i % w) as f64));
            Component {
                label: k as u32 + 1,
                area: px.len(),
                centroid: (sr / n, sc / n),
                pixels: px,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    pub min_blob_area: usize,
    pub min_instance_area: usize,
    pub blob_connectivity: Connectivity,
    pub instance_connectivity: Connectivity,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            min_blob_area: 200,
            min_instance_area: 100,
            blob_connectivity: Connectivity::Eight,
            instance_connectivity: Connectivity::Four,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_blob_area == 0 || self.min_instance_area == 0 {
            return Err(Error::InvalidConfig("fusion areas must be at least 1".into()));
        }
        Ok(())
    }
}

const UNSET: u32 = u32::MAX;

/// Layered multi-source BFS over `region` (a sorted pixel list). `owner`
/// holds the seed owners on entry (UNSET elsewhere) and every reachable
/// region pixel's nearest owner on exit, ties going to the smaller owner.
/// Returns the BFS distance per region pixel, in region order.
fn nearest_owner(region: &[usize], owner: &mut [u32], h: usize, w: usize, conn: Connectivity) -> Vec<u32> {
    let local = |i: usize| region.binary_search(&i).ok();
    let mut dist = vec![UNSET; region.len()];
    let mut frontier: Vec<usize> = Vec::new();
    for (k, &i) in region.iter().enumerate() {
        if owner[i] != UNSET {
            dist[k] = 0;
            frontier.push(i);
        }
    }
    let mut d = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &i in &frontier {
            let o = owner[i];
            let (r, c) = (i / w, i % w);
            for &off in conn.offsets() {
                let Some(j) = neighbor(r, c, off, h, w) else { continue };
                let Some(k) = local(j) else { continue };
                if dist[k] == UNSET {
                    dist[k] = d + 1;
                    owner[j] = o;
                    next.push(j);
                } else if dist[k] == d + 1 && o < owner[j] {
                    owner[j] = o;
                }
            }
        }
        frontier = next;
        d += 1;
    }
    dist
}

/// Splits one surviving blob into instances. Returns per-pixel instance
/// numbers (1-based within the blob) for the blob's pixels, in blob order.
fn split_blob(blob: &Component, boundary: &[u8], h: usize, w: usize, cfg: &FusionConfig) -> Vec<u32> {
    let px = &blob.pixels;
    // Candidate instances: blob minus boundary, labelled on a local window.
    let (r0, r1) = (px[0] / w, px[px.len() - 1] / w + 1);
    let (mut c0, mut c1) = (w, 0);
    for &i in px {
        c0 = c0.min(i % w);
        c1 = c1.max(i % w + 1);
    }
    let (bh, bw) = (r1 - r0, c1 - c0);
    let mut inner = Grid::filled(bh, bw, 1, false);
    for &i in px {
        if boundary[i] == 0 {
            inner.set(i / w - r0, i % w - c0, true);
        }
    }
    let (cand, _) = label_components(&inner, cfg.instance_connectivity);
    let to_local = |i: usize| (i / w - r0) * bw + (i % w - c0);

    let mut areas: Vec<usize> = Vec::new();
    for &i in px {
        let l = cand[to_local(i)] as usize;
        if l > 0 {
            if areas.len() < l {
                areas.resize(l, 0);
            }
            areas[l - 1] += 1;
        }
    }
    let large: Vec<bool> = areas.iter().map(|&a| a >= cfg.min_instance_area).collect();
    if !large.iter().any(|&b| b) {
        return vec![1; px.len()];
    }

    // Each small candidate joins the large one closest to any of its pixels.
    let mut owner = vec![UNSET; h * w];
    for &i in px {
        let l = cand[to_local(i)];
        if l > 0 && large[l as usize - 1] {
            owner[i] = l;
        }
    }
    let dist = nearest_owner(px, &mut owner, h, w, cfg.blob_connectivity);
    let mut merge_to: Vec<(u32, u32)> = vec![(UNSET, UNSET); areas.len()];
    for (k, &i) in px.iter().enumerate() {
        let l = cand[to_local(i)];
        if l == 0 || large[l as usize - 1] {
            continue;
        }
        let best = &mut merge_to[l as usize - 1];
        if (dist[k], owner[i]) < *best {
            *best = (dist[k], owner[i]);
        }
    }

    // Instances are the large candidates plus what merged into them; the
    // boundary pixels then rejoin the nearest one.
    let mut inst = vec![UNSET; h * w];
    for &i in px {
        let l = cand[to_local(i)];
        if l > 0 {
            inst[i] = if large[l as usize - 1] { l } else { merge_to[l as usize - 1].1 };
        }
    }
    nearest_owner(px, &mut inst, h, w, cfg.blob_connectivity);
    px.iter().map(|&i| inst[i]).collect()
}

/// Fuses semantic and boundary predictions into a panoptic map.
pub fn fuse(
    sem: &SemanticMap,
    boundary: &BoundaryMap,
    catalog: &ClassCatalog,
    cfg: &FusionConfig,
) -> Result<PanopticMap> {
    cfg.validate()?;
    if !sem.same_hw(boundary) {
        return Err(Error::ShapeMismatch(format!(
            "semantic {}x{} vs boundary {}x{}",
            sem.height(),
            sem.width(),
            boundary.height(),
            boundary.width()
        )));
    }
    sem.validate(catalog)?;
    let (h, w) = (sem.height(), sem.width());
    let mut out_sem = sem.data().to_vec();
    let mut out_inst = vec![0u16; h * w];
    for class in catalog.thing_ids() {
        let mask = sem.grid().map(|id| id == class);
        let mut next: u32 = 0;
        for blob in connected_components(&mask, cfg.blob_connectivity) {
            if blob.area < cfg.min_blob_area {
                for &i in &blob.pixels {
                    out_sem[i] = VOID_ID;
                }
                continue;
            }
            let ids = split_blob(&blob, boundary.data(), h, w, cfg);
            // Renumber this blob's instances after the ones already placed.
            let mut remap: Vec<(u32, u32)> = Vec::new();
            for (&i, &local) in blob.pixels.iter().zip(&ids) {
                let global = match remap.iter().find(|(l, _)| *l == local) {
                    Some(&(_, g)) => g,
                    None => {
                        next += 1;
                        remap.push((local, next));
                        next
                    }
                };
                if global >= PANOPTIC_DIVISOR {
                    return Err(Error::InvalidLabel(format!(
                        "class {class} exceeds {} instances",
                        PANOPTIC_DIVISOR - 1
                    )));
                }
                out_inst[i] = global as u16;
            }
        }
    }
    let sem_out = SemanticMap::new(h, w, out_sem)?;
    let inst_out = InstanceMap::new(h, w, out_inst)?;
    PanopticMap::from_parts(&sem_out, &inst_out, catalog)
}

/// Renumbers thing instances per class to `1..m` in raster order of their
/// first pixel.
pub fn relabel_panoptic(map: &PanopticMap, catalog: &ClassCatalog) -> Result<PanopticMap> {
    let (sem, inst) = map.split();
    PanopticMap::from_parts(&sem, &inst, catalog)
}

/// Sets masked pixels to void.
pub fn apply_void_mask(sem: &SemanticMap, mask: &Grid<bool>) -> Result<SemanticMap> {
    if !sem.same_hw(mask) {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs labels {}x{}",
            mask.height(),
            mask.width(),
            sem.height(),
            sem.width()
        )));
    }
    let data = sem
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&s, &m)| if m { VOID_ID } else { s })
        .collect();
    SemanticMap::new(sem.height(), sem.width(), data)
}
