//! Seeded synthetic scenes: patch features with a known panoptic labelling.
//!
//! Stuff fills two or three horizontal bands; thing instances are
//! patch-aligned rectangles or the ellipses inscribed in them. Each patch's
//! feature is the pixel-area-weighted mean of its classes' one-hot
//! prototypes, scaled by the signal strength, plus Gaussian noise.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::fusion::relabel_panoptic;
use crate::grid::{FeatureMap, PanopticMap, DEFAULT_PATCH_SIZE};
use crate::io::{write_catalog, write_labels, write_tensor};
use crate::manifest::{Manifest, ManifestEntry, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height_patches: usize,
    pub width_patches: usize,
    pub channels: usize,
    pub patch_size: usize,
    /// Inclusive range of thing instances per scene.
    pub instances: (usize, usize),
    /// Inclusive range of instance side lengths, in patches.
    pub instance_patches: (usize, usize),
    pub noise_sigma: f32,
    pub signal_strength: f32,
    /// Minimum pixel gap between instances; rounded up to whole patches.
    pub min_gap_px: usize,
    /// Lets instances touch directly, overriding the gap.
    pub allow_adjacent: bool,
    pub shape: Shape,
    /// Placement draws per instance before giving up.
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height_patches: 64,
            width_patches: 64,
            channels: 32,
            patch_size: DEFAULT_PATCH_SIZE,
            instances: (3, 8),
            instance_patches: (3, 10),
            noise_sigma: 0.5,
            signal_strength: 3.0,
            min_gap_px: 2,
            allow_adjacent: false,
            shape: Shape::Rectangle,
            max_attempts: 200,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        if self.channels < catalog.len() {
            return Err(Error::InvalidConfig(format!(
                "{} channels cannot hold {} class prototypes",
                self.channels,
                catalog.len()
            )));
        }
        if self.height_patches < 2 || self.width_patches == 0 || self.patch_size == 0 {
            return Err(Error::InvalidConfig("scene needs at least 2x1 patches".into()));
        }
        let (lo, hi) = self.instance_patches;
        if lo == 0 || lo > hi || hi > self.height_patches.min(self.width_patches) {
            return Err(Error::InvalidConfig(format!("instance size range {lo}..={hi} does not fit the grid")));
        }
        if self.instances.0 > self.instances.1 {
            return Err(Error::InvalidConfig("instance count range is reversed".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !self.signal_strength.is_finite() {
            return Err(Error::InvalidConfig("noise and signal must be finite, noise non-negative".into()));
        }
        Ok(())
    }

    fn gap_patches(&self) -> usize {
        if self.allow_adjacent {
            0
        } else {
            self.min_gap_px.div_ceil(self.patch_size)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub features: FeatureMap,
    /// Pixel-resolution labels with canonical instance ids.
    pub panoptic: PanopticMap,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
}

impl Rect {
    fn overlaps(&self, other: &Rect, gap: usize) -> bool {
        self.row0 < other.row0 + other.rows + gap
            && other.row0 < self.row0 + self.rows + gap
            && self.col0 < other.col0 + other.cols + gap
            && other.col0 < self.col0 + self.cols + gap
    }
}

/// Generates one scene; identical seeds give identical scenes.
pub fn gen_scene(seed: u64, cfg: &SceneConfig, catalog: &ClassCatalog) -> Result<Scene> {
    cfg.validate(catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hp, wp, ps) = (cfg.height_patches, cfg.width_patches, cfg.patch_size);
    let (h, w) = (hp * ps, wp * ps);

    // Stuff bands with distinct classes.
    let stuff: Vec<u16> = catalog.stuff_ids().collect();
    let bands = rng.gen_range(2..=3).min(stuff.len()).min(hp);
    let classes: Vec<u16> = sample(&mut rng, stuff.len(), bands).iter().map(|i| stuff[i]).collect();
    let mut cuts: Vec<usize> = sample(&mut rng, hp - 1, bands - 1).iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let band_of_row = |pr: usize| cuts.iter().filter(|&&c| pr >= c).count();
    let mut labels: Vec<u32> = (0..h * w)
        .map(|i| PanopticMap::encode(classes[band_of_row(i / w / ps)], 0))
        .collect();

    // Thing instances.
    let things: Vec<u16> = catalog.thing_ids().collect();
    let wanted = rng.gen_range(cfg.instances.0..=cfg.instances.1);
    let gap = cfg.gap_patches();
    let mut placed: Vec<Rect> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        let mut found = None;
        for _ in 0..cfg.max_attempts {
            let rows = rng.gen_range(cfg.instance_patches.0..=cfg.instance_patches.1);
            let cols = rng.gen_range(cfg.instance_patches.0..=cfg.instance_patches.1);
            let rect = Rect {
                row0: rng.gen_range(0..=hp - rows),
                col0: rng.gen_range(0..=wp - cols),
                rows,
                cols,
            };
            if placed.iter().all(|p| !p.overlaps(&rect, gap)) {
                found = Some(rect);
                break;
            }
        }
        let rect = found.ok_or(Error::InfeasiblePacking {
            wanted,
            attempts: cfg.max_attempts,
        })?;
        let class = things[rng.gen_range(0..things.len())];
        let entry = PanopticMap::encode(class, placed.len() as u16 + 1);
        let (y0, x0, rh, rw) = (rect.row0 * ps, rect.col0 * ps, rect.rows * ps, rect.cols * ps);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let inside = match cfg.shape {
                    Shape::Rectangle => true,
                    Shape::Ellipse => {
                        let dy = (y - y0) as f64 + 0.5 - rh as f64 / 2.0;
                        let dx = (x - x0) as f64 + 0.5 - rw as f64 / 2.0;
                        (dy / (rh as f64 / 2.0)).powi(2) + (dx / (rw as f64 / 2.0)).powi(2) <= 1.0
                    }
                };
                if inside {
                    labels[y * w + x] = entry;
                }
            }
        }
        placed.push(rect);
    }
    let panoptic = relabel_panoptic(&PanopticMap::new(h, w, labels)?, catalog)?;

    // Features: class fractions per patch times the prototype strength.
    let c = cfg.channels;
    let noise = Normal::new(0.0f32, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let inv_area = 1.0 / (ps * ps) as f32;
    let mut data = vec![0.0f32; hp * wp * c];
    for pr in 0..hp {
        for pc in 0..wp {
            let px = &mut data[(pr * wp + pc) * c..(pr * wp + pc + 1) * c];
            for y in pr * ps..(pr + 1) * ps {
                for &e in &panoptic.data()[y * w + pc * ps..y * w + (pc + 1) * ps] {
                    px[PanopticMap::decode(e).0 as usize] += inv_area;
                }
            }
            for v in px.iter_mut() {
                *v *= cfg.signal_strength;
                if cfg.noise_sigma > 0.0 {
                    *v += noise.sample(&mut rng);
                }
            }
        }
    }
    let features = FeatureMap::from_data(hp, wp, c, data, ps)?;
    Ok(Scene { features, panoptic })
}

/// Scene counts per manifest role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetCounts {
    pub gt: usize,
    pub unlabeled: usize,
    pub holdout: usize,
}

/// Per-scene seeds, drawn in role order (gt, unlabeled, holdout).
pub fn scene_seeds(seed: u64, total: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..total).map(|_| rng.gen()).collect()
}

/// Generates every scene of a dataset in role order.
pub fn gen_dataset(seed: u64, counts: DatasetCounts, cfg: &SceneConfig, catalog: &ClassCatalog) -> Result<Vec<(Role, Scene)>> {
    let roles = std::iter::repeat_n(Role::Gt, counts.gt)
        .chain(std::iter::repeat_n(Role::Unlabeled, counts.unlabeled))
        .chain(std::iter::repeat_n(Role::Holdout, counts.holdout));
    let seeds = scene_seeds(seed, counts.gt + counts.unlabeled + counts.holdout);
    roles
        .zip(seeds)
        .map(|(role, s)| Ok((role, gen_scene(s, cfg, catalog)?)))
        .collect()
}

/// Writes a dataset to `dir`: `<role>_<nnn>.spnt` / `.spnl` per scene,
/// `catalog.tsv` and `manifest.txt`. Labels are written for every role so
/// unlabeled and holdout scenes can be evaluated. Returns the manifest path.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    seed: u64,
    counts: DatasetCounts,
    cfg: &SceneConfig,
    catalog: &ClassCatalog,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_catalog(catalog, dir.join("catalog.tsv"))?;
    let mut entries = Vec::new();
    let mut index = [0usize; 3];
    for (role, scene) in gen_dataset(seed, counts, cfg, catalog)? {
        let slot = match role {
            Role::Gt => 0,
            Role::Unlabeled => 1,
            _ => 2,
        };
        let stem = format!("{}_{:03}", role.as_str(), index[slot]);
        index[slot] += 1;
        let features = PathBuf::from(format!("{stem}.spnt"));
        let labels = PathBuf::from(format!("{stem}.spnl"));
        write_tensor(&scene.features, dir.join(&features))?;
        write_labels(&scene.panoptic, dir.join(&labels))?;
        entries.push(ManifestEntry {
            role,
            features: Some(features),
            labels: Some(labels),
        });
    }
    let path = dir.join("manifest.txt");
    Manifest::new(entries).write(&path)?;
    Ok(path)
}
