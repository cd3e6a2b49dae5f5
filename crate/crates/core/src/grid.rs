//! Dense row-major grids and the label/feature map types built on them.
//!
//! Every map stores `(row, col, channel)` in row-major order. Label maps are
//! single-channel.

use std::collections::HashMap;
use std::ops::Deref;

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};

/// Reserved semantic id for pixels excluded from supervision and evaluation.
pub const VOID_ID: u16 = 255;

/// Panoptic entries are `semantic_id * PANOPTIC_DIVISOR + instance_id`.
pub const PANOPTIC_DIVISOR: u32 = 1000;

/// Encoded panoptic entry of a void pixel.
pub const VOID_PANOPTIC: u32 = VOID_ID as u32 * PANOPTIC_DIVISOR;

/// Default pixels per patch edge of the backbone.
pub const DEFAULT_PATCH_SIZE: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::ShapeMismatch(format!("{height}x{width}x{channels} overflows")))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_hw<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Channel vector of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Channel 0 of a pixel; the usual accessor for label maps.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[(row * self.width + col) * self.channels]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let idx = (row * self.width + col) * self.channels;
        self.data[idx] = value;
    }

    /// Reverses the column order.
    pub fn hflip(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                data.extend_from_slice(self.pixel(r, c));
            }
        }
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<Self> {
        if row0 + height > self.height || col0 + width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {height}x{width} at ({row0},{col0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in row0..row0 + height {
            let start = (r * self.width + col0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

/// Types whose column order can be mirrored.
pub trait HFlip {
    fn hflip(&self) -> Self;
}

impl<T: Copy> HFlip for Grid<T> {
    fn hflip(&self) -> Self {
        Grid::hflip(self)
    }
}

macro_rules! label_map {
    ($(#[$meta:meta])* $name:ident, $elem:ty) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name(Grid<$elem>);

        impl $name {
            pub fn new(height: usize, width: usize, data: Vec<$elem>) -> Result<Self> {
                Grid::new(height, width, 1, data).map(Self)
            }

            pub fn filled(height: usize, width: usize, value: $elem) -> Self {
                Self(Grid::filled(height, width, 1, value))
            }

            pub fn from_grid(grid: Grid<$elem>) -> Result<Self> {
                if grid.channels() != 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "{} must be single-channel, got {}",
                        stringify!($name),
                        grid.channels()
                    )));
                }
                Ok(Self(grid))
            }

            pub fn grid(&self) -> &Grid<$elem> {
                &self.0
            }

            pub fn into_grid(self) -> Grid<$elem> {
                self.0
            }

            pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<Self> {
                self.0.crop(row0, col0, height, width).map(Self)
            }
        }

        impl Deref for $name {
            type Target = Grid<$elem>;

            fn deref(&self) -> &Grid<$elem> {
                &self.0
            }
        }

        impl HFlip for $name {
            fn hflip(&self) -> Self {
                Self(self.0.hflip())
            }
        }
    };
}

label_map!(
    /// Per-pixel class ids; [`VOID_ID`] marks unlabeled pixels.
    SemanticMap,
    u16
);
label_map!(
    /// Class-agnostic instance ids, unique within an image; 0 means "no instance".
    InstanceMap,
    u16
);
label_map!(
    /// Per-pixel `semantic * 1000 + instance` entries.
    PanopticMap,
    u32
);
label_map!(
    /// Binary boundary labels, each exactly 0 or 1.
    BoundaryMap,
    u8
);

impl SemanticMap {
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        let n = catalog.len();
        if let Some(bad) = self.data().iter().find(|&&id| id != VOID_ID && id as usize >= n) {
            return Err(Error::InvalidLabel(format!(
                "semantic id {bad} outside catalog of {n} classes"
            )));
        }
        Ok(())
    }

    /// Mask of pixels whose class is a thing class.
    pub fn thing_mask(&self, catalog: &ClassCatalog) -> Grid<bool> {
        self.0.map(|id| catalog.is_thing(id))
    }
}

impl BoundaryMap {
    pub fn from_bools(mask: &Grid<bool>) -> Self {
        Self(mask.map(u8::from))
    }
}

impl PanopticMap {
    #[inline]
    pub fn encode(semantic: u16, instance: u16) -> u32 {
        semantic as u32 * PANOPTIC_DIVISOR + instance as u32
    }

    #[inline]
    pub fn decode(entry: u32) -> (u16, u16) {
        (
            (entry / PANOPTIC_DIVISOR) as u16,
            (entry % PANOPTIC_DIVISOR) as u16,
        )
    }

    pub fn semantic(&self) -> SemanticMap {
        SemanticMap(self.0.map(|e| Self::decode(e).0))
    }

    /// Class-agnostic instance map: every nonzero `(class, instance)` pair gets a
    /// distinct id, numbered from 1 in raster order of its first pixel.
    pub fn instances(&self) -> InstanceMap {
        let mut ids: HashMap<u32, u16> = HashMap::new();
        let mut next = 1u16;
        InstanceMap(self.0.map(|e| {
            if Self::decode(e).1 == 0 {
                return 0;
            }
            *ids.entry(e).or_insert_with(|| {
                let id = next;
                next = next.wrapping_add(1);
                id
            })
        }))
    }

    /// Splits the map into its semantic and class-agnostic instance channels.
    pub fn split(&self) -> (SemanticMap, InstanceMap) {
        (self.semantic(), self.instances())
    }

    /// Builds a panoptic map from a semantic map and a class-agnostic instance map.
    ///
    /// Stuff and void pixels get instance 0; thing instances are renumbered per
    /// class from 1 in raster order of their first pixel.
    pub fn from_parts(
        semantic: &SemanticMap,
        instances: &InstanceMap,
        catalog: &ClassCatalog,
    ) -> Result<Self> {
        if !semantic.same_hw(instances) {
            return Err(Error::ShapeMismatch(format!(
                "semantic {}x{} vs instances {}x{}",
                semantic.height(),
                semantic.width(),
                instances.height(),
                instances.width()
            )));
        }
        semantic.validate(catalog)?;
        let mut per_class: HashMap<(u16, u16), u16> = HashMap::new();
        let mut counts = vec![0u16; catalog.len()];
        let mut data = Vec::with_capacity(semantic.pixel_count());
        for (&sem, &inst) in semantic.data().iter().zip(instances.data()) {
            if sem == VOID_ID {
                data.push(VOID_PANOPTIC);
            } else if !catalog.is_thing(sem) || inst == 0 {
                data.push(Self::encode(sem, 0));
            } else {
                let id = match per_class.get(&(sem, inst)) {
                    Some(&id) => id,
                    None => {
                        let next = counts[sem as usize] + 1;
                        if next as u32 >= PANOPTIC_DIVISOR {
                            return Err(Error::InvalidLabel(format!(
                                "class {sem} exceeds {} instances",
                                PANOPTIC_DIVISOR - 1
                            )));
                        }
                        counts[sem as usize] = next;
                        per_class.insert((sem, inst), next);
                        next
                    }
                };
                data.push(Self::encode(sem, id));
            }
        }
        Ok(Self(Grid::new(semantic.height(), semantic.width(), 1, data)?))
    }

    /// Checks the encoding against a catalog: known classes only, and
    /// instance 0 on void and stuff pixels.
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        for &entry in self.data() {
            let (sem, inst) = Self::decode(entry);
            if sem == VOID_ID {
                if inst != 0 {
                    return Err(Error::InvalidLabel(format!("void entry {entry} carries an instance")));
                }
                continue;
            }
            if sem as usize >= catalog.len() {
                return Err(Error::InvalidLabel(format!(
                    "semantic id {sem} outside catalog of {} classes",
                    catalog.len()
                )));
            }
            if inst != 0 && !catalog.is_thing(sem) {
                return Err(Error::InvalidLabel(format!(
                    "stuff class {sem} carries instance {inst}"
                )));
            }
        }
        Ok(())
    }
}

/// Patch-grid backbone features, `(row, col, channel)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    grid: Grid<f32>,
    patch_size: usize,
}

impl FeatureMap {
    pub fn new(grid: Grid<f32>, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidConfig("patch size must be positive".into()));
        }
        if let Some(idx) = grid.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { grid, patch_size })
    }

    pub fn from_data(
        height_patches: usize,
        width_patches: usize,
        channels: usize,
        data: Vec<f32>,
        patch_size: usize,
    ) -> Result<Self> {
        Self::new(Grid::new(height_patches, width_patches, channels, data)?, patch_size)
    }

    pub fn height_patches(&self) -> usize {
        self.grid.height()
    }

    pub fn width_patches(&self) -> usize {
        self.grid.width()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Pixel extent `(height, width)` covered by the patch grid.
    pub fn pixel_size(&self) -> (usize, usize) {
        (
            self.grid.height() * self.patch_size,
            self.grid.width() * self.patch_size,
        )
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.grid
    }

    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.crop(row0, col0, height, width)?,
            patch_size: self.patch_size,
        })
    }

    /// Bilinear resampling of the patch grid; the patch size is kept.
    pub fn resized(&self, height_patches: usize, width_patches: usize) -> Result<Self> {
        Ok(Self {
            grid: crate::resample::bilinear_resample(&self.grid, height_patches, width_patches)?,
            patch_size: self.patch_size,
        })
    }
}

impl HFlip for FeatureMap {
    fn hflip(&self) -> Self {
        Self {
            grid: self.grid.hflip(),
            patch_size: self.patch_size,
        }
    }
}

/// Per-pixel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Grid<f32>);

/// Tolerance on per-pixel probability sums.
pub const PROB_SUM_TOLERANCE: f32 = 1e-4;

impl ProbMap {
    /// Wraps a grid after checking that every pixel is a probability vector.
    pub fn new(grid: Grid<f32>) -> Result<Self> {
        if grid.channels() < 1 {
            return Err(Error::ShapeMismatch("probability map without classes".into()));
        }
        for (i, px) in grid.data().chunks_exact(grid.channels()).enumerate() {
            let sum: f32 = px.iter().sum();
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidLabel(format!(
                    "pixel {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(Self(grid))
    }

    pub(crate) fn from_grid_unchecked(grid: Grid<f32>) -> Self {
        Self(grid)
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.0
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        crate::resample::bilinear_resample(&self.0, height, width).map(Self)
    }

    /// Most probable class per pixel; ties go to the smaller class id.
    pub fn argmax(&self) -> SemanticMap {
        let c = self.0.channels();
        let data = self
            .0
            .data()
            .chunks_exact(c)
            .map(|px| {
                let mut best = 0;
                for k in 1..c {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect();
        SemanticMap(Grid {
            height: self.0.height(),
            width: self.0.width(),
            channels: 1,
            data,
        })
    }
}

impl Deref for ProbMap {
    type Target = Grid<f32>;

    fn deref(&self) -> &Grid<f32> {
        &self.0
    }
}

impl HFlip for ProbMap {
    fn hflip(&self) -> Self {
        Self(self.0.hflip())
    }
}

/// Per-pixel max-subtracted softmax over the channel axis.
///
/// # Panics
/// Panics if the grid has fewer than two channels.
pub fn softmax_channels(logits: &Grid<f32>) -> ProbMap {
    let c = logits.channels();
    assert!(c >= 2, "softmax needs at least two classes, got {c}");
    let mut data = logits.data().to_vec();
    for px in data.chunks_exact_mut(c) {
        let max = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in px.iter_mut() {
            *v *= inv;
        }
    }
    ProbMap(Grid {
        height: logits.height(),
        width: logits.width(),
        channels: c,
        data,
    })
}

/// Gradient with respect to the logits given a gradient with respect to the
/// softmax probabilities.
pub fn softmax_backward(probs: &ProbMap, grad_probs: &Grid<f32>) -> Grid<f32> {
    let c = probs.channels();
    let mut out = grad_probs.clone();
    for (g, p) in out.data_mut().chunks_exact_mut(c).zip(probs.data().chunks_exact(c)) {
        let dot: f32 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        for (gk, pk) in g.iter_mut().zip(p) {
            *gk = pk * (*gk - dot);
        }
    }
    out
}
