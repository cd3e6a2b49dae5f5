//! Training losses.
//!
//! The cross-entropy variants take softmax probabilities and return the
//! gradient with respect to the logits that produced them (`p - onehot`
//! scaled), which stays finite even where the log is clamped. The regression
//! losses return the gradient with respect to their prediction.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::grid::{BoundaryMap, Grid, ProbMap, SemanticMap, VOID_ID};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// Which pixels contribute to the bootstrapped cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HardMining {
    /// The `ceil(fraction * N)` pixels with the highest loss.
    TopFraction(f64),
    /// Pixels whose ground-truth posterior is below a fixed cutoff.
    ProbCutoff(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub mining: HardMining,
    /// Weight for pixels of small instances.
    pub small_instance_weight: f32,
    /// Instances with fewer pixels than this count as small.
    pub small_instance_area: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mining: HardMining::TopFraction(0.2),
            small_instance_weight: 3.0,
            small_instance_area: 64 * 64,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mining {
            HardMining::TopFraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::InvalidConfig(format!("top fraction {f} outside (0, 1]")))
            }
            HardMining::ProbCutoff(t) if !(t > 0.0 && t <= 1.0) => {
                return Err(Error::InvalidConfig(format!("probability cutoff {t} outside (0, 1]")))
            }
            _ => {}
        }
        if !(self.small_instance_weight >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "small-instance weight {} below 1",
                self.small_instance_weight
            )));
        }
        Ok(())
    }
}

/// Weights of the total second-stage loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub semantic: f64,
    pub center: f64,
    pub offset: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            semantic: 1.0,
            center: 200.0,
            offset: 0.01,
        }
    }
}

/// Per-pixel weights, each at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeightMap(Grid<f32>);

impl PixelWeightMap {
    pub fn new(grid: Grid<f32>) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::ShapeMismatch("weight map must be single-channel".into()));
        }
        if let Some(w) = grid.data().iter().find(|w| !(**w >= 1.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("pixel weight {w} below 1")));
        }
        Ok(Self(grid))
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1, 1.0))
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Grid<f32>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

/// Bootstrapped cross-entropy over the hardest pixels; void pixels are skipped.
pub fn bootstrapped_ce(probs: &ProbMap, target: &SemanticMap, cfg: &LossConfig) -> Result<LossOutput> {
    hard_mined_ce(probs, target, None, cfg)
}

/// Bootstrapped cross-entropy where each pixel's loss is scaled by its weight
/// before the hardest pixels are selected.
pub fn weighted_bootstrapped_ce(
    probs: &ProbMap,
    target: &SemanticMap,
    weights: &PixelWeightMap,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if !weights.grid().same_hw(target) {
        return Err(shape_err(
            "weights vs target",
            (weights.grid().height(), weights.grid().width()),
            (target.height(), target.width()),
        ));
    }
    hard_mined_ce(probs, target, Some(weights), cfg)
}

fn hard_mined_ce(
    probs: &ProbMap,
    target: &SemanticMap,
    weights: Option<&PixelWeightMap>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    if !probs.same_hw(target) {
        return Err(shape_err(
            "probabilities vs target",
            (probs.height(), probs.width()),
            (target.height(), target.width()),
        ));
    }
    let c = probs.classes();
    let p = probs.data();

    // (pixel, weighted loss, gt posterior)
    let mut candidates: Vec<(usize, f64, f64)> = Vec::with_capacity(target.pixel_count());
    for (i, &y) in target.data().iter().enumerate() {
        if y == VOID_ID {
            continue;
        }
        if y as usize >= c {
            return Err(Error::InvalidLabel(format!("class {y} outside {c} predicted classes")));
        }
        let py = p[i * c + y as usize] as f64;
        let w = weights.map_or(1.0, |w| w.grid().data()[i] as f64);
        candidates.push((i, -w * py.max(PROB_FLOOR).ln(), py));
    }
    if candidates.is_empty() {
        return Err(Error::EmptySelection);
    }

    let selected: &mut [(usize, f64, f64)] = match cfg.mining {
        HardMining::TopFraction(fraction) => {
            let n = candidates.len();
            let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
            // Highest loss first; ties go to the lower pixel index.
            let order = |a: &(usize, f64, f64), b: &(usize, f64, f64)| {
                b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
            };
            if k < n {
                candidates.select_nth_unstable_by(k - 1, order);
            }
            let head = &mut candidates[..k];
            head.sort_by(order);
            head
        }
        HardMining::ProbCutoff(cutoff) => {
            candidates.retain(|c| c.2 < cutoff);
            candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            &mut candidates[..]
        }
    };

    let mut grad = Grid::filled(probs.height(), probs.width(), c, 0.0f32);
    if selected.is_empty() {
        return Ok(LossOutput { loss: 0.0, grad });
    }
    let k = selected.len() as f64;
    // Summed in descending-loss order so the value does not depend on pixel order.
    let loss = selected.iter().map(|s| s.1).sum::<f64>() / k;
    let g = grad.data_mut();
    for &(i, _, _) in selected.iter() {
        let y = target.data()[i] as usize;
        let w = weights.map_or(1.0, |w| w.grid().data()[i] as f64);
        let scale = w / k;
        for j in 0..c {
            let onehot = if j == y { 1.0 } else { 0.0 };
            g[i * c + j] = (scale * (p[i * c + j] as f64 - onehot)) as f32;
        }
    }
    Ok(LossOutput { loss, grad })
}

/// Binary cross-entropy averaged over all pixels; channel 1 of `probs` is
/// the boundary probability.
pub fn binary_ce(probs: &ProbMap, target: &BoundaryMap) -> Result<LossOutput> {
    if probs.classes() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "binary cross-entropy needs 2 classes, got {}",
            probs.classes()
        )));
    }
    if !probs.same_hw(target) {
        return Err(shape_err(
            "probabilities vs boundary target",
            (probs.height(), probs.width()),
            (target.height(), target.width()),
        ));
    }
    let n = target.pixel_count();
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Grid::filled(probs.height(), probs.width(), 2, 0.0f32);
    let mut sum = 0.0f64;
    for (i, (&y, (px, g))) in target
        .data()
        .iter()
        .zip(probs.data().chunks_exact(2).zip(grad.data_mut().chunks_exact_mut(2)))
        .enumerate()
    {
        if y > 1 {
            return Err(Error::InvalidLabel(format!("boundary value {y} at pixel {i}")));
        }
        let p = px[1] as f64;
        let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let y = y as f64;
        sum += y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        let d = ((p - y) * inv_n) as f32;
        g[0] = -d;
        g[1] = d;
    }
    Ok(LossOutput { loss: -sum * inv_n, grad })
}

/// Mean squared error over every element.
pub fn mse(pred: &Grid<f32>, target: &Grid<f32>) -> Result<LossOutput> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len();
    let mut grad = pred.clone();
    if n == 0 {
        return Ok(LossOutput { loss: 0.0, grad });
    }
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0f64;
    for (g, (&p, &t)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let r = p as f64 - t as f64;
        sum += r * r;
        *g = (2.0 * r * inv_n) as f32;
    }
    Ok(LossOutput { loss: sum * inv_n, grad })
}

/// Mean absolute error over the channels of valid pixels. An empty mask
/// gives zero loss and zero gradient; the subgradient at zero residual is 0.
pub fn l1_masked(pred: &Grid<f32>, target: &Grid<f32>, valid: &Grid<bool>) -> Result<LossOutput> {
    if pred.shape() != target.shape() || !pred.same_hw(valid) || valid.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?}, target {:?}, mask {:?}",
            pred.shape(),
            target.shape(),
            valid.shape()
        )));
    }
    let c = pred.channels();
    let mut grad = Grid::filled(pred.height(), pred.width(), c, 0.0f32);
    let count = valid.data().iter().filter(|&&v| v).count() * c;
    if count == 0 {
        return Ok(LossOutput { loss: 0.0, grad });
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0f64;
    for (i, &ok) in valid.data().iter().enumerate() {
        if !ok {
            continue;
        }
        for k in 0..c {
            let idx = i * c + k;
            let r = pred.data()[idx] as f64 - target.data()[idx] as f64;
            sum += r.abs();
            if r != 0.0 {
                grad.data_mut()[idx] = (r.signum() * inv) as f32;
            }
        }
    }
    Ok(LossOutput { loss: sum * inv, grad })
}

/// The three second-stage loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub semantic: f64,
    pub center: f64,
    pub offset: f64,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.semantic * parts.semantic + weights.center * parts.center + weights.offset * parts.offset
}
