//! Trained heads to panoptic pseudo-labels.

use crate::boundary::binarize;
use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::fusion::{apply_void_mask, fuse, FusionConfig};
use crate::grid::{FeatureMap, Grid, PanopticMap};
use crate::metrics::{Evaluator, MiouUniverse, Summary};
use crate::mlp::MlpHead;
use crate::tta::{predict_multiscale, ScaleSet};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGenerator {
    pub semantic: MlpHead,
    pub boundary: MlpHead,
    pub semantic_scales: ScaleSet,
    pub boundary_scales: ScaleSet,
    pub fusion: FusionConfig,
}

impl LabelGenerator {
    /// Default scale sets and fusion thresholds.
    pub fn new(semantic: MlpHead, boundary: MlpHead) -> Self {
        Self {
            semantic,
            boundary,
            semantic_scales: ScaleSet::semantic_default(),
            boundary_scales: ScaleSet::boundary_default(),
            fusion: FusionConfig::default(),
        }
    }

    fn check(&self, feats: &FeatureMap, catalog: &ClassCatalog) -> Result<()> {
        if self.semantic.output_dim() != catalog.len() {
            return Err(Error::ShapeMismatch(format!(
                "semantic head predicts {} classes, catalog has {}",
                self.semantic.output_dim(),
                catalog.len()
            )));
        }
        if self.boundary.output_dim() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "boundary head predicts {} classes, expected 2",
                self.boundary.output_dim()
            )));
        }
        for head in [&self.semantic, &self.boundary] {
            if head.input_dim() != feats.channels() {
                return Err(Error::ChannelMismatch {
                    expected: head.input_dim(),
                    found: feats.channels(),
                });
            }
        }
        Ok(())
    }

    /// Pseudo-label at the feature map's pixel resolution. Pixels set in
    /// `void_mask` become void before fusion.
    pub fn generate(
        &self,
        feats: &FeatureMap,
        catalog: &ClassCatalog,
        void_mask: Option<&Grid<bool>>,
    ) -> Result<PanopticMap> {
        self.check(feats, catalog)?;
        let (h, w) = feats.pixel_size();
        let mut sem = predict_multiscale(&self.semantic, feats, &self.semantic_scales, h, w)?.argmax();
        if let Some(mask) = void_mask {
            sem = apply_void_mask(&sem, mask)?;
        }
        let probs = predict_multiscale(&self.boundary, feats, &self.boundary_scales, h, w)?;
        let boundary = binarize(&probs, h, w)?;
        fuse(&sem, &boundary, catalog, &self.fusion)
    }
}

/// Dataset-level metrics over aligned prediction and ground-truth lists.
pub fn evaluate(
    preds: &[PanopticMap],
    gts: &[PanopticMap],
    catalog: &ClassCatalog,
    universe: MiouUniverse,
) -> Result<Summary> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    let mut ev = Evaluator::new(catalog);
    for (p, g) in preds.iter().zip(gts) {
        ev.add(p, g)?;
    }
    Ok(ev.summary(universe))
}
