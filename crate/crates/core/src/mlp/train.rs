//! Few-shot training of a single head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boundary::{gt_boundary, max_pool};
use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::grid::{softmax_channels, BoundaryMap, FeatureMap, HFlip, PanopticMap, SemanticMap};
use crate::mlp::loss::{binary_ce, bootstrapped_ce, LossConfig};
use crate::mlp::{adam_step, sgd_step, AdamParams, AdamState, HeadGradients, HeadKind, MlpHead, OptimizerKind};

/// An annotated image: patch features and its pixel-resolution labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: FeatureMap,
    pub panoptic: PanopticMap,
}

impl TrainSample {
    pub fn new(features: FeatureMap, panoptic: PanopticMap) -> Result<Self> {
        let (h, w) = features.pixel_size();
        if (panoptic.height(), panoptic.width()) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "labels {}x{} do not cover a {}x{} patch grid of {h}x{w} pixels",
                panoptic.height(),
                panoptic.width(),
                features.height_patches(),
                features.width_patches()
            )));
        }
        Ok(Self { features, panoptic })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Passes over the annotated samples.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Crop size `(rows, cols)` in patches, clamped to each sample's grid.
    pub crop_patches: (usize, usize),
    pub flip_prob: f64,
    /// Widths of the three hidden layers.
    pub hidden: [usize; 3],
    /// `None` uses the head kind's default factor.
    pub upsample_factor: Option<usize>,
    pub loss: LossConfig,
    /// Extra crop draws when a boundary crop holds no thing pixel.
    pub max_crop_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            batch_size: 1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            crop_patches: (32, 32),
            flip_prob: 0.5,
            hidden: [256, 256, 256],
            upsample_factor: None,
            loss: LossConfig::default(),
            max_crop_retries: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("Adam moments need beta in [0, 1) and eps > 0".into()));
        }
        if self.crop_patches.0 == 0 || self.crop_patches.1 == 0 {
            return Err(Error::InvalidConfig("crop must be at least one patch".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidConfig(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.upsample_factor == Some(0) {
            return Err(Error::InvalidConfig("upsample factor must be positive".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: MlpHead,
    /// Mean batch loss per optimizer step.
    pub trace: Vec<f64>,
}

enum Target {
    Semantic(SemanticMap),
    Boundary(BoundaryMap),
}

/// A cropped and possibly flipped training view.
struct View {
    features: FeatureMap,
    target: Target,
}

/// Trains a fresh head of `kind` on the annotated samples.
///
/// Semantic heads output one logit per catalog class; boundary heads output 2.
/// Boundary targets come from the full-resolution instance map and are
/// max-pooled to the head's output grid.
pub fn train_few_shot(
    samples: &[TrainSample],
    kind: HeadKind,
    catalog: &ClassCatalog,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::EmptyInput("training samples"))?;
    let channels = first.features.channels();
    if let Some(s) = samples.iter().find(|s| s.features.channels() != channels) {
        return Err(Error::ChannelMismatch {
            expected: channels,
            found: s.features.channels(),
        });
    }
    for s in samples {
        s.panoptic.validate(catalog)?;
    }
    let out_dim = match kind {
        HeadKind::Semantic => catalog.len(),
        HeadKind::Boundary => 2,
    };
    let factor = cfg.upsample_factor.unwrap_or(kind.default_upsample());
    let [h1, h2, h3] = cfg.hidden;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = MlpHead::random([channels, h1, h2, h3, out_dim], factor, &mut rng)?;
    let mut adam = AdamState::new(&head);
    let adam_params = AdamParams {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };

    let boundaries: Vec<Option<BoundaryMap>> = samples
        .iter()
        .map(|s| (kind == HeadKind::Boundary).then(|| gt_boundary(&s.panoptic.instances())))
        .collect();

    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let views = batch
                .iter()
                .map(|&i| make_view(&samples[i], boundaries[i].as_ref(), factor, cfg, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let results = views
                .par_iter()
                .map(|v| view_gradients(&head, v, &cfg.loss))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = HeadGradients::zeros_like(&head);
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                grads.add_assign(g);
            }
            let inv = 1.0 / results.len() as f64;
            grads.scale(inv);
            trace.push(loss * inv);
            match cfg.optimizer {
                OptimizerKind::Adam => adam_step(&mut head, &grads, &mut adam, &adam_params),
                OptimizerKind::Sgd => sgd_step(&mut head, &grads, cfg.learning_rate),
            }
        }
    }
    Ok(TrainOutcome { head, trace })
}

fn make_view(
    sample: &TrainSample,
    boundary: Option<&BoundaryMap>,
    factor: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<View> {
    let feats = &sample.features;
    let ps = feats.patch_size();
    let (hp, wp) = (feats.height_patches(), feats.width_patches());
    let (ch, cw) = (cfg.crop_patches.0.min(hp), cfg.crop_patches.1.min(wp));

    let mut attempt = 0;
    let (r0, c0) = loop {
        let r0 = rng.gen_range(0..=hp - ch);
        let c0 = rng.gen_range(0..=wp - cw);
        let has_thing = boundary.is_none()
            || sample
                .panoptic
                .crop(r0 * ps, c0 * ps, ch * ps, cw * ps)?
                .data()
                .iter()
                .any(|&e| PanopticMap::decode(e).1 != 0);
        if has_thing || attempt >= cfg.max_crop_retries {
            break (r0, c0);
        }
        attempt += 1;
    };
    let flip = rng.gen_bool(cfg.flip_prob);

    let mut features = feats.crop(r0, c0, ch, cw)?;
    if flip {
        features = features.hflip();
    }
    let (out_h, out_w) = (ch * factor, cw * factor);
    let target = match boundary {
        None => {
            let mut sem = sample.panoptic.semantic().crop(r0 * ps, c0 * ps, ch * ps, cw * ps)?;
            if flip {
                sem = sem.hflip();
            }
            Target::Semantic(nearest_labels(&sem, out_h, out_w)?)
        }
        Some(b) => {
            let mut b = b.crop(r0 * ps, c0 * ps, ch * ps, cw * ps)?;
            if flip {
                b = b.hflip();
            }
            Target::Boundary(max_pool(&b, out_h, out_w)?)
        }
    };
    Ok(View { features, target })
}

/// Nearest-neighbour label resampling using pixel centres.
fn nearest_labels(map: &SemanticMap, out_h: usize, out_w: usize) -> Result<SemanticMap> {
    let (h, w) = (map.height(), map.width());
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let cols: Vec<usize> = (0..out_w).map(|j| (2 * j + 1) * w / (2 * out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let r = (2 * i + 1) * h / (2 * out_h);
        data.extend(cols.iter().map(|&c| map.data()[r * w + c]));
    }
    SemanticMap::new(out_h, out_w, data)
}

fn view_gradients(head: &MlpHead, view: &View, loss_cfg: &LossConfig) -> Result<(f64, HeadGradients)> {
    let logits = head.forward(&view.features)?;
    let probs = softmax_channels(&logits);
    let out = match &view.target {
        Target::Semantic(t) => match bootstrapped_ce(&probs, t, loss_cfg) {
            Err(Error::EmptySelection) => return Ok((0.0, HeadGradients::zeros_like(head))),
            other => other?,
        },
        Target::Boundary(t) => binary_ce(&probs, t)?,
    };
    Ok((out.loss, head.backward(&view.features, &out.grad)?))
}
