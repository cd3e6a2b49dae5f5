//! Per-pixel MLP heads over patch features.
//!
//! A head is four affine layers with rectifiers between them. The first layer
//! runs at patch resolution; its output is bilinearly upsampled by the head's
//! factor before the remaining layers run per output pixel. Both steps are
//! linear, so this equals upsampling the features first.

mod batch;
mod checkpoint;
mod gemm;
pub mod loss;
mod optim;
mod train;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{FeatureMap, Grid};
use crate::resample::Resampler;
use gemm::gemm;

pub use batch::{build_mixed_batch, BatchSpec};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{adam_step, sgd_step, AdamParams, AdamState, OptimizerKind};
pub use train::{train_few_shot, TrainConfig, TrainOutcome, TrainSample};

/// Affine layers per head.
pub const LAYER_COUNT: usize = 4;

/// Output pixels processed together in one forward/backward block.
const CHUNK_PIXELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Semantic,
    Boundary,
}

impl HeadKind {
    pub fn default_upsample(self) -> usize {
        match self {
            HeadKind::Semantic => 14,
            HeadKind::Boundary => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Semantic => "semantic",
            HeadKind::Boundary => "boundary",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(HeadKind::Semantic),
            "boundary" => Ok(HeadKind::Boundary),
            other => Err(Error::InvalidConfig(format!("unknown head kind {other:?}"))),
        }
    }
}

/// One affine layer. `weight` is stored input-major: `weight[i * out_dim + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense {in_dim}->{out_dim} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut d = Self::zeros(dim, dim);
        for i in 0..dim {
            d.weight[i * dim + i] = 1.0;
        }
        d
    }

    /// Uniform init in `[-b, b]` with `b = sqrt(gain / fan_in)`; zero biases.
    pub fn uniform(in_dim: usize, out_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = (gain / in_dim as f64).sqrt() as f32;
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f32] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    /// Weights and biases borrowed together.
    pub fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.weight, &mut self.bias)
    }

    /// `out[p, :] = bias + input[p, :] * W` for `rows` inputs.
    fn apply(&self, input: &[f32], rows: usize, out: &mut [f32]) {
        for row in out[..rows * self.out_dim].chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias);
        }
        gemm(rows, self.in_dim, self.out_dim, input, false, &self.weight, false, 1.0, out);
    }
}

/// Parameter gradients with the same layout as the head, in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl HeadGradients {
    pub fn zeros_like(head: &MlpHead) -> Self {
        Self {
            weights: head.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: head.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &HeadGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Every gradient value, layer by layer (weights then biases).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    layers: Vec<Dense>,
    upsample_factor: usize,
}

/// Per-block activations kept for the backward pass.
struct ChunkActs {
    a1: Vec<f32>,
    a2: Vec<f32>,
    a3: Vec<f32>,
}

impl MlpHead {
    pub fn from_layers(layers: Vec<Dense>, upsample_factor: usize) -> Result<Self> {
        if layers.len() != LAYER_COUNT {
            return Err(Error::InvalidConfig(format!(
                "a head has exactly {LAYER_COUNT} layers, got {}",
                layers.len()
            )));
        }
        if upsample_factor == 0 {
            return Err(Error::InvalidConfig("upsample factor must be positive".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} feeds input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if layers.iter().any(|l| l.in_dim == 0 || l.out_dim == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(Self {
            layers,
            upsample_factor,
        })
    }

    /// Fan-in scaled uniform initialization: He bounds on rectified layers,
    /// LeCun bounds on the output layer.
    pub fn random(dims: [usize; LAYER_COUNT + 1], upsample_factor: usize, rng: &mut impl Rng) -> Result<Self> {
        let layers = (0..LAYER_COUNT)
            .map(|i| {
                let gain = if i + 1 == LAYER_COUNT { 3.0 } else { 6.0 };
                Dense::uniform(dims[i].max(1), dims[i + 1], gain, rng)
            })
            .collect();
        Self::from_layers(layers, upsample_factor)
    }

    pub fn zeros(dims: [usize; LAYER_COUNT + 1], upsample_factor: usize) -> Result<Self> {
        let layers = (0..LAYER_COUNT).map(|i| Dense::zeros(dims[i], dims[i + 1])).collect();
        Self::from_layers(layers, upsample_factor)
    }

    pub fn dims(&self) -> [usize; LAYER_COUNT + 1] {
        let mut d = [0; LAYER_COUNT + 1];
        d[0] = self.layers[0].in_dim;
        for (i, l) in self.layers.iter().enumerate() {
            d[i + 1] = l.out_dim;
        }
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[LAYER_COUNT - 1].out_dim
    }

    pub fn upsample_factor(&self) -> usize {
        self.upsample_factor
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Output grid size for a patch grid.
    pub fn output_size(&self, feats: &FeatureMap) -> (usize, usize) {
        (
            feats.height_patches() * self.upsample_factor,
            feats.width_patches() * self.upsample_factor,
        )
    }

    fn check_input(&self, feats: &FeatureMap) -> Result<()> {
        if feats.channels() != self.input_dim() {
            return Err(Error::ChannelMismatch {
                expected: self.input_dim(),
                found: feats.channels(),
            });
        }
        if feats.height_patches() == 0 || feats.width_patches() == 0 {
            return Err(Error::EmptyInput("feature map"));
        }
        Ok(())
    }

    fn first_layer(&self, feats: &FeatureMap) -> Vec<f32> {
        let n = feats.height_patches() * feats.width_patches();
        let mut z1 = vec![0.0; n * self.layers[0].out_dim];
        self.layers[0].apply(feats.grid().data(), n, &mut z1);
        z1
    }

    fn chunk_rows(out_w: usize) -> usize {
        (CHUNK_PIXELS / out_w).max(1)
    }

    /// Runs layers 2..4 for output rows `r0..r1`, writing logits into `out`.
    fn chunk_forward(&self, z1: &[f32], rs: &Resampler, r0: usize, r1: usize, out: &mut [f32]) -> ChunkActs {
        let [_, h1, h2, h3, _] = self.dims();
        let p = (r1 - r0) * rs.out_w();
        let mut a1 = vec![0.0; p * h1];
        rs.apply_rows(z1, h1, r0, r1, &mut a1);
        relu(&mut a1);
        let mut a2 = vec![0.0; p * h2];
        self.layers[1].apply(&a1, p, &mut a2);
        relu(&mut a2);
        let mut a3 = vec![0.0; p * h3];
        self.layers[2].apply(&a2, p, &mut a3);
        relu(&mut a3);
        self.layers[3].apply(&a3, p, out);
        ChunkActs { a1, a2, a3 }
    }

    /// Logits at `(h_patches * factor, w_patches * factor, n)`.
    pub fn forward(&self, feats: &FeatureMap) -> Result<Grid<f32>> {
        self.check_input(feats)?;
        let (out_h, out_w) = self.output_size(feats);
        let n = self.output_dim();
        let z1 = self.first_layer(feats);
        let rs = Resampler::new(feats.height_patches(), feats.width_patches(), out_h, out_w);
        let mut logits = vec![0.0f32; out_h * out_w * n];
        let step = Self::chunk_rows(out_w);
        for r0 in (0..out_h).step_by(step) {
            let r1 = (r0 + step).min(out_h);
            let out = &mut logits[r0 * out_w * n..r1 * out_w * n];
            self.chunk_forward(&z1, &rs, r0, r1, out);
        }
        Grid::new(out_h, out_w, n, logits)
    }

    /// Parameter gradients of a scalar loss given its gradient with respect
    /// to the logits of [`MlpHead::forward`]. Activations are recomputed
    /// block by block; blocks are summed in a fixed order in 64-bit.
    pub fn backward(&self, feats: &FeatureMap, grad_logits: &Grid<f32>) -> Result<HeadGradients> {
        self.check_input(feats)?;
        let (out_h, out_w) = self.output_size(feats);
        let [c, h1, h2, h3, n] = self.dims();
        if grad_logits.shape() != (out_h, out_w, n) {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient {:?} vs head output {:?}",
                grad_logits.shape(),
                (out_h, out_w, n)
            )));
        }
        let (hp, wp) = (feats.height_patches(), feats.width_patches());
        let z1 = self.first_layer(feats);
        let rs = Resampler::new(hp, wp, out_h, out_w);
        let mut grads = HeadGradients::zeros_like(self);
        let mut dz1 = vec![0.0f64; hp * wp * h1];
        let mut scratch_logits = Vec::new();
        let mut part = Vec::new();

        let step = Self::chunk_rows(out_w);
        for r0 in (0..out_h).step_by(step) {
            let r1 = (r0 + step).min(out_h);
            let p = (r1 - r0) * out_w;
            scratch_logits.resize(p * n, 0.0);
            let acts = self.chunk_forward(&z1, &rs, r0, r1, &mut scratch_logits);
            let g4 = &grad_logits.data()[r0 * out_w * n..r1 * out_w * n];

            // Layer 4.
            accumulate_layer(&mut grads, 3, &acts.a3, g4, p, h3, n, &mut part);
            let mut g3 = vec![0.0f32; p * h3];
            gemm(p, n, h3, g4, false, &self.layers[3].weight, true, 0.0, &mut g3);
            relu_mask(&mut g3, &acts.a3);

            // Layer 3.
            accumulate_layer(&mut grads, 2, &acts.a2, &g3, p, h2, h3, &mut part);
            let mut g2 = vec![0.0f32; p * h2];
            gemm(p, h3, h2, &g3, false, &self.layers[2].weight, true, 0.0, &mut g2);
            relu_mask(&mut g2, &acts.a2);

            // Layer 2.
            accumulate_layer(&mut grads, 1, &acts.a1, &g2, p, h1, h2, &mut part);
            let mut gu = vec![0.0f32; p * h1];
            gemm(p, h2, h1, &g2, false, &self.layers[1].weight, true, 0.0, &mut gu);
            relu_mask(&mut gu, &acts.a1);

            rs.scatter_rows(&gu, h1, r0, r1, &mut dz1);
        }

        // Layer 1 at patch resolution.
        let x = feats.grid().data();
        let dw1 = &mut grads.weights[0];
        let db1 = &mut grads.biases[0];
        for (xp, gp) in x.chunks_exact(c).zip(dz1.chunks_exact(h1)) {
            for (i, &xi) in xp.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let xi = xi as f64;
                let row = &mut dw1[i * h1..(i + 1) * h1];
                for (w, g) in row.iter_mut().zip(gp) {
                    *w += xi * g;
                }
            }
            for (b, g) in db1.iter_mut().zip(gp) {
                *b += g;
            }
        }
        Ok(grads)
    }
}

/// Adds `input^T * grad` and the column sums of `grad` to layer `layer`.
#[allow(clippy::too_many_arguments)]
fn accumulate_layer(
    grads: &mut HeadGradients,
    layer: usize,
    input: &[f32],
    grad: &[f32],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    part: &mut Vec<f32>,
) {
    part.resize(in_dim * out_dim, 0.0);
    gemm(in_dim, rows, out_dim, input, true, grad, false, 0.0, part);
    for (acc, v) in grads.weights[layer].iter_mut().zip(part.iter()) {
        *acc += *v as f64;
    }
    let bias = &mut grads.biases[layer];
    for row in grad.chunks_exact(out_dim) {
        for (acc, v) in bias.iter_mut().zip(row) {
            *acc += *v as f64;
        }
    }
}

#[inline]
fn relu(v: &mut [f32]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Zeroes gradient entries whose rectified activation is not positive.
#[inline]
fn relu_mask(grad: &mut [f32], act: &[f32]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
