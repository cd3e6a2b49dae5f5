//! Acceptance criteria as plain functions. The acceptance runner calls them
//! at full size; the integration tests call them with smaller case counts.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt;
use std::time::{Duration, Instant};

use panlabel::boundary::gt_boundary;
use panlabel::bottomup::{encode_targets, fuse_bottomup, CenterConfig, TargetConfig};
use panlabel::fusion::{connected_components, relabel_panoptic, Connectivity};
use panlabel::io::encode_labels;
use panlabel::metrics::{panoptic_quality, MiouUniverse, Summary};
use panlabel::mlp::loss::{
    binary_ce, bootstrapped_ce, l1_masked, mse, weighted_bootstrapped_ce, HardMining, LossConfig, PixelWeightMap,
};
use panlabel::mlp::{train_few_shot, TrainConfig, TrainSample};
use panlabel::pipeline::evaluate;
use panlabel::synth::{gen_dataset, gen_scene, DatasetCounts, Scene, SceneConfig, Shape};
use panlabel::tta::ScaleSet;
use panlabel::{
    softmax_channels, BoundaryMap, ClassCatalog, FeatureMap, Grid, HeadKind, LabelGenerator, MlpHead, PanopticMap,
    Role, SemanticMap, VOID_ID,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.1} s)", self.detail, self.elapsed.as_secs_f64())
    }
}

fn timed(run: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = run();
    Outcome {
        pass,
        detail,
        elapsed: start.elapsed(),
    }
}

fn normal_grid(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Grid<f32> {
    Grid::from_fn(h, w, c, |_, _, _| StandardNormal.sample(rng))
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

// ---------------------------------------------------------------------------
// Gradient check

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bootstrapped,
    Weighted,
    Binary,
    Mse,
    L1,
}

pub const LOSS_KINDS: [LossKind; 5] = [LossKind::Bootstrapped, LossKind::Weighted, LossKind::Binary, LossKind::Mse, LossKind::L1];

/// Smallest denominator of the relative error. Gradients below it are
/// compared on this absolute scale, since the analytic pass carries its
/// activations in 32-bit.
pub const GRAD_SCALE_FLOOR: f64 = 1e-6;

pub const FD_STEP: f64 = 1e-3;

struct Problem {
    kind: LossKind,
    head: MlpHead,
    feats: FeatureMap,
    classes: Vec<u16>,
    weights: Vec<f64>,
    boundary: Vec<u8>,
    target: Vec<f64>,
    valid: Vec<bool>,
}

const TOP: (usize, usize) = (1, 5);

impl Problem {
    fn new(kind: LossKind, seed: u64) -> Self {
        let mut r = rng(seed);
        let n = if kind == LossKind::Binary { 2 } else { 3 };
        let mut head = MlpHead::random([8, 8, 8, 8, n], 2, &mut r).unwrap();
        // Initial biases are zero, which parks dead pixels exactly on a
        // rectifier kink; check at a generic point instead.
        for layer in head.layers_mut() {
            layer.bias_mut().iter_mut().for_each(|b| *b = r.gen_range(-0.5..0.5));
        }
        let feats = FeatureMap::new(normal_grid(&mut r, 4, 4, 8), 14).unwrap();
        let px = 8 * 8;
        Self {
            kind,
            head,
            feats,
            classes: (0..px).map(|_| if r.gen_bool(0.1) { VOID_ID } else { r.gen_range(0..3) }).collect(),
            weights: (0..px).map(|_| if r.gen_bool(0.3) { 3.0 } else { 1.0 }).collect(),
            boundary: (0..px).map(|_| r.gen_range(0..2)).collect(),
            target: (0..px * n).map(|_| r.gen_range(-1.0..1.0)).collect(),
            valid: (0..px).map(|_| r.gen_bool(0.7)).collect(),
        }
    }

    fn analytic(&self) -> Vec<f64> {
        let logits = self.head.forward(&self.feats).unwrap();
        let (h, w, c) = logits.shape();
        let cfg = LossConfig {
            mining: HardMining::TopFraction(TOP.0 as f64 / TOP.1 as f64),
            ..LossConfig::default()
        };
        let sem = || SemanticMap::new(h, w, self.classes.clone()).unwrap();
        let grad = match self.kind {
            LossKind::Bootstrapped => bootstrapped_ce(&softmax_channels(&logits), &sem(), &cfg).unwrap().grad,
            LossKind::Weighted => {
                let wm = PixelWeightMap::new(Grid::new(h, w, 1, self.weights.iter().map(|&v| v as f32).collect()).unwrap())
                    .unwrap();
                weighted_bootstrapped_ce(&softmax_channels(&logits), &sem(), &wm, &cfg).unwrap().grad
            }
            LossKind::Binary => {
                let t = BoundaryMap::new(h, w, self.boundary.clone()).unwrap();
                binary_ce(&softmax_channels(&logits), &t).unwrap().grad
            }
            LossKind::Mse => {
                let t = Grid::new(h, w, c, self.target.iter().map(|&v| v as f32).collect()).unwrap();
                mse(&logits, &t).unwrap().grad
            }
            LossKind::L1 => {
                let t = Grid::new(h, w, c, self.target.iter().map(|&v| v as f32).collect()).unwrap();
                let v = Grid::new(h, w, 1, self.valid.clone()).unwrap();
                l1_masked(&logits, &t, &v).unwrap().grad
            }
        };
        self.head.backward(&self.feats, &grad).unwrap().flat()
    }

    /// Oracle loss and a signature of every non-smooth choice made on the way.
    fn oracle(&self, p: &Params) -> (f64, Vec<bool>, BTreeSet<usize>) {
        let f = forward(p, &to_f64(self.feats.grid().data()), 4, 4);
        let signs: Vec<bool> = f.pre.iter().map(|&z| z > 0.0).collect();
        let n = p.dims[LAYER_COUNT];
        let mut set = BTreeSet::new();
        let loss = match self.kind {
            LossKind::Bootstrapped | LossKind::Weighted => {
                let probs = softmax(&f.logits, n);
                let w = (self.kind == LossKind::Weighted).then_some(self.weights.as_slice());
                set = hard_set(&probs, n, &self.classes, w, TOP);
                super::bootstrapped_ce(&probs, n, &self.classes, w, TOP)
            }
            LossKind::Binary => super::binary_ce(&softmax(&f.logits, n), &self.boundary),
            LossKind::Mse => super::mse(&f.logits, &self.target),
            LossKind::L1 => {
                // The sign pattern of the residuals is a non-smooth choice too.
                set = f
                    .logits
                    .iter()
                    .zip(&self.target)
                    .enumerate()
                    .filter(|(_, (a, b))| a > b)
                    .map(|(i, _)| i)
                    .collect();
                super::l1_masked(&f.logits, &self.target, &self.valid, n)
            }
        };
        (loss, signs, set)
    }
}

pub struct GradStats {
    pub max_rel: f64,
    pub params: usize,
    /// Parameters whose step of [`FD_STEP`] crossed a non-smooth point and
    /// were differenced with a smaller step.
    pub refined: usize,
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter of one problem.
pub fn grad_check_one(kind: LossKind, seed: u64) -> GradStats {
    let prob = Problem::new(kind, seed);
    let analytic = prob.analytic();
    let base = Params::of(&prob.head);
    let (_, signs0, set0) = prob.oracle(&base);
    let mut stats = GradStats {
        max_rel: 0.0,
        params: analytic.len(),
        refined: 0,
    };
    for (j, &a) in analytic.iter().enumerate() {
        let mut h = FD_STEP;
        let numeric = loop {
            let mut plus = base.clone();
            plus.flat[j] += h;
            let mut minus = base.clone();
            minus.flat[j] -= h;
            let (lp, sp, setp) = prob.oracle(&plus);
            let (lm, sm, setm) = prob.oracle(&minus);
            let smooth = sp == signs0 && sm == signs0 && setp == set0 && setm == set0;
            if smooth || h < 1e-7 {
                break (lp - lm) / (2.0 * h);
            }
            if h == FD_STEP {
                stats.refined += 1;
            }
            h /= 10.0;
        };
        let diff = (a - numeric).abs();
        let rel = diff / a.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR);
        stats.max_rel = stats.max_rel.max(rel);
    }
    stats
}

pub fn gradient_check(seeds: u64, budget: Duration) -> Outcome {
    timed(|| {
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        let (mut params, mut refined) = (0, 0);
        for seed in 0..seeds {
            for kind in LOSS_KINDS {
                let s = grad_check_one(kind, seed);
                worst = worst.max(s.max_rel);
                params += s.params;
                refined += s.refined;
            }
        }
        let elapsed = start.elapsed();
        (
            worst < 1e-3 && elapsed < budget,
            format!(
                "max relative error {worst:.2e} over {params} parameter gradients, {seeds} seeds x 5 losses, \
                 {refined} refined steps, {:.1} s (limit {} s)",
                elapsed.as_secs_f64(),
                budget.as_secs()
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Loss oracle

pub fn loss_oracle(cases: u64) -> Outcome {
    timed(|| {
        let fractions = [(1usize, 5usize), (1, 2), (3, 10), (1, 1), (1, 3)];
        let mut worst: f64 = 0.0;
        let mut exact = true;
        for seed in 0..cases {
            let mut r = rng(1_000_000 + seed);
            let (h, w, c) = (r.gen_range(1..=12), r.gen_range(1..=12), r.gen_range(2..=6));
            let scale = r.gen_range(0.1..6.0);
            let logits = Grid::from_fn(h, w, c, |_, _, _| scale * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut r));
            let probs = softmax_channels(&logits);
            let mut classes: Vec<u16> = (0..h * w).map(|_| if r.gen_bool(0.15) { VOID_ID } else { r.gen_range(0..c as u16) }).collect();
            classes[r.gen_range(0..h * w)] = r.gen_range(0..c as u16);
            let weights: Vec<f32> = (0..h * w).map(|_| [1.0, 1.0, 3.0, 2.5][r.gen_range(0..4)]).collect();
            let frac = fractions[r.gen_range(0..fractions.len())];
            let cfg = LossConfig {
                mining: HardMining::TopFraction(frac.0 as f64 / frac.1 as f64),
                ..LossConfig::default()
            };
            let sem = SemanticMap::new(h, w, classes.clone()).unwrap();
            let p64 = to_f64(probs.data());
            let w64 = to_f64(&weights);

            let plain = bootstrapped_ce(&probs, &sem, &cfg).unwrap();
            worst = worst.max((plain.loss - bootstrapped_ce_oracle(&p64, c, &classes, None, frac)).abs());
            let wm = PixelWeightMap::new(Grid::new(h, w, 1, weights).unwrap()).unwrap();
            let weighted = weighted_bootstrapped_ce(&probs, &sem, &wm, &cfg).unwrap();
            worst = worst.max((weighted.loss - bootstrapped_ce_oracle(&p64, c, &classes, Some(&w64), frac)).abs());

            let unit = weighted_bootstrapped_ce(&probs, &sem, &PixelWeightMap::ones(h, w), &cfg).unwrap();
            exact &= unit.loss.to_bits() == plain.loss.to_bits() && unit.grad == plain.grad;
        }
        (
            worst <= 1e-6 && exact,
            format!(
                "max |loss - oracle| {worst:.2e} over {cases} inputs x 2 losses; unit weights reproduce the plain loss {}",
                if exact { "bit for bit" } else { "NOT exactly" }
            ),
        )
    })
}

fn bootstrapped_ce_oracle(p: &[f64], c: usize, t: &[u16], w: Option<&[f64]>, frac: (usize, usize)) -> f64 {
    super::bootstrapped_ce(p, c, t, w, frac)
}

// ---------------------------------------------------------------------------
// Connected components

pub fn cca_oracle(cases: u64) -> Outcome {
    timed(|| {
        let mut mismatches = 0;
        for seed in 0..cases {
            let mut r = rng(2_000_000 + seed);
            let mask = random_mask(&mut r, 32, 32);
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let got: BTreeSet<BTreeSet<usize>> = connected_components(&mask, conn)
                    .into_iter()
                    .map(|c| c.pixels.into_iter().collect())
                    .collect();
                if got != flood_fill(&mask, conn) {
                    mismatches += 1;
                }
            }
        }
        (mismatches == 0, format!("{mismatches} mismatches over {cases} masks x 2 connectivities"))
    })
}

// ---------------------------------------------------------------------------
// Panoptic quality

pub fn pq_oracle_check(cases: u64) -> Outcome {
    timed(|| {
        let cat = ClassCatalog::synthetic_default();
        let (mut worst, mut product, mut identity_ok, mut counts_ok) = (0.0f64, 0.0f64, true, true);
        let mut matched = 0;
        for seed in 0..cases {
            let mut r = rng(3_000_000 + seed);
            let gt = random_panoptic(&mut r, 16, 16, &cat, 5);
            let pred = perturb_panoptic(&mut r, &gt, &cat);
            let got = panoptic_quality(&pred, &gt, &cat).unwrap();
            let want = pq_oracle(&pred, &gt, &cat);
            for cls in &got.classes {
                let c = &cls.counts;
                product = product.max((c.pq() - c.sq() * c.rq()).abs());
                match want.classes.get(&cls.class) {
                    Some(&(tp, fp, fn_, _)) => {
                        counts_ok &= (c.tp, c.fp, c.fn_) == (tp, fp, fn_);
                        let o = want.class_pq(cls.class);
                        worst = worst.max((c.pq() - o.pq).abs()).max((c.sq() - o.sq).abs()).max((c.rq() - o.rq).abs());
                        matched += tp;
                    }
                    None => counts_ok &= c.is_empty(),
                }
            }
            for (agg, keep) in [
                (got.all, Box::new(|_| true) as Box<dyn Fn(u16) -> bool>),
                (got.things, Box::new(|k| cat.is_thing(k))),
                (got.stuff, Box::new(|k| cat.is_stuff(k))),
            ] {
                let o = want.mean(keep);
                worst = worst.max((agg.pq - o.pq).abs()).max((agg.sq - o.sq).abs()).max((agg.rq - o.rq).abs());
            }
            let same = panoptic_quality(&gt, &gt, &cat).unwrap();
            identity_ok &= same.all.pq == 1.0 && same.all.sq == 1.0 && same.all.rq == 1.0;
            identity_ok &= same.classes.iter().filter(|c| !c.counts.is_empty()).all(|c| c.counts.pq() == 1.0);
        }
        (
            worst <= 1e-9 && product <= 1e-12 && identity_ok && counts_ok,
            format!(
                "max |PQ/SQ/RQ - oracle| {worst:.2e}, max |PQ - SQ*RQ| {product:.2e}, counts {}, pred==gt -> 1.0 {}, \
                 {matched} matches over {cases} pairs",
                if counts_ok { "equal" } else { "DIFFER" },
                if identity_ok { "always" } else { "NOT always" }
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Boundary rule

pub fn boundary_oracle(cases: u64) -> Outcome {
    timed(|| {
        let mut mismatches = 0;
        let mut marked = 0usize;
        for seed in 0..cases {
            let mut r = rng(4_000_000 + seed);
            let (h, w) = (r.gen_range(1..=24), r.gen_range(1..=24));
            let inst = random_instances(&mut r, h, w, 5);
            let got = gt_boundary(&inst);
            let want = boundary_scan(&inst);
            marked += want.iter().filter(|&&v| v == 1).count();
            if got.data() != want.as_slice() {
                mismatches += 1;
            }
        }
        (
            mismatches == 0,
            format!("{mismatches} mismatches over {cases} instance maps ({marked} boundary pixels)"),
        )
    })
}

// ---------------------------------------------------------------------------
// Bottom-up round trip

pub fn round_trip_config(seed: u64) -> SceneConfig {
    SceneConfig {
        height_patches: 20,
        width_patches: 20,
        channels: 8,
        instances: (2, 4),
        instance_patches: (2, 4),
        min_gap_px: 24,
        shape: if seed.is_multiple_of(2) { Shape::Rectangle } else { Shape::Ellipse },
        max_attempts: 1000,
        ..SceneConfig::default()
    }
}

pub fn bottomup_round_trip(cases: u64) -> Outcome {
    timed(|| {
        let cat = ClassCatalog::synthetic_default();
        let mut failures = Vec::new();
        let mut instances = 0;
        for seed in 0..cases {
            let scene = match gen_scene(5_000_000 + seed, &round_trip_config(seed), &cat) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("scene {seed}: {e}"));
                    continue;
                }
            };
            let pan = scene.panoptic;
            instances += pan.data().iter().filter(|e| *e % 1000 != 0).copied().collect::<BTreeSet<_>>().len();
            let targets = encode_targets(&pan, &cat, &TargetConfig::default()).unwrap();
            let got = fuse_bottomup(&pan.semantic(), &targets.center, &targets.offset, &cat, &CenterConfig::default())
                .and_then(|m| relabel_panoptic(&m, &cat));
            match got {
                Ok(m) if m == pan => {}
                Ok(m) => {
                    let wrong = m.data().iter().zip(pan.data()).filter(|(a, b)| a != b).count();
                    failures.push(format!("scene {seed}: {wrong} pixels differ"));
                }
                Err(e) => failures.push(format!("scene {seed}: {e}")),
            }
        }
        (
            failures.is_empty(),
            format!(
                "{} of {cases} scenes recovered exactly ({instances} instances){}",
                cases as usize - failures.len(),
                failures.first().map(|f| format!("; first failure {f}")).unwrap_or_default()
            ),
        )
    })
}

// ---------------------------------------------------------------------------
// Pipeline runs

/// Training settings for desk-scale runs: narrow heads, 16-patch crops.
pub fn desk_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden: [32; 3],
        crop_patches: (16, 16),
        seed,
        ..TrainConfig::default()
    }
}

pub fn samples(data: &[(Role, Scene)], role: Role) -> Vec<TrainSample> {
    data.iter()
        .filter(|(r, _)| *r == role)
        .map(|(_, s)| TrainSample::new(s.features.clone(), s.panoptic.clone()).unwrap())
        .collect()
}

pub fn train_generator(train: &[TrainSample], cat: &ClassCatalog, cfg: &TrainConfig) -> LabelGenerator {
    let sem = train_few_shot(train, HeadKind::Semantic, cat, cfg).unwrap().head;
    let bnd = train_few_shot(train, HeadKind::Boundary, cat, cfg).unwrap().head;
    LabelGenerator::new(sem, bnd)
}

pub fn with_scales(g: &LabelGenerator, multiscale: bool) -> LabelGenerator {
    let mut g = g.clone();
    if multiscale {
        g.semantic_scales = ScaleSet::semantic_default();
        g.boundary_scales = ScaleSet::boundary_default();
    } else {
        g.semantic_scales = ScaleSet::single();
        g.boundary_scales = ScaleSet::single();
    }
    g
}

/// Labels every scene with `role` and scores them against their ground truth.
pub fn label_and_score(g: &LabelGenerator, data: &[(Role, Scene)], role: Role, cat: &ClassCatalog) -> (Vec<PanopticMap>, Summary) {
    let scenes: Vec<&Scene> = data.iter().filter(|(r, _)| *r == role).map(|(_, s)| s).collect();
    let preds: Vec<PanopticMap> = scenes.iter().map(|s| g.generate(&s.features, cat, None).unwrap()).collect();
    let gts: Vec<PanopticMap> = scenes.iter().map(|s| s.panoptic.clone()).collect();
    let summary = evaluate(&preds, &gts, cat, MiouUniverse::Present).unwrap();
    (preds, summary)
}

pub struct E2eSize {
    pub counts: DatasetCounts,
    pub scene: SceneConfig,
    pub epochs: usize,
}

impl E2eSize {
    pub fn full() -> Self {
        Self {
            counts: DatasetCounts {
                gt: 10,
                unlabeled: 50,
                holdout: 20,
            },
            scene: SceneConfig {
                height_patches: 64,
                width_patches: 64,
                channels: 32,
                noise_sigma: 0.5,
                ..SceneConfig::default()
            },
            epochs: 60,
        }
    }
}

pub fn end_to_end(size: &E2eSize, min_miou: f64, min_pq: f64, train_budget: Duration) -> Outcome {
    timed(|| {
        let cat = ClassCatalog::synthetic_default();
        let data = gen_dataset(11, size.counts, &size.scene, &cat).unwrap();
        let train = samples(&data, Role::Gt);
        let start = Instant::now();
        let g = train_generator(&train, &cat, &desk_train_config(size.epochs, 0));
        let train_time = start.elapsed();
        let (_, s) = label_and_score(&with_scales(&g, true), &data, Role::Unlabeled, &cat);
        (
            s.miou >= min_miou && s.pq.all.pq >= min_pq && train_time <= train_budget,
            format!(
                "{} pseudo-labels: Acc {:.4} mIoU {:.4} (>= {min_miou}) PQ {:.4} (>= {min_pq}) SQ {:.4} RQ {:.4}; \
                 training {:.1} s (limit {} s)",
                size.counts.unlabeled,
                s.accuracy,
                s.miou,
                s.pq.all.pq,
                s.pq.all.sq,
                s.pq.all.rq,
                train_time.as_secs_f64(),
                train_budget.as_secs()
            ),
        )
    })
}

/// Scene layout for the repeated-seed criteria: a quarter of the full area.
pub fn small_scene(noise: f32) -> SceneConfig {
    SceneConfig {
        height_patches: 32,
        width_patches: 32,
        channels: 32,
        noise_sigma: noise,
        instance_patches: (3, 8),
        ..SceneConfig::default()
    }
}

/// Holdout PQ with `k` annotated scenes trained for `steps` optimizer steps.
fn pq_with_k(seed: u64, k: usize, steps: usize, holdout: usize) -> f64 {
    let cat = ClassCatalog::synthetic_default();
    let counts = DatasetCounts {
        gt: k,
        unlabeled: 0,
        holdout,
    };
    let data = gen_dataset(100 + seed, counts, &small_scene(0.5), &cat).unwrap();
    let g = train_generator(&samples(&data, Role::Gt), &cat, &desk_train_config(steps / k, seed));
    label_and_score(&with_scales(&g, true), &data, Role::Holdout, &cat).1.pq.all.pq
}

pub fn label_trend(seeds: u64, steps: usize, holdout: usize) -> Outcome {
    timed(|| {
        let mut rows = Vec::new();
        let (mut ten, mut one) = (0.0, 0.0);
        for seed in 0..seeds {
            let a = pq_with_k(seed, 10, steps, holdout);
            let b = pq_with_k(seed, 1, steps, holdout);
            rows.push(format!("{a:.3}/{b:.3}"));
            ten += a / seeds as f64;
            one += b / seeds as f64;
        }
        (
            ten - one >= 0.05,
            format!(
                "mean PQ k=10 {ten:.4}, k=1 {one:.4}, gap {:.4} (>= 0.05); per seed k10/k1 {}",
                ten - one,
                rows.join(" ")
            ),
        )
    })
}

pub fn tta_benefit(seeds: u64, steps: usize, holdout: usize) -> Outcome {
    timed(|| {
        let cat = ClassCatalog::synthetic_default();
        let (mut single, mut multi) = (0.0, 0.0);
        let mut rows = Vec::new();
        for seed in 0..seeds {
            let counts = DatasetCounts {
                gt: 10,
                unlabeled: 0,
                holdout,
            };
            let data = gen_dataset(200 + seed, counts, &small_scene(1.0), &cat).unwrap();
            let g = train_generator(&samples(&data, Role::Gt), &cat, &desk_train_config(steps / 10, seed));
            let s = label_and_score(&with_scales(&g, false), &data, Role::Holdout, &cat).1.pq.all.pq;
            let m = label_and_score(&with_scales(&g, true), &data, Role::Holdout, &cat).1.pq.all.pq;
            rows.push(format!("{m:.3}/{s:.3}"));
            single += s / seeds as f64;
            multi += m / seeds as f64;
        }
        (
            multi >= single - 0.01,
            format!(
                "mean PQ multi-scale {multi:.4}, single-scale {single:.4}, difference {:+.4} (>= -0.01); per seed multi/single {}",
                multi - single,
                rows.join(" ")
            ),
        )
    })
}

/// Label bytes and the CSV report of one synth, train, generate, evaluate run.
pub fn pipeline_artifacts(threads: usize) -> (Vec<Vec<u8>>, String) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let cat = ClassCatalog::synthetic_default();
        let counts = DatasetCounts {
            gt: 3,
            unlabeled: 3,
            holdout: 0,
        };
        let scene = SceneConfig {
            height_patches: 16,
            width_patches: 16,
            channels: 16,
            instance_patches: (2, 5),
            instances: (2, 4),
            ..SceneConfig::default()
        };
        let data = gen_dataset(300, counts, &scene, &cat).unwrap();
        let mut cfg = desk_train_config(10, 9);
        cfg.crop_patches = (8, 8);
        cfg.batch_size = 2;
        let g = train_generator(&samples(&data, Role::Gt), &cat, &cfg);
        let (preds, summary) = label_and_score(&g, &data, Role::Unlabeled, &cat);
        let bytes = preds.iter().map(|p| encode_labels(p).unwrap()).collect();
        (bytes, summary.to_csv() + &summary.to_summary_csv())
    })
}

pub fn determinism() -> Outcome {
    timed(|| {
        let a = pipeline_artifacts(1);
        let b = pipeline_artifacts(1);
        let c = pipeline_artifacts(2);
        let same = a == b && a == c;
        (
            same,
            format!(
                "{} label files and the metric report {} across 3 runs (1, 1 and 2 worker threads)",
                a.0.len(),
                if same { "byte-identical" } else { "DIFFER" }
            ),
        )
    })
}
