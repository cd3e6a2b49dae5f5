//! `panlabel`: train the label generator, produce pseudo-labels, evaluate.
//!
//! Exit codes: 0 success, 1 usage error, 2 file or format error,
//! 3 validation error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use panlabel::bottomup::{encode_targets, fuse_bottomup, CenterConfig, TargetConfig};
use panlabel::fusion::{Connectivity, FusionConfig};
use panlabel::io::{read_catalog, read_grid, read_labels, read_tensor_with_patch, write_grid, write_labels, write_loss_trace, write_text};
use panlabel::metrics::MiouUniverse;
use panlabel::mlp::loss::{HardMining, LossConfig};
use panlabel::mlp::{read_checkpoint, train_few_shot, write_checkpoint, OptimizerKind, TrainConfig, TrainSample};
use panlabel::synth::{write_dataset, DatasetCounts, SceneConfig, Shape};
use panlabel::tta::ScaleSet;
use panlabel::{ClassCatalog, Error, Grid, HeadKind, LabelGenerator, Manifest, ManifestEntry, PanopticMap, Role, SemanticMap};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "panlabel", version, about = "Few-shot panoptic pseudo-labels from frozen patch features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset: features, labels, catalog and manifest.
    Synth(SynthArgs),
    /// Train a semantic or boundary head on the `gt` rows of a manifest.
    TrainHeads(TrainArgs),
    /// Generate panoptic pseudo-labels with trained heads.
    GenLabels(GenArgs),
    /// Encode panoptic labels into center, offset, weight and mask targets.
    EncodeTargets(EncodeArgs),
    /// Compare predicted labels with ground truth.
    Eval(EvalArgs),
    /// Fuse semantic probabilities, a center heatmap and offsets into a panoptic map.
    FuseBottomup(BottomupArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dataset seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Annotated scenes (role `gt`).
    #[arg(long, default_value_t = 10)]
    gt: usize,
    /// Scenes to pseudo-label (role `unlabeled`).
    #[arg(long, default_value_t = 50)]
    unlabeled: usize,
    /// Evaluation scenes (role `holdout`).
    #[arg(long, default_value_t = 20)]
    holdout: usize,
    /// Patch rows per scene.
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Patch columns per scene.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Feature channels.
    #[arg(long, default_value_t = 32)]
    channels: usize,
    /// Pixels per patch edge.
    #[arg(long, default_value_t = 14)]
    patch_size: usize,
    /// Feature noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise: f32,
    /// Prototype scale.
    #[arg(long, default_value_t = 3.0)]
    signal: f32,
    /// Fewest thing instances per scene.
    #[arg(long, default_value_t = 3)]
    min_instances: usize,
    /// Most thing instances per scene.
    #[arg(long, default_value_t = 8)]
    max_instances: usize,
    /// Smallest instance side, in patches.
    #[arg(long, default_value_t = 3)]
    min_size: usize,
    /// Largest instance side, in patches.
    #[arg(long, default_value_t = 10)]
    max_size: usize,
    /// Minimum gap between instances, in pixels.
    #[arg(long, default_value_t = 2)]
    min_gap: usize,
    /// Allow instances to touch.
    #[arg(long)]
    adjacent: bool,
    /// Instance shape.
    #[arg(long, value_enum, default_value_t = ShapeArg::Rectangle)]
    shape: ShapeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeadArg {
    Semantic,
    Boundary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset manifest; rows with role `gt` are used.
    #[arg(long)]
    manifest: PathBuf,
    /// Class catalog file.
    #[arg(long)]
    catalog: PathBuf,
    /// Which head to train.
    #[arg(long, value_enum)]
    head: HeadArg,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV (`step,loss`); defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Passes over the annotated samples.
    #[arg(long, default_value_t = 600)]
    epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Samples per optimizer step.
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crop size in patches, `rows,cols`.
    #[arg(long, default_value = "32,32")]
    crop: String,
    /// Horizontal flip probability.
    #[arg(long, default_value_t = 0.5)]
    flip_prob: f64,
    /// Hidden layer widths, `h1,h2,h3`.
    #[arg(long, default_value = "256,256,256")]
    hidden: String,
    /// Upsampling factor; 0 uses the head default (14 semantic, 4 boundary).
    #[arg(long, default_value_t = 0)]
    upsample: usize,
    /// Optimizer.
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    /// Fraction of hardest pixels kept by the bootstrapped loss.
    #[arg(long, default_value_t = 0.2)]
    top_fraction: f64,
    /// Keep pixels whose true-class probability is below this cutoff instead of a top fraction.
    #[arg(long)]
    prob_cutoff: Option<f64>,
    /// Pixels per patch edge of the feature files.
    #[arg(long, default_value_t = 14)]
    patch_size: usize,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Manifest listing the feature files.
    #[arg(long)]
    manifest: PathBuf,
    /// Class catalog file.
    #[arg(long)]
    catalog: PathBuf,
    /// Semantic head checkpoint.
    #[arg(long)]
    semantic: PathBuf,
    /// Boundary head checkpoint.
    #[arg(long)]
    boundary: PathBuf,
    /// Output directory for `.spnl` files and `manifest.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Manifest roles to label, comma-separated.
    #[arg(long, default_value = "unlabeled")]
    roles: String,
    /// Semantic head scales.
    #[arg(long, default_value = "1,2,3")]
    sem_scales: String,
    /// Boundary head scales.
    #[arg(long, default_value = "3,4,5")]
    bnd_scales: String,
    /// Thing blobs below this many pixels become void.
    #[arg(long, default_value_t = 200)]
    min_blob: usize,
    /// Instances below this many pixels merge into a neighbour.
    #[arg(long, default_value_t = 100)]
    min_instance: usize,
    /// Connectivity of thing blobs (4 or 8).
    #[arg(long, default_value = "8")]
    blob_connectivity: String,
    /// Connectivity of instances after boundary removal (4 or 8).
    #[arg(long, default_value = "4")]
    instance_connectivity: String,
    /// Static mask label file; pixels with a nonzero entry become void.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Worker threads; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Pixels per patch edge of the feature files.
    #[arg(long, default_value_t = 14)]
    patch_size: usize,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Manifest whose rows carry labels.
    #[arg(long)]
    manifest: PathBuf,
    /// Class catalog file.
    #[arg(long)]
    catalog: PathBuf,
    /// Output directory; writes `<stem>.center.spnt`, `.offset.spnt`, `.weight.spnt`, `.valid.spnt`.
    #[arg(long)]
    out: PathBuf,
    /// Center Gaussian sigma in pixels.
    #[arg(long, default_value_t = 8.0)]
    sigma: f64,
    /// Weight of small-instance pixels.
    #[arg(long, default_value_t = 3.0)]
    small_weight: f32,
    /// Instances below this many pixels are small.
    #[arg(long, default_value_t = 4096)]
    small_area: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UniverseArg {
    Present,
    Catalog,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Manifest of predicted labels.
    #[arg(long)]
    pred: PathBuf,
    /// Manifest of ground-truth labels.
    #[arg(long)]
    gt: PathBuf,
    /// Class catalog file.
    #[arg(long)]
    catalog: PathBuf,
    /// Per-class CSV output (`class,PQ,SQ,RQ,TP,FP,FN`).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Headline metrics CSV output (`metric,value`).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Classes averaged by mIoU.
    #[arg(long, value_enum, default_value_t = UniverseArg::Present)]
    miou_classes: UniverseArg,
}

#[derive(Debug, Args)]
struct BottomupArgs {
    /// Semantic probabilities or logits (`.spnt`, one channel per class).
    #[arg(long)]
    semantic: PathBuf,
    /// Center heatmap (`.spnt`, one channel).
    #[arg(long)]
    center: PathBuf,
    /// Offsets (`.spnt`, channels dy, dx).
    #[arg(long)]
    offset: PathBuf,
    /// Class catalog file.
    #[arg(long)]
    catalog: PathBuf,
    /// Output label file.
    #[arg(long)]
    out: PathBuf,
    /// Minimum center score.
    #[arg(long, default_value_t = 0.1)]
    threshold: f32,
    /// Center suppression window (odd).
    #[arg(long, default_value_t = 7)]
    nms_window: usize,
    /// Most centers kept.
    #[arg(long, default_value_t = 200)]
    max_centers: usize,
}

/// Errors from argument values that clap accepted syntactically.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_list(text: &str, what: &str) -> CliResult<Vec<usize>> {
    text.split([',', 'x'])
        .map(|t| t.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad {what} {text:?}"))))
        .collect()
}

fn parse_scales(text: &str, what: &str) -> CliResult<ScaleSet> {
    text.parse().map_err(|e: Error| CliError::Usage(format!("{what}: {e}")))
}

fn parse_connectivity(text: &str) -> CliResult<Connectivity> {
    text.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str, manifest: &Path) -> CliResult<&'a PathBuf> {
    path.as_ref().ok_or_else(|| {
        CliError::Core(Error::InvalidConfig(format!("{} row without {what}", manifest.display())))
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sample".into())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Core(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let catalog = ClassCatalog::synthetic_default();
    let cfg = SceneConfig {
        height_patches: a.height,
        width_patches: a.width,
        channels: a.channels,
        patch_size: a.patch_size,
        instances: (a.min_instances, a.max_instances),
        instance_patches: (a.min_size, a.max_size),
        noise_sigma: a.noise,
        signal_strength: a.signal,
        min_gap_px: a.min_gap,
        allow_adjacent: a.adjacent,
        shape: match a.shape {
            ShapeArg::Rectangle => Shape::Rectangle,
            ShapeArg::Ellipse => Shape::Ellipse,
        },
        ..SceneConfig::default()
    };
    let counts = DatasetCounts {
        gt: a.gt,
        unlabeled: a.unlabeled,
        holdout: a.holdout,
    };
    let manifest = write_dataset(&a.out, a.seed, counts, &cfg, &catalog)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let catalog = read_catalog(&a.catalog)?;
    let manifest = Manifest::load(&a.manifest)?;
    let crop = parse_list(&a.crop, "crop")?;
    let hidden = parse_list(&a.hidden, "hidden widths")?;
    let (&[ch, cw], &[h1, h2, h3]) = (crop.as_slice(), hidden.as_slice()) else {
        return Err(CliError::Usage("--crop takes 2 values and --hidden takes 3".into()));
    };
    let mining = match a.prob_cutoff {
        Some(t) => HardMining::ProbCutoff(t),
        None => HardMining::TopFraction(a.top_fraction),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        seed: a.seed,
        crop_patches: (ch, cw),
        flip_prob: a.flip_prob,
        hidden: [h1, h2, h3],
        upsample_factor: (a.upsample > 0).then_some(a.upsample),
        loss: LossConfig {
            mining,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let kind = match a.head {
        HeadArg::Semantic => HeadKind::Semantic,
        HeadArg::Boundary => HeadKind::Boundary,
    };
    let samples = manifest
        .with_role(Role::Gt)
        .map(|e| {
            let features = read_tensor_with_patch(required(&e.features, "features", &a.manifest)?, a.patch_size)?;
            let labels = read_labels(required(&e.labels, "labels", &a.manifest)?)?;
            Ok(TrainSample::new(features, labels)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let outcome = train_few_shot(&samples, kind, &catalog, &cfg)?;
    write_checkpoint(&outcome.head, &a.out)?;
    let trace_path = a.loss_csv.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_loss_trace(&outcome.trace, &trace_path)?;
    println!(
        "trained {} head on {} samples, {} steps, final loss {:.6}",
        kind.name(),
        samples.len(),
        outcome.trace.len(),
        outcome.trace.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}

fn gen_labels(a: GenArgs) -> CliResult<()> {
    let catalog = read_catalog(&a.catalog)?;
    let manifest = Manifest::load(&a.manifest)?;
    let roles = a
        .roles
        .split(',')
        .map(|r| r.trim().parse::<Role>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let generator = LabelGenerator {
        semantic: read_checkpoint(&a.semantic)?,
        boundary: read_checkpoint(&a.boundary)?,
        semantic_scales: parse_scales(&a.sem_scales, "--sem-scales")?,
        boundary_scales: parse_scales(&a.bnd_scales, "--bnd-scales")?,
        fusion: FusionConfig {
            min_blob_area: a.min_blob,
            min_instance_area: a.min_instance,
            blob_connectivity: parse_connectivity(&a.blob_connectivity)?,
            instance_connectivity: parse_connectivity(&a.instance_connectivity)?,
        },
    };
    generator.fusion.validate()?;
    let mask: Option<Grid<bool>> = match &a.mask {
        Some(p) => Some(read_labels(p)?.grid().map(|e| e != 0)),
        None => None,
    };
    let inputs: Vec<&PathBuf> = manifest
        .entries()
        .iter()
        .filter(|e| roles.contains(&e.role))
        .map(|e| required(&e.features, "features", &a.manifest))
        .collect::<CliResult<_>>()?;
    let mut stems: HashMap<String, usize> = HashMap::new();
    let names: Vec<PathBuf> = inputs
        .iter()
        .map(|p| {
            let s = stem(p);
            let n = stems.entry(s.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                PathBuf::from(format!("{s}.spnl"))
            } else {
                PathBuf::from(format!("{s}_{n}.spnl"))
            }
        })
        .collect();
    create_dir(&a.out)?;
    let pool = thread_pool(a.jobs)?;
    let labels: Vec<PanopticMap> = pool.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let feats = read_tensor_with_patch(p, a.patch_size)?;
                generator.generate(&feats, &catalog, mask.as_ref())
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let mut entries = Vec::with_capacity(labels.len());
    for ((features, name), map) in inputs.iter().zip(&names).zip(&labels) {
        let path = a.out.join(name);
        write_labels(map, &path)?;
        entries.push(ManifestEntry {
            role: Role::Pseudo,
            features: Some(std::path::absolute(features).unwrap_or_else(|_| (*features).clone())),
            labels: Some(path),
        });
    }
    let out_manifest = a.out.join("manifest.txt");
    Manifest::new(entries).write(&out_manifest)?;
    println!("wrote {} pseudo-labels to {}", labels.len(), a.out.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> CliResult<()> {
    let catalog = read_catalog(&a.catalog)?;
    let manifest = Manifest::load(&a.manifest)?;
    let cfg = TargetConfig {
        sigma: a.sigma,
        small_instance_weight: a.small_weight,
        small_instance_area: a.small_area,
    };
    create_dir(&a.out)?;
    let mut count = 0;
    for e in manifest.entries().iter().filter(|e| e.labels.is_some()) {
        let path = required(&e.labels, "labels", &a.manifest)?;
        let t = encode_targets(&read_labels(path)?, &catalog, &cfg)?;
        let s = stem(path);
        write_grid(&t.center, a.out.join(format!("{s}.center.spnt")))?;
        write_grid(&t.offset, a.out.join(format!("{s}.offset.spnt")))?;
        write_grid(t.weights.grid(), a.out.join(format!("{s}.weight.spnt")))?;
        write_grid(&t.valid.map(|v| v as u8 as f32), a.out.join(format!("{s}.valid.spnt")))?;
        count += 1;
    }
    println!("encoded {count} label files into {}", a.out.display());
    Ok(())
}

/// Pairs predicted and ground-truth label paths: by feature path when every
/// prediction names one found in the ground truth, otherwise by position.
fn pair_labels(pred: &Manifest, gt: &Manifest) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    let labeled = |m: &Manifest| -> Vec<ManifestEntry> { m.entries().iter().filter(|e| e.labels.is_some()).cloned().collect() };
    let (pred, gt) = (labeled(pred), labeled(gt));
    let key = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let by_features: HashMap<PathBuf, PathBuf> = gt
        .iter()
        .filter_map(|e| Some((key(e.features.as_ref()?), e.labels.clone()?)))
        .collect();
    let matched: Option<Vec<(PathBuf, PathBuf)>> = pred
        .iter()
        .map(|e| Some((e.labels.clone()?, by_features.get(&key(e.features.as_ref()?))?.clone())))
        .collect();
    if let Some(pairs) = matched {
        return Ok(pairs);
    }
    if pred.len() != gt.len() {
        return Err(CliError::Core(Error::ShapeMismatch(format!(
            "{} predicted label files for {} ground-truth files",
            pred.len(),
            gt.len()
        ))));
    }
    Ok(pred
        .into_iter()
        .zip(gt)
        .map(|(p, g)| (p.labels.unwrap_or_default(), g.labels.unwrap_or_default()))
        .collect())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let catalog = read_catalog(&a.catalog)?;
    let pairs = pair_labels(&Manifest::load(&a.pred)?, &Manifest::load(&a.gt)?)?;
    if pairs.is_empty() {
        return Err(CliError::Core(Error::EmptyInput("label pairs")));
    }
    let mut preds = Vec::with_capacity(pairs.len());
    let mut gts = Vec::with_capacity(pairs.len());
    for (p, g) in &pairs {
        preds.push(read_labels(p)?);
        gts.push(read_labels(g)?);
    }
    let universe = match a.miou_classes {
        UniverseArg::Present => MiouUniverse::Present,
        UniverseArg::Catalog => MiouUniverse::Catalog,
    };
    let summary = panlabel::pipeline::evaluate(&preds, &gts, &catalog, universe)?;
    print!("{}", summary.to_table());
    if let Some(path) = &a.csv {
        write_text(&summary.to_csv(), path)?;
    }
    if let Some(path) = &a.summary {
        write_text(&summary.to_summary_csv(), path)?;
    }
    Ok(())
}

fn bottomup(a: BottomupArgs) -> CliResult<()> {
    let catalog = read_catalog(&a.catalog)?;
    let probs = read_grid(&a.semantic)?;
    if probs.channels() != catalog.len() {
        return Err(CliError::Core(Error::ChannelMismatch {
            expected: catalog.len(),
            found: probs.channels(),
        }));
    }
    let c = probs.channels();
    let classes = probs
        .data()
        .chunks_exact(c)
        .map(|px| (0..c).fold(0, |best, k| if px[k] > px[best] { k } else { best }) as u16)
        .collect();
    let sem = SemanticMap::new(probs.height(), probs.width(), classes)?;
    let cfg = CenterConfig {
        threshold: a.threshold,
        nms_window: a.nms_window,
        max_centers: a.max_centers,
    };
    let map = fuse_bottomup(&sem, &read_grid(&a.center)?, &read_grid(&a.offset)?, &catalog, &cfg)?;
    write_labels(&map, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainHeads(a) => train(a),
        Command::GenLabels(a) => gen_labels(a),
        Command::EncodeTargets(a) => encode(a),
        Command::Eval(a) => eval(a),
        Command::FuseBottomup(a) => bottomup(a),
    }
}

fn main_with_args(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}

fn main() -> ExitCode {
    main_with_args(std::env::args_os())
}
