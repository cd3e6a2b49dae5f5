//! Few-shot panoptic pseudo-label generation over frozen patch features.
//!
//! Two small heads are trained on a handful of annotated images: a semantic
//! head and a boundary head. Their multi-scale predictions are fused into
//! panoptic labels by connected-component analysis. The crate also carries
//! the target encoding, center/offset grouping and evaluation used when
//! those labels train a downstream model.

pub mod boundary;
pub mod bottomup;
pub mod catalog;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod resample;
pub mod synth;
pub mod tta;

pub use catalog::{ClassCatalog, ClassEntry};
pub use error::{Error, Result};
pub use grid::{
    softmax_channels, BoundaryMap, FeatureMap, Grid, HFlip, InstanceMap, PanopticMap, ProbMap, SemanticMap,
    VOID_ID, VOID_PANOPTIC,
};
pub use manifest::{Manifest, ManifestEntry, Role};
pub use mlp::{HeadKind, MlpHead};
pub use pipeline::LabelGenerator;
