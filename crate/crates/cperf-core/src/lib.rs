//! Contextualized performance comparison for labeled perception datasets.
//!
//! Quantifies the performance gap between two datasets (typically one
//! synthetic, one real) by comparing model performance on batches of
//! label-similar patches instead of on whole-dataset averages: patches are
//! sampled from each dataset, grouped by ground-truth label similarity, and
//! the per-batch performance differences are aggregated into a single score.

pub mod cperf;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod run;
pub mod sampling;
pub mod similarity;
pub mod synth;

pub use dataset::{
    ClassLegend, Dataset, DetSample, DetectionBox, LabelMap, Mode, Samples, SegSample,
    BACKGROUND_CLASS, IGNORE_ID,
};
pub use error::{Error, Result};
pub use report::{emit_batch_thumbnails, emit_report, parse_formats, ReportFormat};
pub use run::{run_comparison, BootstrapSettings, ComparisonConfig, Preset, RunOutcome, RunStats};
pub use sampling::{
    anchor_object_patches, extract_patch_labels, sample_random_patches, PatchRef, PatchSpec,
};
pub use synth::{generate_synthetic, SynthPattern, SynthSpec};
