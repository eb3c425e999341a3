//! End-to-end comparison of two loaded datasets: pool construction,
//! per-patch scoring, similarity matching, and aggregation into the final
//! contextualized performance difference.
//!
//! Every stage is order-preserving, so results are identical for any
//! worker count.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cperf::{
    batch_error_from_scores, bootstrap_ci, cperf_difference, CPerfResult, ConfigEcho, Estimator,
};
use crate::dataset::{Dataset, Mode, Samples, SegSample};
use crate::error::{Error, Result};
use crate::metrics::{
    detection_patch_scores, iou_views, pixel_accuracy_views, DetectionParams, MetricKind,
};
use crate::sampling::{PatchRef, PatchSpec};
use crate::similarity::{
    build_index_batches, CounterSnapshot, MatchCounters, PatchPool, PatchView, ReferenceSide,
};

/// Percentile bootstrap settings; the RNG seed comes from the patch spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            resamples: 1000,
            level: 0.95,
        }
    }
}

/// Named parameter bundles for the published comparison setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Urban segmentation at patch size 128: 64 patches per image,
    /// similarity threshold 0.75.
    City128,
    /// Urban segmentation at patch size 256: 16 patches per image,
    /// similarity threshold 0.75.
    City256,
    /// Traffic-cone detection: anchors at twice the object size,
    /// similarity threshold 0.8, at least 4 members per side.
    Cones,
}

impl Preset {
    pub fn all() -> [Preset; 3] {
        [Preset::City128, Preset::City256, Preset::Cones]
    }

    /// Overwrite the spec fields the preset pins; everything else keeps
    /// its prior value.
    pub fn apply(self, spec: &mut PatchSpec) {
        match self {
            Preset::City128 => {
                spec.patch_size = 128;
                spec.patches_per_image = 64;
                spec.threshold = 0.75;
            }
            Preset::City256 => {
                spec.patch_size = 256;
                spec.patches_per_image = 16;
                spec.threshold = 0.75;
            }
            Preset::Cones => {
                spec.anchor_scale = 2.0;
                spec.threshold = 0.8;
                spec.min_batch_per_side = 4;
            }
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::City128 => "city128",
            Preset::City256 => "city256",
            Preset::Cones => "cones",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "city128" => Ok(Preset::City128),
            "city256" => Ok(Preset::City256),
            "cones" => Ok(Preset::Cones),
            other => Err(format!(
                "unknown preset {other:?}; expected city128, city256, or cones"
            )),
        }
    }
}

/// Everything a comparison needs besides the two datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub spec: PatchSpec,
    /// None selects the mode default: pixel accuracy for segmentation,
    /// detection hit rate for detection.
    pub metric: Option<MetricKind>,
    pub estimator: Estimator,
    pub reference_side: ReferenceSide,
    pub detection: DetectionParams,
    /// Weigh each batch by its member count instead of equally.
    pub weight_by_size: bool,
    pub bootstrap: Option<BootstrapSettings>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            spec: PatchSpec::default(),
            metric: None,
            estimator: Estimator::MeanDiff,
            reference_side: ReferenceSide::A,
            detection: DetectionParams::default(),
            weight_by_size: false,
            bootstrap: None,
        }
    }
}

/// Deterministic run accounting, reported alongside the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub patches_a: usize,
    pub patches_b: usize,
    /// Patches the metric produced no score for (for example, all cells
    /// carry the ignore label).
    pub unscored_a: usize,
    pub unscored_b: usize,
    pub match_counters: CounterSnapshot,
    /// Canonical class ID to display name, from dataset A's legend.
    pub class_names: BTreeMap<u16, String>,
}

/// The comparison result plus its accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub result: CPerfResult,
    pub stats: RunStats,
}

fn default_metric(mode: Mode) -> MetricKind {
    match mode {
        Mode::Segmentation => MetricKind::PixelAccuracy,
        Mode::Detection => MetricKind::DetectionHit,
    }
}

fn check_metric(metric: MetricKind, mode: Mode) -> Result<()> {
    let ok = match mode {
        Mode::Segmentation => matches!(metric, MetricKind::PixelAccuracy | MetricKind::MeanIou),
        Mode::Detection => matches!(metric, MetricKind::DetectionHit | MetricKind::DetectionIou),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "metric {metric} does not apply to {mode:?} datasets"
        )))
    }
}

/// Run the full comparison. Dataset A is the reference side by default;
/// batch errors always subtract B's mean from A's.
pub fn run_comparison(a: &Dataset, b: &Dataset, config: &ComparisonConfig) -> Result<RunOutcome> {
    config.spec.validate()?;
    if a.mode() != b.mode() {
        return Err(Error::PairingMismatch(format!(
            "dataset {:?} is {:?} but dataset {:?} is {:?}",
            a.name,
            a.mode(),
            b.name,
            b.mode()
        )));
    }
    let mode = a.mode();
    let metric = config.metric.unwrap_or(default_metric(mode));
    check_metric(metric, mode)?;

    let pool_a = PatchPool::build(a, &config.spec)?;
    let pool_b = PatchPool::build(b, &config.spec)?;
    let scores_a = score_pool(a, &pool_a, metric, &config.detection);
    let scores_b = score_pool(b, &pool_b, metric, &config.detection);

    let counters = MatchCounters::default();
    let index_batches = build_index_batches(
        &pool_a,
        &pool_b,
        config.reference_side,
        &config.spec,
        &counters,
    );

    let min = config.spec.min_batch_per_side;
    let mut errors = Vec::new();
    let mut discarded = 0usize;
    for batch in index_batches {
        let side_a: Vec<f64> = batch
            .members_a
            .iter()
            .filter_map(|&(i, _)| scores_a[i])
            .collect();
        let side_b: Vec<f64> = batch
            .members_b
            .iter()
            .filter_map(|&(i, _)| scores_b[i])
            .collect();
        if side_a.len() < min || side_b.len() < min {
            discarded += 1;
            continue;
        }
        let store = if batch.ref_in_a { &pool_a } else { &pool_b };
        let reference = store.patches()[batch.reference].clone();
        let anchor_class = reference.anchor_class;
        errors.push(batch_error_from_scores(
            reference,
            anchor_class,
            &side_a,
            &side_b,
            config.estimator,
        ));
    }

    let mut result = cperf_difference(errors, discarded, config.weight_by_size)?;
    if let Some(bs) = &config.bootstrap {
        result.bootstrap_ci = Some(bootstrap_ci(
            &result.batch_errors,
            bs.resamples,
            bs.level,
            config.spec.seed,
        )?);
    }
    result.config_echo = Some(ConfigEcho {
        dataset_a: a.name.clone(),
        dataset_b: b.name.clone(),
        mode,
        metric,
        estimator: config.estimator,
        reference_side: config.reference_side,
        spec: config.spec.clone(),
        detection: config.detection,
        weight_by_size: config.weight_by_size,
    });

    let stats = RunStats {
        patches_a: pool_a.len(),
        patches_b: pool_b.len(),
        unscored_a: scores_a.iter().filter(|s| s.is_none()).count(),
        unscored_b: scores_b.iter().filter(|s| s.is_none()).count(),
        match_counters: counters.snapshot(),
        class_names: a
            .legend
            .canonical_pairs()
            .into_iter()
            .map(|(id, name)| (id, name.to_string()))
            .collect(),
    };
    Ok(RunOutcome { result, stats })
}

/// Metric score per pool position, in pool order. None marks patches the
/// metric cannot score; they drop out of their batches.
fn score_pool(
    dataset: &Dataset,
    pool: &PatchPool<'_>,
    metric: MetricKind,
    detection: &DetectionParams,
) -> Vec<Option<f64>> {
    match &dataset.samples {
        Samples::Segmentation(samples) => {
            let by_id: HashMap<&str, &SegSample> =
                samples.iter().map(|s| (s.image_id.as_str(), s)).collect();
            pool.patches()
                .par_iter()
                .map(|patch| {
                    let sample = by_id[patch.image_id.as_str()];
                    seg_score(sample, patch, metric)
                })
                .collect()
        }
        Samples::Detection(samples) => {
            let per_image: HashMap<&str, Vec<f64>> = samples
                .par_iter()
                .map(|sample| {
                    let scores = detection_patch_scores(sample, detection, metric)
                        .into_iter()
                        .map(|s| s.value)
                        .collect();
                    (sample.image_id.as_str(), scores)
                })
                .collect();
            pool.patches()
                .iter()
                .map(|patch| Some(per_image[patch.image_id.as_str()][patch.index]))
                .collect()
        }
    }
}

fn seg_score(sample: &SegSample, patch: &PatchRef, metric: MetricKind) -> Option<f64> {
    let gt = PatchView::Window {
        map: &sample.gt,
        x: patch.x,
        y: patch.y,
        side: patch.side,
    };
    let pred = PatchView::Window {
        map: &sample.pred,
        x: patch.x,
        y: patch.y,
        side: patch.side,
    };
    match metric {
        MetricKind::PixelAccuracy => pixel_accuracy_views(&gt, &pred).map(|s| s.value),
        MetricKind::MeanIou => iou_views(&gt, &pred).mean.map(|s| s.value),
        other => unreachable!("{other} rejected for segmentation runs"),
    }
}
