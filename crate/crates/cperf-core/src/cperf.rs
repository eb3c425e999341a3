//! From scored batches to the contextualized performance difference.
//!
//! Every batch contributes one prediction error; their mean is the final
//! number. Aggregation sums in a canonical sorted order, so the result is
//! independent of batch order and of how work was scheduled.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Mode;
use crate::error::{Error, Result};
use crate::metrics::{DetectionParams, MetricKind};
use crate::sampling::{PatchRef, PatchSpec};
use crate::similarity::{MatchBatch, ReferenceSide};

/// Per-batch error estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Absolute difference of the two side means.
    MeanDiff,
    /// Wasserstein-1 distance between the two empirical score
    /// distributions.
    Wasserstein,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::MeanDiff => "mean_diff",
            Estimator::Wasserstein => "wasserstein",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean_diff" => Ok(Estimator::MeanDiff),
            "wasserstein" => Ok(Estimator::Wasserstein),
            other => Err(format!(
                "unknown estimator {other:?}; expected mean_diff or wasserstein"
            )),
        }
    }
}

/// Prediction error of one batch, with both side means echoed so the sign
/// of the gap stays recoverable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchError {
    pub reference: PatchRef,
    pub error: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub anchor_class: Option<u16>,
}

/// Mean error over one anchor class's batches (detection mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCPerf {
    pub cperf_difference: f64,
    pub batches: usize,
}

/// Percentile bootstrap interval over batch errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub resamples: usize,
}

/// The configuration a result was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub dataset_a: String,
    pub dataset_b: String,
    pub mode: Mode,
    pub metric: MetricKind,
    pub estimator: Estimator,
    pub reference_side: ReferenceSide,
    pub spec: PatchSpec,
    pub detection: DetectionParams,
    pub weight_by_size: bool,
}

/// Final comparison outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPerfResult {
    /// Mean per-batch error; the contextualized performance difference.
    pub cperf_difference: f64,
    pub batch_errors: Vec<BatchError>,
    pub batches_formed: usize,
    pub batches_discarded: usize,
    /// Mean error per anchor class; empty outside detection mode.
    pub per_class: BTreeMap<u16, ClassCPerf>,
    pub config_echo: Option<ConfigEcho>,
    pub bootstrap_ci: Option<BootstrapCi>,
}

/// Mean of the scores in slice order (the members' pool order).
pub(crate) fn ordered_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Weighted mean summed in sorted (value, weight) order; any permutation
/// of the input produces the identical float result.
pub(crate) fn order_free_mean(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("scores are never NaN"));
    let mut num = 0.0;
    let mut den = 0.0;
    for &(value, weight) in pairs.iter() {
        num += value * weight;
        den += weight;
    }
    num / den
}

/// Wasserstein-1 distance between two empirical distributions on [0, 1]:
/// the area between their quantile functions.
pub fn wasserstein_1(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty score set");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as u64, ys.len() as u64);

    let mut acc = 0.0;
    let mut q = 0.0f64;
    let (mut i, mut j) = (0u64, 0u64);
    while i < na && j < nb {
        // next breakpoint of either staircase, compared exactly via
        // cross-multiplication
        let step_a = (i + 1) * nb;
        let step_b = (j + 1) * na;
        let next = step_a.min(step_b) as f64 / (na * nb) as f64;
        acc += (next - q) * (xs[i as usize] - ys[j as usize]).abs();
        q = next;
        if step_a <= step_b {
            i += 1;
        }
        if step_b <= step_a {
            j += 1;
        }
    }
    acc
}

/// Error of one scored batch. `score_of` must return the performance score
/// of every member patch; a missing score is a programming error here (the
/// pipeline drops unscored patches before this point).
pub fn batch_prediction_error<F>(
    batch: &MatchBatch,
    score_of: F,
    estimator: Estimator,
) -> BatchError
where
    F: Fn(&PatchRef) -> Option<f64>,
{
    let score = |patch: &PatchRef| {
        score_of(patch).unwrap_or_else(|| {
            panic!(
                "no score for patch {}:{}#{}",
                patch.dataset, patch.image_id, patch.index
            )
        })
    };
    let scores_a: Vec<f64> = batch.members_a.iter().map(|(p, _)| score(p)).collect();
    let scores_b: Vec<f64> = batch.members_b.iter().map(|(p, _)| score(p)).collect();
    batch_error_from_scores(
        batch.reference.clone(),
        batch.anchor_class,
        &scores_a,
        &scores_b,
        estimator,
    )
}

/// Shared tail of both the public and the streaming path: member scores
/// are already collected, in pool order.
pub(crate) fn batch_error_from_scores(
    reference: PatchRef,
    anchor_class: Option<u16>,
    scores_a: &[f64],
    scores_b: &[f64],
    estimator: Estimator,
) -> BatchError {
    let mean_a = ordered_mean(scores_a);
    let mean_b = ordered_mean(scores_b);
    let error = match estimator {
        Estimator::MeanDiff => (mean_a - mean_b).abs(),
        Estimator::Wasserstein => wasserstein_1(scores_a, scores_b),
    };
    BatchError {
        reference,
        error,
        mean_a,
        mean_b,
        n_a: scores_a.len(),
        n_b: scores_b.len(),
        anchor_class,
    }
}

/// Aggregate batch errors into the final result. `batches_discarded`
/// counts candidates dropped by the minimum-size filter; callers without
/// that context pass 0. With `weight_by_size`, each batch weighs
/// `n_a + n_b` instead of 1.
pub fn cperf_difference(
    errors: Vec<BatchError>,
    batches_discarded: usize,
    weight_by_size: bool,
) -> Result<CPerfResult> {
    if errors.is_empty() {
        return Err(Error::NoBatches);
    }
    let weight = |e: &BatchError| {
        if weight_by_size {
            (e.n_a + e.n_b) as f64
        } else {
            1.0
        }
    };

    let mut pairs: Vec<(f64, f64)> = errors.iter().map(|e| (e.error, weight(e))).collect();
    let cperf = order_free_mean(&mut pairs);

    let mut per_class: BTreeMap<u16, Vec<(f64, f64)>> = BTreeMap::new();
    for e in &errors {
        if let Some(class) = e.anchor_class {
            per_class
                .entry(class)
                .or_default()
                .push((e.error, weight(e)));
        }
    }
    let per_class = per_class
        .into_iter()
        .map(|(class, mut pairs)| {
            let batches = pairs.len();
            (
                class,
                ClassCPerf {
                    cperf_difference: order_free_mean(&mut pairs),
                    batches,
                },
            )
        })
        .collect();

    Ok(CPerfResult {
        cperf_difference: cperf,
        batches_formed: errors.len(),
        batch_errors: errors,
        batches_discarded,
        per_class,
        config_echo: None,
        bootstrap_ci: None,
    })
}

/// Percentile bootstrap interval for the mean batch error. Deterministic
/// for a given seed.
pub fn bootstrap_ci(
    errors: &[BatchError],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    if errors.len() < 2 {
        return Err(Error::TooFewBatches(errors.len()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if resamples < 1 {
        return Err(Error::Config("bootstrap needs at least 1 resample".into()));
    }

    let values: Vec<f64> = errors.iter().map(|e| e.error).collect();
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.random_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);

    let alpha = 1.0 - level;
    Ok(BootstrapCi {
        low: quantile(&means, alpha / 2.0),
        high: quantile(&means, 1.0 - alpha / 2.0),
        level,
        resamples,
    })
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
