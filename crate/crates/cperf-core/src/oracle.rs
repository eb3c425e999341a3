//! Brute-force reference implementations for validating the optimized
//! pipeline: exhaustive matching with no pruning, and a straight-line
//! single-threaded recomputation of the whole comparison.
//!
//! This module is deliberately self-contained. It shares only domain types
//! (datasets, patch references, metric and error enums) with the rest of
//! the crate and restates every computation, including the documented RNG
//! stream derivation and the summation order of every mean, so that
//! equality tests against the optimized code are meaningful.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, DetSample, DetectionBox, Samples, IGNORE_ID};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::sampling::{PatchRef, PatchSpec};

/// Exhaustive match scan: every pool patch with the reference's anchor
/// class whose label similarity reaches `threshold`, in pool order. No
/// signatures, no bound, no early exit.
pub fn brute_force_matches(
    ref_dataset: &Dataset,
    reference: &PatchRef,
    pool_dataset: &Dataset,
    pool: &[PatchRef],
    threshold: f64,
    det_grid: usize,
) -> Vec<(PatchRef, f64)> {
    let ref_labels = patch_labels(ref_dataset, reference, det_grid);
    let mut out = Vec::new();
    for candidate in pool {
        if candidate.anchor_class != reference.anchor_class {
            continue;
        }
        let cand_labels = patch_labels(pool_dataset, candidate, det_grid);
        let sim = label_similarity(&ref_labels, &cand_labels);
        if sim >= threshold {
            out.push((candidate.clone(), sim));
        }
    }
    out
}

/// Straight-line recomputation of the comparison: sample both pools, score
/// every patch, form a batch around every pool-A patch, and average the
/// per-batch mean differences. Defaults throughout: pool-A references,
/// absolute mean difference, unweighted aggregation, detection thresholds
/// 0.5 overlap and 0.25 confidence.
pub fn brute_force_cperf(
    a: &Dataset,
    b: &Dataset,
    spec: &PatchSpec,
    metric: MetricKind,
) -> Result<f64> {
    let pool_a = sample_pool(a, spec)?;
    let pool_b = sample_pool(b, spec)?;

    let labels_a: Vec<Vec<u16>> = pool_a
        .iter()
        .map(|p| patch_labels(a, p, spec.det_grid))
        .collect();
    let labels_b: Vec<Vec<u16>> = pool_b
        .iter()
        .map(|p| patch_labels(b, p, spec.det_grid))
        .collect();
    let scores_a = pool_scores(a, &pool_a, metric);
    let scores_b = pool_scores(b, &pool_b, metric);

    let min = spec.min_batch_per_side;
    let mut errors = Vec::new();
    for (ref_idx, reference) in pool_a.iter().enumerate() {
        let members_a = matching_indices(&labels_a[ref_idx], reference, &pool_a, &labels_a, spec);
        let members_b = matching_indices(&labels_a[ref_idx], reference, &pool_b, &labels_b, spec);
        if members_a.len() < min || members_b.len() < min {
            continue;
        }
        let side_a: Vec<f64> = members_a.iter().filter_map(|&i| scores_a[i]).collect();
        let side_b: Vec<f64> = members_b.iter().filter_map(|&i| scores_b[i]).collect();
        if side_a.len() < min || side_b.len() < min {
            continue;
        }
        let mean_a = side_a.iter().sum::<f64>() / side_a.len() as f64;
        let mean_b = side_b.iter().sum::<f64>() / side_b.len() as f64;
        errors.push((mean_a - mean_b).abs());
    }
    if errors.is_empty() {
        return Err(Error::NoBatches);
    }

    // value-sorted accumulation: the mean is independent of batch order
    let mut pairs: Vec<(f64, f64)> = errors.into_iter().map(|e| (e, 1.0)).collect();
    pairs.sort_by(|x, y| x.partial_cmp(y).expect("errors are never NaN"));
    let mut num = 0.0;
    let mut den = 0.0;
    for (value, weight) in pairs {
        num += value * weight;
        den += weight;
    }
    Ok(num / den)
}

/// Pool-order list of pool indices whose patches match the reference.
fn matching_indices(
    ref_labels: &[u16],
    reference: &PatchRef,
    pool: &[PatchRef],
    labels: &[Vec<u16>],
    spec: &PatchSpec,
) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, candidate) in pool.iter().enumerate() {
        if candidate.anchor_class != reference.anchor_class {
            continue;
        }
        if label_similarity(ref_labels, &labels[i]) >= spec.threshold {
            out.push(i);
        }
    }
    out
}

/// Fraction of equally labeled cells over all cells. The ignore ID is an
/// ordinary value here: it matches itself and nothing else.
fn label_similarity(a: &[u16], b: &[u16]) -> f64 {
    assert_eq!(a.len(), b.len(), "patch label shapes differ");
    let mut same: u64 = 0;
    for (x, y) in a.iter().zip(b) {
        if x == y {
            same += 1;
        }
    }
    same as f64 / a.len() as f64
}

/// Restatement of the documented per-image stream contract: a ChaCha8
/// stream keyed by SHA-256 over a fixed tag, the seed, the length-prefixed
/// dataset name, and the image id.
fn stream_for_image(seed: u64, dataset_name: &str, image_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"cperf.patch.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((dataset_name.len() as u64).to_le_bytes());
    hasher.update(dataset_name.as_bytes());
    hasher.update(image_id.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&hasher.finalize());
    ChaCha8Rng::from_seed(key)
}

/// The patch list the sampler is contracted to produce: per image, k
/// uniform draws of x then y for segmentation; one centered window per
/// ground-truth box for detection.
fn sample_pool(dataset: &Dataset, spec: &PatchSpec) -> Result<Vec<PatchRef>> {
    let mut out = Vec::new();
    match &dataset.samples {
        Samples::Segmentation(samples) => {
            let p = spec.patch_size;
            let mut eligible = 0usize;
            for sample in samples {
                let (w, h) = (sample.gt.width(), sample.gt.height());
                if w < p || h < p {
                    continue;
                }
                eligible += 1;
                let mut rng = stream_for_image(spec.seed, &dataset.name, &sample.image_id);
                for index in 0..spec.patches_per_image {
                    let x = rng.random_range(0..=w - p);
                    let y = rng.random_range(0..=h - p);
                    out.push(PatchRef {
                        dataset: dataset.name.clone(),
                        image_id: sample.image_id.clone(),
                        x,
                        y,
                        side: p,
                        index,
                        anchor_class: None,
                    });
                }
            }
            if eligible == 0 {
                return Err(Error::NoEligibleImages(format!(
                    "no image in {:?} is at least {p}x{p}",
                    dataset.name
                )));
            }
        }
        Samples::Detection(samples) => {
            for sample in samples {
                for (index, gt_box) in sample.gt_boxes.iter().enumerate() {
                    let longest = gt_box.w.max(gt_box.h);
                    let side = ((spec.anchor_scale * longest).ceil() as usize)
                        .max(1)
                        .min(sample.width.min(sample.height));
                    let x = clamp_round(
                        gt_box.x + gt_box.w / 2.0 - side as f64 / 2.0,
                        sample.width - side,
                    );
                    let y = clamp_round(
                        gt_box.y + gt_box.h / 2.0 - side as f64 / 2.0,
                        sample.height - side,
                    );
                    out.push(PatchRef {
                        dataset: dataset.name.clone(),
                        image_id: sample.image_id.clone(),
                        x,
                        y,
                        side,
                        index,
                        anchor_class: Some(gt_box.class_id),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn clamp_round(v: f64, max: usize) -> usize {
    let r = v.round();
    if r <= 0.0 {
        0
    } else if r as usize >= max {
        max
    } else {
        r as usize
    }
}

/// Ground-truth labels of a patch as a flat row-major grid: a verbatim
/// window for segmentation; for detection, boxes painted into a full-image
/// raster (largest first, so smaller boxes stay on top) and then sampled
/// at the nearest pixel to each cell center.
fn patch_labels(dataset: &Dataset, patch: &PatchRef, det_grid: usize) -> Vec<u16> {
    match &dataset.samples {
        Samples::Segmentation(samples) => {
            let sample = samples
                .iter()
                .find(|s| s.image_id == patch.image_id)
                .expect("patch references a known image");
            let mut out = Vec::with_capacity(patch.side * patch.side);
            for y in patch.y..patch.y + patch.side {
                for x in patch.x..patch.x + patch.side {
                    out.push(sample.gt.get(x, y));
                }
            }
            out
        }
        Samples::Detection(samples) => {
            let sample = samples
                .iter()
                .find(|s| s.image_id == patch.image_id)
                .expect("patch references a known image");
            let background = dataset
                .legend
                .background_id()
                .expect("detection legend carries a background class");
            let full = paint_full_raster(sample, background);
            let mut out = Vec::with_capacity(det_grid * det_grid);
            for gy in 0..det_grid {
                let py = patch.y
                    + ((gy as f64 + 0.5) * patch.side as f64 / det_grid as f64).floor() as usize;
                for gx in 0..det_grid {
                    let px = patch.x
                        + ((gx as f64 + 0.5) * patch.side as f64 / det_grid as f64).floor()
                            as usize;
                    out.push(full[py * sample.width + px]);
                }
            }
            out
        }
    }
}

/// Paint ground-truth boxes into a width x height raster at pixel-center
/// resolution. Larger boxes are painted first and ties keep file order, so
/// the last (smallest) box covering a pixel wins.
fn paint_full_raster(sample: &DetSample, background: u16) -> Vec<u16> {
    let mut order: Vec<usize> = (0..sample.gt_boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let ai = sample.gt_boxes[i].w * sample.gt_boxes[i].h;
        let aj = sample.gt_boxes[j].w * sample.gt_boxes[j].h;
        aj.partial_cmp(&ai).expect("box areas are never NaN")
    });
    let mut raster = vec![background; sample.width * sample.height];
    for &bi in &order {
        let b = &sample.gt_boxes[bi];
        for py in 0..sample.height {
            let cy = py as f64 + 0.5;
            if cy < b.y || cy >= b.y + b.h {
                continue;
            }
            for px in 0..sample.width {
                let cx = px as f64 + 0.5;
                if cx >= b.x && cx < b.x + b.w {
                    raster[py * sample.width + px] = b.class_id;
                }
            }
        }
    }
    raster
}

/// Per-pool-position scores; None marks a patch the metric cannot score.
fn pool_scores(dataset: &Dataset, pool: &[PatchRef], metric: MetricKind) -> Vec<Option<f64>> {
    match &dataset.samples {
        Samples::Segmentation(samples) => pool
            .iter()
            .map(|patch| {
                let sample = samples
                    .iter()
                    .find(|s| s.image_id == patch.image_id)
                    .expect("patch references a known image");
                seg_patch_score(
                    sample.gt.data(),
                    sample.gt.width(),
                    patch,
                    &sample.pred,
                    metric,
                )
            })
            .collect(),
        Samples::Detection(samples) => {
            let mut per_image: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for sample in samples {
                per_image.insert(sample.image_id.as_str(), detection_scores(sample, metric));
            }
            pool.iter()
                .map(|patch| Some(per_image[patch.image_id.as_str()][patch.index]))
                .collect()
        }
    }
}

fn seg_patch_score(
    gt_data: &[u16],
    img_w: usize,
    patch: &PatchRef,
    pred: &crate::dataset::LabelMap,
    metric: MetricKind,
) -> Option<f64> {
    match metric {
        MetricKind::PixelAccuracy => {
            let mut valid: u64 = 0;
            let mut correct: u64 = 0;
            for y in patch.y..patch.y + patch.side {
                for x in patch.x..patch.x + patch.side {
                    let g = gt_data[y * img_w + x];
                    if g == IGNORE_ID {
                        continue;
                    }
                    valid += 1;
                    if g == pred.get(x, y) {
                        correct += 1;
                    }
                }
            }
            if valid == 0 {
                None
            } else {
                Some(correct as f64 / valid as f64)
            }
        }
        MetricKind::MeanIou => {
            // per-class (true positive, false positive, false negative)
            let mut tally: BTreeMap<u16, (u64, u64, u64)> = BTreeMap::new();
            for y in patch.y..patch.y + patch.side {
                for x in patch.x..patch.x + patch.side {
                    let g = gt_data[y * img_w + x];
                    if g == IGNORE_ID {
                        continue;
                    }
                    let p = pred.get(x, y);
                    if g == p {
                        tally.entry(g).or_default().0 += 1;
                    } else {
                        tally.entry(g).or_default().2 += 1;
                        if p != IGNORE_ID {
                            tally.entry(p).or_default().1 += 1;
                        }
                    }
                }
            }
            if tally.is_empty() {
                return None;
            }
            let mut sum = 0.0;
            for &(tp, fp, fn_) in tally.values() {
                sum += tp as f64 / (tp + fp + fn_) as f64;
            }
            Some(sum / tally.len() as f64)
        }
        MetricKind::DetectionHit | MetricKind::DetectionIou => {
            panic!("{metric} is a detection metric; the dataset is segmentation")
        }
    }
}

/// Per-ground-truth-box scores under one-to-one greedy matching: highest
/// confidence prediction first, each taking the free same-class box it
/// overlaps best (first box wins ties), subject to overlap at least 0.5
/// and confidence at least 0.25.
fn detection_scores(sample: &DetSample, metric: MetricKind) -> Vec<f64> {
    let gt = &sample.gt_boxes;
    let preds = &sample.pred_boxes;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        preds[j]
            .confidence
            .partial_cmp(&preds[i].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut taken: Vec<Option<f64>> = vec![None; gt.len()];
    for &pi in &order {
        if preds[pi].confidence < 0.25 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if taken[gi].is_some() || g.class_id != preds[pi].class_id {
                continue;
            }
            let iou = overlap_ratio(g, &preds[pi]);
            if iou < 0.5 {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            taken[gi] = Some(iou);
        }
    }

    taken
        .into_iter()
        .map(|m| match metric {
            MetricKind::DetectionHit => {
                if m.is_some() {
                    1.0
                } else {
                    0.0
                }
            }
            MetricKind::DetectionIou => m.unwrap_or(0.0),
            other => panic!("{other} is a segmentation metric; the dataset is detection"),
        })
        .collect()
}

/// Intersection over union with both areas taken from the same corner
/// coordinates as the intersection, so identical boxes score exactly 1.
fn overlap_ratio(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let (ar, ab) = (a.x + a.w, a.y + a.h);
    let (br, bb) = (b.x + b.w, b.y + b.h);
    let iw = ar.min(br) - a.x.max(b.x);
    let ih = ab.min(bb) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let area_a = (ar - a.x) * (ab - a.y);
    let area_b = (br - b.x) * (bb - b.y);
    inter / (area_a + area_b - inter)
}
