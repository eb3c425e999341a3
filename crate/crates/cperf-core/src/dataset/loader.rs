use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

use super::{
    BoxRecord, ClassLegend, Dataset, DatasetManifestDescription, DetSample, DetectionBox, LabelMap,
    Mode, SampleRef, Samples, SegSample, IGNORE_ID,
};

/// Per-load accounting: how many raster pixels carried raw IDs the legend
/// does not map (they degrade to `IGNORE_ID`).
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub unmapped_pixels: u64,
    pub unmapped_by_image: BTreeMap<String, u64>,
}

/// Load all samples referenced by a manifest into an in-memory dataset.
///
/// Raw label IDs are remapped through the legend; unmapped IDs become
/// `IGNORE_ID` and are counted in the report rather than failing the load.
pub fn load_dataset(manifest: &DatasetManifestDescription) -> Result<(Dataset, LoadReport)> {
    let samples = match manifest.mode {
        Mode::Segmentation => {
            let loaded: Vec<(SegSample, u64)> = manifest
                .samples
                .par_iter()
                .map(|s| match s {
                    SampleRef::Seg(r) => load_seg_sample(manifest, r),
                    SampleRef::Det(_) => unreachable!("seg manifest holds det sample"),
                })
                .collect::<Result<_>>()?;
            let mut report = LoadReport::default();
            let mut out = Vec::with_capacity(loaded.len());
            for (sample, unmapped) in loaded {
                if unmapped > 0 {
                    report
                        .unmapped_by_image
                        .insert(sample.image_id.clone(), unmapped);
                    report.unmapped_pixels += unmapped;
                }
                out.push(sample);
            }
            return Ok((
                Dataset {
                    name: manifest.name.clone(),
                    legend: manifest.legend.clone(),
                    samples: Samples::Segmentation(out),
                },
                report,
            ));
        }
        Mode::Detection => {
            let loaded: Vec<DetSample> = manifest
                .samples
                .par_iter()
                .map(|s| match s {
                    SampleRef::Det(r) => load_det_sample(manifest, r),
                    SampleRef::Seg(_) => unreachable!("det manifest holds seg sample"),
                })
                .collect::<Result<_>>()?;
            Samples::Detection(loaded)
        }
    };

    Ok((
        Dataset {
            name: manifest.name.clone(),
            legend: manifest.legend.clone(),
            samples,
        },
        LoadReport::default(),
    ))
}

fn load_seg_sample(
    manifest: &DatasetManifestDescription,
    r: &super::SegSampleRef,
) -> Result<(SegSample, u64)> {
    let (gt, unmapped_gt) = load_label_raster(&manifest.resolve(&r.gt_path), &manifest.legend)?;
    let (pred, unmapped_pred) =
        load_label_raster(&manifest.resolve(&r.pred_path), &manifest.legend)?;
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::DimensionMismatch {
            image_id: r.image_id.clone(),
            gt_w: gt.width(),
            gt_h: gt.height(),
            pred_w: pred.width(),
            pred_h: pred.height(),
        });
    }
    Ok((
        SegSample {
            image_id: r.image_id.clone(),
            gt,
            pred,
            image_path: r.image_path.as_ref().map(|p| manifest.resolve(p)),
        },
        unmapped_gt + unmapped_pred,
    ))
}

/// Read a single-channel 8- or 16-bit raster and remap through the legend.
/// Returns the canonical label map and the count of unmapped pixels.
pub fn load_label_raster(path: &Path, legend: &ClassLegend) -> Result<(LabelMap, u64)> {
    let img = image::open(path).map_err(|e| Error::Raster {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (raw, width, height): (Vec<u32>, usize, usize) = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            (
                buf.into_raw().into_iter().map(u32::from).collect(),
                w as usize,
                h as usize,
            )
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            (
                buf.into_raw().into_iter().map(u32::from).collect(),
                w as usize,
                h as usize,
            )
        }
        other => {
            return Err(Error::Raster {
                path: path.to_path_buf(),
                message: format!(
                    "expected a single-channel 8- or 16-bit raster, got {:?}",
                    other.color()
                ),
            })
        }
    };

    let max_raw = raw.iter().copied().max().unwrap_or(0);
    let table = legend.remap_table(max_raw);
    let mut unmapped = 0u64;
    let data: Vec<u16> = raw
        .into_iter()
        .map(|v| {
            let canonical = table[v as usize];
            if canonical == IGNORE_ID && !legend.ignore_raw_ids().contains(&v) {
                unmapped += 1;
            }
            canonical
        })
        .collect();

    Ok((LabelMap::new(width, height, data)?, unmapped))
}

fn load_det_sample(
    manifest: &DatasetManifestDescription,
    r: &super::DetSampleRef,
) -> Result<DetSample> {
    let gt_boxes = load_box_file(
        &manifest.resolve(&r.gt_boxes_path),
        &manifest.legend,
        r,
        true,
    )?;
    let pred_boxes = load_box_file(
        &manifest.resolve(&r.pred_boxes_path),
        &manifest.legend,
        r,
        false,
    )?;
    Ok(DetSample {
        image_id: r.image_id.clone(),
        width: r.width,
        height: r.height,
        gt_boxes,
        pred_boxes,
        image_path: r.image_path.as_ref().map(|p| manifest.resolve(p)),
    })
}

fn load_box_file(
    path: &Path,
    legend: &ClassLegend,
    sample: &super::DetSampleRef,
    is_ground_truth: bool,
) -> Result<Vec<DetectionBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<BoxRecord> = serde_json::from_str(&text).map_err(|e| Error::Raster {
        path: path.to_path_buf(),
        message: format!("box file: {e}"),
    })?;

    let mut boxes = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let class_id = resolve_box_class(&rec.class, legend).ok_or_else(|| Error::InvalidBox {
            image_id: sample.image_id.clone(),
            message: format!("box {i}: unknown class {}", rec.class),
        })?;
        let confidence = match rec.confidence {
            Some(c) => c,
            // ground truth defaults to full confidence; predictions must say
            None if is_ground_truth => 1.0,
            None => {
                return Err(Error::InvalidBox {
                    image_id: sample.image_id.clone(),
                    message: format!("box {i}: prediction without confidence"),
                })
            }
        };
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox {
                image_id: sample.image_id.clone(),
                message: format!("box {i}: confidence {confidence} outside [0,1]"),
            });
        }
        if rec.w <= 0.0 || rec.h <= 0.0 {
            return Err(Error::InvalidBox {
                image_id: sample.image_id.clone(),
                message: format!("box {i}: non-positive extent {}x{}", rec.w, rec.h),
            });
        }
        let b = DetectionBox {
            class_id,
            x: rec.x,
            y: rec.y,
            w: rec.w,
            h: rec.h,
            confidence,
        };
        if !b.intersects_image(sample.width, sample.height) {
            return Err(Error::InvalidBox {
                image_id: sample.image_id.clone(),
                message: format!("box {i}: outside the image rectangle"),
            });
        }
        boxes.push(b);
    }
    Ok(boxes)
}

fn resolve_box_class(class: &serde_json::Value, legend: &ClassLegend) -> Option<u16> {
    match class {
        serde_json::Value::String(name) => legend.canonical_of_name(name),
        serde_json::Value::Number(n) => {
            let raw = n.as_u64()? as u32;
            let (id, unmapped) = legend.remap(raw);
            if unmapped || id == IGNORE_ID {
                None
            } else {
                Some(id)
            }
        }
        _ => None,
    }
}

/// Pairing check outcome: both datasets' content histograms keyed by class name.
#[derive(Debug, Clone, Serialize)]
pub struct PairingReport {
    pub mode: Mode,
    pub histogram_a: BTreeMap<String, u64>,
    pub histogram_b: BTreeMap<String, u64>,
}

/// Confirm two datasets share a canonical class space and a mode, the
/// precondition for cross-dataset content matching.
pub fn validate_pairing(a: &Dataset, b: &Dataset) -> Result<PairingReport> {
    if a.mode() != b.mode() {
        return Err(Error::PairingMismatch(format!(
            "mode mismatch: {} is {}, {} is {}",
            a.name,
            a.mode(),
            b.name,
            b.mode()
        )));
    }
    let pairs_a = a.legend.canonical_pairs();
    let pairs_b = b.legend.canonical_pairs();
    if pairs_a != pairs_b {
        let names_a: Vec<&str> = pairs_a.iter().map(|(_, n)| *n).collect();
        let names_b: Vec<&str> = pairs_b.iter().map(|(_, n)| *n).collect();
        let missing_in_b: Vec<&str> = names_a
            .iter()
            .filter(|n| !names_b.contains(n))
            .copied()
            .collect();
        let missing_in_a: Vec<&str> = names_b
            .iter()
            .filter(|n| !names_a.contains(n))
            .copied()
            .collect();
        let mut msg = String::from("legend mismatch");
        if !missing_in_b.is_empty() {
            msg.push_str(&format!("; missing in {}: {:?}", b.name, missing_in_b));
        }
        if !missing_in_a.is_empty() {
            msg.push_str(&format!("; missing in {}: {:?}", a.name, missing_in_a));
        }
        if missing_in_a.is_empty() && missing_in_b.is_empty() {
            msg.push_str(": same names but different canonical ordering");
        }
        return Err(Error::PairingMismatch(msg));
    }

    Ok(PairingReport {
        mode: a.mode(),
        histogram_a: named_histogram(a),
        histogram_b: named_histogram(b),
    })
}

fn named_histogram(d: &Dataset) -> BTreeMap<String, u64> {
    d.class_histogram()
        .into_iter()
        .map(|(id, count)| {
            let name = d
                .legend
                .class_name(id)
                .map(str::to_string)
                .unwrap_or_else(|| format!("class_{id}"));
            (name, count)
        })
        .collect()
}
