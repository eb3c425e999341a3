//! Synthetic dataset generation with controllable content overlap and
//! prediction quality.
//!
//! Ground truth is procedural and spatially coherent (blocks, stripes, or
//! scattered boxes), predictions are the ground truth with a q-fraction
//! corruption. The dataset name deliberately excludes q: datasets generated
//! from the same seed at different corruption levels share identical ground
//! truth and therefore identical patch pools, so their comparison isolates
//! prediction quality.
//!
//! Corruption draws are consumed whether or not a flip happens, so the
//! flipped set at a lower q is a subset of the flipped set at a higher q.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_dataset, load_manifest, BoxRecord, ClassDef, Dataset, DetSampleRef, LegendDef,
    SegSampleRef,
};
use crate::error::{Error, Result};

/// Ground-truth content family. Blocks and stripes are segmentation
/// patterns; scattered boxes produce a detection dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPattern {
    Blocks,
    Stripes,
    ScatteredBoxes,
}

impl SynthPattern {
    pub fn is_detection(self) -> bool {
        matches!(self, SynthPattern::ScatteredBoxes)
    }
}

impl std::fmt::Display for SynthPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthPattern::Blocks => "blocks",
            SynthPattern::Stripes => "stripes",
            SynthPattern::ScatteredBoxes => "scattered_boxes",
        })
    }
}

impl std::str::FromStr for SynthPattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blocks" => Ok(SynthPattern::Blocks),
            "stripes" => Ok(SynthPattern::Stripes),
            "scattered_boxes" | "boxes" => Ok(SynthPattern::ScatteredBoxes),
            other => Err(format!(
                "unknown pattern {other:?}; expected blocks, stripes, or scattered_boxes"
            )),
        }
    }
}

/// Parameters of one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub images: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub classes: u16,
    pub pattern: SynthPattern,
    /// Fraction of gt pixels (or boxes) perturbed in the prediction.
    pub corrupt: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images < 1 {
            return Err(Error::InvalidSpec("need at least 1 image".into()));
        }
        if self.size < 8 {
            return Err(Error::InvalidSpec(format!(
                "image size must be at least 8, got {}",
                self.size
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if !(0.0..=1.0).contains(&self.corrupt) {
            return Err(Error::InvalidSpec(format!(
                "corruption must lie in [0, 1], got {}",
                self.corrupt
            )));
        }
        Ok(())
    }

    /// Dataset name; excludes the corruption level on purpose (see module
    /// docs).
    pub fn dataset_name(&self) -> String {
        format!(
            "synth-{}-i{}-s{}-c{}-seed{}",
            self.pattern, self.images, self.size, self.classes, self.seed
        )
    }
}

/// Generate the dataset, write it as a manifest tree under `out_dir`, and
/// load it back. Returns the loaded dataset and the manifest path.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<(Dataset, PathBuf)> {
    spec.validate()?;
    let gt_dir = out_dir.join("gt");
    let pred_dir = out_dir.join("pred");
    std::fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
    std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;

    let name = spec.dataset_name();
    let manifest_path = out_dir.join("manifest.json");
    if spec.pattern.is_detection() {
        write_detection(spec, &name, out_dir, &manifest_path)?;
    } else {
        write_segmentation(spec, &name, out_dir, &manifest_path)?;
    }

    let description = load_manifest(&manifest_path)?;
    let (dataset, _) = load_dataset(&description)?;
    Ok((dataset, manifest_path))
}

/// Per-image RNG stream, independent of image order and of other images.
fn synth_rng(seed: u64, name: &str, image_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"cperf.synth.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(image_id.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&hasher.finalize());
    ChaCha8Rng::from_seed(key)
}

fn legend_def(classes: u16) -> LegendDef {
    LegendDef {
        classes: (0..classes)
            .map(|c| ClassDef {
                raw_id: c as u32,
                name: format!("class_{c}"),
            })
            .collect(),
        ignore_raw_ids: Vec::new(),
    }
}

fn image_id(i: usize) -> String {
    format!("img_{i:04}")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_segmentation(
    spec: &SynthSpec,
    name: &str,
    out_dir: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let mut samples = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let id = image_id(i);
        let mut rng = synth_rng(spec.seed, name, &id);
        let gt = match spec.pattern {
            SynthPattern::Blocks => blocks_gt(spec, &mut rng),
            SynthPattern::Stripes => stripes_gt(spec, &mut rng),
            SynthPattern::ScatteredBoxes => unreachable!("detection path"),
        };
        let pred = corrupt_pixels(&gt, spec, &mut rng);

        let gt_rel = PathBuf::from("gt").join(format!("{id}.png"));
        let pred_rel = PathBuf::from("pred").join(format!("{id}.png"));
        write_label_png(&out_dir.join(&gt_rel), spec.size, &gt)?;
        write_label_png(&out_dir.join(&pred_rel), spec.size, &pred)?;
        samples.push(SegSampleRef {
            image_id: id,
            gt_path: gt_rel,
            pred_path: pred_rel,
            image_path: None,
        });
    }

    write_json(
        manifest_path,
        &serde_json::json!({
            "name": name,
            "mode": "segmentation",
            "legend": legend_def(spec.classes),
            "samples": samples,
        }),
    )
}

/// Uniform random class per cell of a coarse block partition.
fn blocks_gt(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let block = (spec.size / 4).max(1);
    let per_axis = spec.size.div_ceil(block);
    let cells: Vec<u16> = (0..per_axis * per_axis)
        .map(|_| rng.random_range(0..spec.classes))
        .collect();
    let mut data = Vec::with_capacity(spec.size * spec.size);
    for y in 0..spec.size {
        for x in 0..spec.size {
            data.push(cells[(y / block) * per_axis + x / block]);
        }
    }
    data
}

/// Horizontal stripes cycling through the classes from a random phase.
fn stripes_gt(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let stripe = (spec.size / 8).max(1);
    let phase = rng.random_range(0..spec.classes);
    let mut data = Vec::with_capacity(spec.size * spec.size);
    for y in 0..spec.size {
        let class = (phase as usize + y / stripe) % spec.classes as usize;
        data.extend(std::iter::repeat_n(class as u16, spec.size));
    }
    data
}

/// Flip each pixel with probability q to a uniformly chosen different
/// class. Both draws happen regardless of the outcome, keeping the stream
/// aligned across corruption levels.
fn corrupt_pixels(gt: &[u16], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u16> {
    gt.iter()
        .map(|&v| {
            let flip = rng.random::<f64>() < spec.corrupt;
            let offset = rng.random_range(1..spec.classes);
            if flip {
                (v + offset) % spec.classes
            } else {
                v
            }
        })
        .collect()
}

fn write_label_png(path: &Path, size: usize, data: &[u16]) -> Result<()> {
    let side = size as u32;
    if data.iter().all(|&v| v < 256) {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_vec(side, side, data.iter().map(|&v| v as u8).collect())
                .expect("buffer matches dimensions");
        buf.save(path).map_err(|e| Error::Raster {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    } else {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_vec(side, side, data.to_vec()).expect("buffer matches dimensions");
        buf.save(path).map_err(|e| Error::Raster {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn write_detection(
    spec: &SynthSpec,
    name: &str,
    out_dir: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let mut samples = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let id = image_id(i);
        let mut rng = synth_rng(spec.seed, name, &id);
        let gt_boxes = scattered_boxes_gt(spec, &mut rng);
        let pred_boxes = corrupt_boxes(&gt_boxes, spec, &mut rng);

        let gt_rel = PathBuf::from("gt").join(format!("{id}.json"));
        let pred_rel = PathBuf::from("pred").join(format!("{id}.json"));
        write_json(&out_dir.join(&gt_rel), &gt_boxes)?;
        write_json(&out_dir.join(&pred_rel), &pred_boxes)?;
        samples.push(DetSampleRef {
            image_id: id,
            width: spec.size,
            height: spec.size,
            gt_boxes_path: gt_rel,
            pred_boxes_path: pred_rel,
            image_path: None,
        });
    }

    write_json(
        manifest_path,
        &serde_json::json!({
            "name": name,
            "mode": "detection",
            "legend": legend_def(spec.classes),
            "samples": samples,
        }),
    )
}

/// 3 to 6 boxes per image, each fully inside the image, with side lengths
/// between an eighth and a quarter of the image.
fn scattered_boxes_gt(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<BoxRecord> {
    let s = spec.size as f64;
    let count = rng.random_range(3..=6usize);
    (0..count)
        .map(|_| {
            let class = rng.random_range(0..spec.classes);
            let w = rng.random_range(s / 8.0..s / 4.0);
            let h = rng.random_range(s / 8.0..s / 4.0);
            let x = rng.random_range(0.0..s - w);
            let y = rng.random_range(0.0..s - h);
            BoxRecord {
                class: serde_json::json!(format!("class_{class}")),
                x,
                y,
                w,
                h,
                confidence: Some(1.0),
            }
        })
        .collect()
}

/// Corrupt each box with probability q: half the corruptions drop the box,
/// the rest shift it by up to a sixteenth of the image per axis. All draws
/// happen regardless of the outcome.
fn corrupt_boxes(gt: &[BoxRecord], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<BoxRecord> {
    let s = spec.size as f64;
    let mut out = Vec::with_capacity(gt.len());
    for b in gt {
        let corrupt = rng.random::<f64>() < spec.corrupt;
        let drop = rng.random::<f64>() < 0.5;
        let dx = rng.random_range(-s / 16.0..s / 16.0);
        let dy = rng.random_range(-s / 16.0..s / 16.0);
        if !corrupt {
            out.push(b.clone());
        } else if !drop {
            out.push(BoxRecord {
                class: b.class.clone(),
                x: (b.x + dx).clamp(0.0, s - b.w),
                y: (b.y + dy).clamp(0.0, s - b.h),
                w: b.w,
                h: b.h,
                confidence: b.confidence,
            });
        }
    }
    out
}
