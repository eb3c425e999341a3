//! Candidate patch pools: uniformly random fixed-size patches for
//! segmentation, object-anchored and object-scaled patches for detection.
//!
//! Sampling is a pure function of (dataset content, spec, image order).
//! Each image draws from its own RNG stream derived from (seed, dataset
//! name, image id), so adding or removing images never perturbs the patches
//! of the others.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, DetSample, LabelMap, Samples};
use crate::error::{Error, Result};

/// Default side resolution of the rasterized label grid used to compare
/// detection patches of differing sizes.
pub const DEFAULT_DET_GRID: usize = 64;

/// All knobs governing patch sampling and matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Patch side length in pixels (segmentation mode).
    pub patch_size: usize,
    /// Number of random patches drawn per image (segmentation mode).
    pub patches_per_image: usize,
    /// Similarity threshold in (0, 1] for batch membership.
    pub threshold: f64,
    /// Minimum member count per dataset side for a batch to survive.
    pub min_batch_per_side: usize,
    /// Patch side as a multiple of the anchor object extent (detection mode).
    pub anchor_scale: f64,
    /// Side resolution of the rasterized grid for detection similarity.
    pub det_grid: usize,
    /// Root RNG seed.
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            patch_size: 128,
            patches_per_image: 64,
            threshold: 0.75,
            min_batch_per_side: 2,
            anchor_scale: 2.0,
            det_grid: DEFAULT_DET_GRID,
            seed: 0,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::InvalidSpec(format!(
                "patch size must be at least 2, got {}",
                self.patch_size
            )));
        }
        if self.patches_per_image < 1 {
            return Err(Error::InvalidSpec("patches per image must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.min_batch_per_side < 1 {
            return Err(Error::InvalidSpec("min batch per side must be >= 1".into()));
        }
        if self.anchor_scale.is_nan() || self.anchor_scale <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "anchor scale must be positive, got {}",
                self.anchor_scale
            )));
        }
        if self.det_grid < 1 {
            return Err(Error::InvalidSpec("detection grid must be >= 1".into()));
        }
        Ok(())
    }
}

/// A located square window in a specific image of a specific dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRef {
    pub dataset: String,
    pub image_id: String,
    pub x: usize,
    pub y: usize,
    pub side: usize,
    /// Ordinal of this patch within its image (sampling order; equals the
    /// ground-truth box index in detection mode).
    pub index: usize,
    /// Class of the anchoring ground-truth box (detection mode only).
    pub anchor_class: Option<u16>,
}

/// RNG stream for one image, derived so streams are independent of image
/// order and of each other.
pub(crate) fn image_rng(seed: u64, dataset_name: &str, image_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"cperf.patch.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((dataset_name.len() as u64).to_le_bytes());
    hasher.update(dataset_name.as_bytes());
    hasher.update(image_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draw exactly `patches_per_image` uniformly placed patches from every
/// eligible image. Images smaller than the patch on either axis are skipped.
pub fn sample_random_patches(dataset: &Dataset, spec: &PatchSpec) -> Result<Vec<PatchRef>> {
    spec.validate()?;
    let samples = match &dataset.samples {
        Samples::Segmentation(s) => s,
        Samples::Detection(_) => {
            return Err(Error::InvalidSpec(
                "random patch sampling requires a segmentation dataset".into(),
            ))
        }
    };
    let p = spec.patch_size;
    let mut out = Vec::new();
    let mut eligible = 0usize;
    for sample in samples {
        let (w, h) = (sample.gt.width(), sample.gt.height());
        if w < p || h < p {
            continue;
        }
        eligible += 1;
        let mut rng = image_rng(spec.seed, &dataset.name, &sample.image_id);
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
    Ok(out)
}

/// Emit one patch per ground-truth box, centered on the box and sized
/// `anchor_scale * max(w, h)` (rounded up). Patches are translated, never
/// shrunk, to fit the image; a patch larger than the image clips to the
/// largest square the image holds.
pub fn anchor_object_patches(dataset: &Dataset, spec: &PatchSpec) -> Result<Vec<PatchRef>> {
    spec.validate()?;
    let samples = match &dataset.samples {
        Samples::Detection(s) => s,
        Samples::Segmentation(_) => {
            return Err(Error::InvalidSpec(
                "object-anchored sampling requires a detection dataset".into(),
            ))
        }
    };
    let mut out = Vec::new();
    for sample in samples {
        for (index, gt_box) in sample.gt_boxes.iter().enumerate() {
            let (x, y, side) = anchored_window(
                gt_box.x,
                gt_box.y,
                gt_box.w,
                gt_box.h,
                spec.anchor_scale,
                sample.width,
                sample.height,
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
    Ok(out)
}

/// Place the square window for one anchor box: centered, scaled, translated
/// into the image, clipped only when larger than the image itself.
fn anchored_window(
    bx: f64,
    by: f64,
    bw: f64,
    bh: f64,
    scale: f64,
    img_w: usize,
    img_h: usize,
) -> (usize, usize, usize) {
    let raw_side = (scale * bw.max(bh)).ceil() as usize;
    let side = raw_side.max(1).min(img_w.min(img_h));
    let cx = bx + bw / 2.0;
    let cy = by + bh / 2.0;
    let half = side as f64 / 2.0;
    let x = clamp_coord(cx - half, img_w - side);
    let y = clamp_coord(cy - half, img_h - side);
    (x, y, side)
}

fn clamp_coord(v: f64, max: usize) -> usize {
    let r = v.round();
    if r <= 0.0 {
        0
    } else if r as usize >= max {
        max
    } else {
        r as usize
    }
}

/// The ground-truth label content of a patch, as the Eq.-style similarity
/// operand: a verbatim window copy for segmentation, a rasterized box map
/// for detection.
pub fn extract_patch_labels(dataset: &Dataset, patch: &PatchRef, grid: usize) -> LabelMap {
    match &dataset.samples {
        Samples::Segmentation(samples) => {
            let sample = samples
                .iter()
                .find(|s| s.image_id == patch.image_id)
                .unwrap_or_else(|| panic!("patch references unknown image {:?}", patch.image_id));
            sample.gt.window(patch.x, patch.y, patch.side, patch.side)
        }
        Samples::Detection(samples) => {
            let sample = samples
                .iter()
                .find(|s| s.image_id == patch.image_id)
                .unwrap_or_else(|| panic!("patch references unknown image {:?}", patch.image_id));
            let background = dataset
                .legend
                .background_id()
                .expect("detection legend carries a background class");
            rasterize_boxes(sample, patch, grid, background)
        }
    }
}

/// Paint ground-truth boxes intersecting the patch onto a `grid x grid`
/// class map. Each output cell samples the patch pixel nearest its center;
/// a pixel takes the class of the last box painted over it, with boxes
/// painted in area-descending order (ties by file order) so smaller boxes
/// land on top.
pub fn rasterize_boxes(
    sample: &DetSample,
    patch: &PatchRef,
    grid: usize,
    background: u16,
) -> LabelMap {
    let mut order: Vec<usize> = (0..sample.gt_boxes.len()).collect();
    // stable sort keeps file order among equal areas
    order.sort_by(|&a, &b| {
        sample.gt_boxes[b]
            .area()
            .partial_cmp(&sample.gt_boxes[a].area())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut map = LabelMap::filled(grid, grid, background);
    let side = patch.side as f64;
    for gy in 0..grid {
        // nearest patch pixel to the cell center, then that pixel's center
        let py = patch.y as f64 + ((gy as f64 + 0.5) * side / grid as f64).floor() + 0.5;
        for gx in 0..grid {
            let px = patch.x as f64 + ((gx as f64 + 0.5) * side / grid as f64).floor() + 0.5;
            let mut label = background;
            for &bi in &order {
                let b = &sample.gt_boxes[bi];
                if px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h {
                    label = b.class_id;
                }
            }
            map.set(gx, gy, label);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassLegend, DetectionBox, SegSample};

    fn seg_dataset(name: &str, images: Vec<(&str, LabelMap)>) -> Dataset {
        let samples = images
            .into_iter()
            .map(|(id, gt)| SegSample {
                image_id: id.to_string(),
                pred: gt.clone(),
                gt,
                image_path: None,
            })
            .collect();
        Dataset {
            name: name.to_string(),
            legend: ClassLegend::from_defs(&[(0, "a".into()), (1, "b".into())], &[]).unwrap(),
            samples: Samples::Segmentation(samples),
        }
    }

    fn det_dataset(name: &str, samples: Vec<DetSample>) -> Dataset {
        let mut legend =
            ClassLegend::from_defs(&[(0, "red".into()), (1, "green".into())], &[]).unwrap();
        legend.ensure_class(crate::dataset::BACKGROUND_CLASS);
        Dataset {
            name: name.to_string(),
            legend,
            samples: Samples::Detection(samples),
        }
    }

    fn spec(p: usize, k: usize, seed: u64) -> PatchSpec {
        PatchSpec {
            patch_size: p,
            patches_per_image: k,
            seed,
            ..PatchSpec::default()
        }
    }

    #[test]
    fn patches_stay_inside_valid_range() {
        let ds = seg_dataset("d", vec![("a", LabelMap::filled(256, 256, 0))]);
        let refs = sample_random_patches(&ds, &spec(128, 4, 1)).unwrap();
        assert_eq!(refs.len(), 4);
        for r in &refs {
            assert!(r.x <= 128 && r.y <= 128);
            assert_eq!(r.side, 128);
        }
    }

    #[test]
    fn exact_fit_image_pins_patches_to_origin() {
        let ds = seg_dataset("d", vec![("a", LabelMap::filled(64, 64, 0))]);
        let refs = sample_random_patches(&ds, &spec(64, 5, 7)).unwrap();
        assert_eq!(refs.len(), 5);
        assert!(refs.iter().all(|r| r.x == 0 && r.y == 0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let ds = seg_dataset(
            "d",
            vec![
                ("a", LabelMap::filled(100, 90, 0)),
                ("b", LabelMap::filled(80, 120, 1)),
            ],
        );
        let s = spec(32, 8, 42);
        let first = sample_random_patches(&ds, &s).unwrap();
        let second = sample_random_patches(&ds, &s).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn adding_an_image_leaves_other_streams_untouched() {
        let one = seg_dataset("d", vec![("a", LabelMap::filled(100, 100, 0))]);
        let two = seg_dataset(
            "d",
            vec![
                ("a", LabelMap::filled(100, 100, 0)),
                ("z", LabelMap::filled(100, 100, 0)),
            ],
        );
        let s = spec(32, 4, 3);
        let refs_one = sample_random_patches(&one, &s).unwrap();
        let refs_two = sample_random_patches(&two, &s).unwrap();
        assert_eq!(refs_one[..], refs_two[..4]);
    }

    #[test]
    fn undersized_images_are_skipped() {
        let ds = seg_dataset(
            "d",
            vec![
                ("small", LabelMap::filled(16, 16, 0)),
                ("big", LabelMap::filled(64, 64, 0)),
            ],
        );
        let refs = sample_random_patches(&ds, &spec(32, 2, 0)).unwrap();
        assert_eq!(refs.len(), 2);
        assert!(refs.iter().all(|r| r.image_id == "big"));
    }

    #[test]
    fn all_images_undersized_is_an_error() {
        let ds = seg_dataset("d", vec![("small", LabelMap::filled(16, 16, 0))]);
        let err = sample_random_patches(&ds, &spec(32, 2, 0)).unwrap_err();
        assert!(matches!(err, Error::NoEligibleImages(_)));
    }

    fn gt_box(class_id: u16, x: f64, y: f64, w: f64, h: f64) -> DetectionBox {
        DetectionBox {
            class_id,
            x,
            y,
            w,
            h,
            confidence: 1.0,
        }
    }

    #[test]
    fn anchored_patch_is_centered_scaled_and_translated() {
        let ds = det_dataset(
            "d",
            vec![DetSample {
                image_id: "a".into(),
                width: 640,
                height: 480,
                gt_boxes: vec![gt_box(0, 10.0, 10.0, 20.0, 30.0)],
                pred_boxes: vec![],
                image_path: None,
            }],
        );
        let refs = anchor_object_patches(&ds, &PatchSpec::default()).unwrap();
        assert_eq!(refs.len(), 1);
        // side 60 centered on (20, 25) lands at (-10, -5), translated to (0, 0)
        assert_eq!((refs[0].x, refs[0].y, refs[0].side), (0, 0, 60));
        assert_eq!(refs[0].anchor_class, Some(0));
    }

    #[test]
    fn oversized_anchor_clips_to_image_extent() {
        let ds = det_dataset(
            "d",
            vec![DetSample {
                image_id: "a".into(),
                width: 100,
                height: 100,
                gt_boxes: vec![gt_box(1, 5.0, 2.0, 80.0, 90.0)],
                pred_boxes: vec![],
                image_path: None,
            }],
        );
        let refs = anchor_object_patches(&ds, &PatchSpec::default()).unwrap();
        assert_eq!((refs[0].x, refs[0].y, refs[0].side), (0, 0, 100));
    }

    #[test]
    fn anchored_patches_follow_ground_truth_file_order() {
        let ds = det_dataset(
            "d",
            vec![DetSample {
                image_id: "a".into(),
                width: 200,
                height: 200,
                gt_boxes: vec![
                    gt_box(1, 100.0, 100.0, 10.0, 10.0),
                    gt_box(0, 20.0, 20.0, 10.0, 10.0),
                ],
                pred_boxes: vec![],
                image_path: None,
            }],
        );
        let refs = anchor_object_patches(&ds, &PatchSpec::default()).unwrap();
        assert_eq!(refs.len(), 2);
        assert_eq!(refs[0].anchor_class, Some(1));
        assert_eq!(refs[0].index, 0);
        assert_eq!(refs[1].anchor_class, Some(0));
        assert_eq!(refs[1].index, 1);
    }

    #[test]
    fn empty_box_list_yields_empty_output() {
        let ds = det_dataset(
            "d",
            vec![DetSample {
                image_id: "a".into(),
                width: 64,
                height: 64,
                gt_boxes: vec![],
                pred_boxes: vec![],
                image_path: None,
            }],
        );
        assert!(anchor_object_patches(&ds, &PatchSpec::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn seg_extraction_copies_window_verbatim() {
        let mut gt = LabelMap::filled(8, 8, 0);
        for y in 0..4 {
            for x in 0..4 {
                gt.set(x, y, 1);
            }
        }
        let ds = seg_dataset("d", vec![("a", gt)]);
        let patch = PatchRef {
            dataset: "d".into(),
            image_id: "a".into(),
            x: 0,
            y: 0,
            side: 4,
            index: 0,
            anchor_class: None,
        };
        let labels = extract_patch_labels(&ds, &patch, 4);
        assert!(labels.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn det_extraction_without_boxes_is_all_background() {
        let ds = det_dataset(
            "d",
            vec![DetSample {
                image_id: "a".into(),
                width: 64,
                height: 64,
                gt_boxes: vec![],
                pred_boxes: vec![],
                image_path: None,
            }],
        );
        let patch = PatchRef {
            dataset: "d".into(),
            image_id: "a".into(),
            x: 0,
            y: 0,
            side: 64,
            index: 0,
            anchor_class: None,
        };
        let labels = extract_patch_labels(&ds, &patch, 16);
        let background = ds.legend.background_id().unwrap();
        assert!(labels.data().iter().all(|&v| v == background));
    }

    /// Full-resolution rasterization followed by nearest-neighbor
    /// downsampling; the oracle for the cell-sampling implementation.
    fn rasterize_oracle(
        sample: &DetSample,
        patch: &PatchRef,
        grid: usize,
        background: u16,
    ) -> LabelMap {
        let mut full = LabelMap::filled(patch.side, patch.side, background);
        let mut order: Vec<usize> = (0..sample.gt_boxes.len()).collect();
        order.sort_by(|&a, &b| {
            sample.gt_boxes[b]
                .area()
                .partial_cmp(&sample.gt_boxes[a].area())
                .unwrap()
        });
        for &bi in &order {
            let b = &sample.gt_boxes[bi];
            for py in 0..patch.side {
                for px in 0..patch.side {
                    let cx = (patch.x + px) as f64 + 0.5;
                    let cy = (patch.y + py) as f64 + 0.5;
                    if cx >= b.x && cx < b.x + b.w && cy >= b.y && cy < b.y + b.h {
                        full.set(px, py, b.class_id);
                    }
                }
            }
        }
        let mut out = LabelMap::filled(grid, grid, background);
        for gy in 0..grid {
            for gx in 0..grid {
                let sx = (((gx as f64 + 0.5) * patch.side as f64) / grid as f64).floor() as usize;
                let sy = (((gy as f64 + 0.5) * patch.side as f64) / grid as f64).floor() as usize;
                out.set(
                    gx,
                    gy,
                    full.get(sx.min(patch.side - 1), sy.min(patch.side - 1)),
                );
            }
        }
        out
    }

    #[test]
    fn central_quarter_box_fills_expected_cell_count() {
        // box covering exactly the central quarter of a 128-pixel patch
        let sample = DetSample {
            image_id: "a".into(),
            width: 128,
            height: 128,
            gt_boxes: vec![gt_box(0, 32.0, 32.0, 64.0, 64.0)],
            pred_boxes: vec![],
            image_path: None,
        };
        let patch = PatchRef {
            dataset: "d".into(),
            image_id: "a".into(),
            x: 0,
            y: 0,
            side: 128,
            index: 0,
            anchor_class: Some(0),
        };
        let grid = 64;
        let map = rasterize_boxes(&sample, &patch, grid, 2);
        let count = map.data().iter().filter(|&&v| v == 0).count();
        let oracle = rasterize_oracle(&sample, &patch, grid, 2);
        let oracle_count = oracle.data().iter().filter(|&&v| v == 0).count();
        assert_eq!(count, 1024);
        assert_eq!(oracle_count, 1024);
        assert_eq!(map, oracle);
    }

    #[test]
    fn smaller_boxes_paint_over_larger_ones() {
        let sample = DetSample {
            image_id: "a".into(),
            width: 64,
            height: 64,
            gt_boxes: vec![
                gt_box(1, 24.0, 24.0, 16.0, 16.0),
                gt_box(0, 8.0, 8.0, 48.0, 48.0),
            ],
            pred_boxes: vec![],
            image_path: None,
        };
        let patch = PatchRef {
            dataset: "d".into(),
            image_id: "a".into(),
            x: 0,
            y: 0,
            side: 64,
            index: 0,
            anchor_class: None,
        };
        let map = rasterize_boxes(&sample, &patch, 64, 2);
        // center belongs to the small late-painted box
        assert_eq!(map.get(32, 32), 1);
        // inside the big box but outside the small one
        assert_eq!(map.get(12, 12), 0);
        assert_eq!(map, rasterize_oracle(&sample, &patch, 64, 2));
    }

    #[test]
    fn equal_area_ties_resolve_by_file_order() {
        let sample = DetSample {
            image_id: "a".into(),
            width: 32,
            height: 32,
            gt_boxes: vec![
                gt_box(0, 0.0, 0.0, 16.0, 16.0),
                gt_box(1, 0.0, 0.0, 16.0, 16.0),
            ],
            pred_boxes: vec![],
            image_path: None,
        };
        let patch = PatchRef {
            dataset: "d".into(),
            image_id: "a".into(),
            x: 0,
            y: 0,
            side: 32,
            index: 0,
            anchor_class: None,
        };
        let map = rasterize_boxes(&sample, &patch, 32, 2);
        // identical areas: later file entry paints last and wins
        assert_eq!(map.get(4, 4), 1);
    }
}
