//! Dataset model: class legends, label maps, detection boxes, and the
//! manifest loader that normalizes everything to a canonical class space.
//!
//! Label rasters are the interchange format for segmentation (ground truth
//! and predictions); the tool never runs a perception model. Datasets are
//! immutable after loading and safe to share across threads.

mod legend;
mod loader;
mod manifest;

pub use legend::{ClassLegend, LegendEntry};
pub use loader::{load_dataset, validate_pairing, LoadReport, PairingReport};
pub use manifest::{
    load_manifest, BoxRecord, ClassDef, DatasetManifestDescription, DetSampleRef, LegendDef,
    SampleRef, SegSampleRef,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved canonical class ID marking pixels excluded from scoring.
/// The maximum representable ID so canonical IDs can stay dense from 0.
pub const IGNORE_ID: u16 = u16::MAX;

/// Name of the implicit background class appended to detection legends.
pub const BACKGROUND_CLASS: &str = "background";

/// Analysis mode of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Segmentation,
    Detection,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Segmentation => write!(f, "segmentation"),
            Mode::Detection => write!(f, "detection"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "segmentation" => Ok(Mode::Segmentation),
            "detection" => Ok(Mode::Detection),
            other => Err(format!(
                "unknown mode {other:?}, expected segmentation or detection"
            )),
        }
    }
}

/// 2D grid of canonical class IDs for one image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Legend(format!(
                "label map dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Legend(format!(
                "label map data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    /// Constant-valued map, mostly useful for tests and rasterization.
    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        LabelMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u16) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u16] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Copy of the `side x side` window with top-left corner `(x, y)`.
    pub fn window(&self, x: usize, y: usize, side_w: usize, side_h: usize) -> LabelMap {
        assert!(
            x + side_w <= self.width && y + side_h <= self.height,
            "window ({x},{y}) {side_w}x{side_h} exceeds map {}x{}",
            self.width,
            self.height
        );
        let mut data = Vec::with_capacity(side_w * side_h);
        for row in y..y + side_h {
            data.extend_from_slice(&self.row(row)[x..x + side_w]);
        }
        LabelMap {
            width: side_w,
            height: side_h,
            data,
        }
    }
}

/// One segmentation sample: ground truth and prediction label maps of equal size.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image_id: String,
    pub gt: LabelMap,
    pub pred: LabelMap,
    /// Optional RGB image path, used only for report thumbnails.
    pub image_path: Option<std::path::PathBuf>,
}

/// Axis-aligned box with a canonical class.
///
/// Ground-truth boxes carry confidence 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub class_id: u16,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Whether the box rectangle intersects the `width x height` image rectangle.
    pub fn intersects_image(&self, width: usize, height: usize) -> bool {
        self.x < width as f64
            && self.y < height as f64
            && self.x + self.w > 0.0
            && self.y + self.h > 0.0
    }
}

/// One detection sample: image extent plus ground-truth and predicted boxes.
#[derive(Debug, Clone)]
pub struct DetSample {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub gt_boxes: Vec<DetectionBox>,
    pub pred_boxes: Vec<DetectionBox>,
    pub image_path: Option<std::path::PathBuf>,
}

/// Samples of a dataset, homogeneous in mode.
#[derive(Debug, Clone)]
pub enum Samples {
    Segmentation(Vec<SegSample>),
    Detection(Vec<DetSample>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Segmentation(v) => v.len(),
            Samples::Detection(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A loaded, validated, immutable dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub legend: ClassLegend,
    pub samples: Samples,
}

impl Dataset {
    pub fn mode(&self) -> Mode {
        match self.samples {
            Samples::Segmentation(_) => Mode::Segmentation,
            Samples::Detection(_) => Mode::Detection,
        }
    }

    pub fn seg_samples(&self) -> &[SegSample] {
        match &self.samples {
            Samples::Segmentation(v) => v,
            Samples::Detection(_) => &[],
        }
    }

    pub fn det_samples(&self) -> &[DetSample] {
        match &self.samples {
            Samples::Detection(v) => v,
            Samples::Segmentation(_) => &[],
        }
    }

    /// Per-class content histogram: gt pixel counts per canonical ID for
    /// segmentation (ignore pixels under `IGNORE_ID`), gt box counts for
    /// detection. Keys are canonical IDs.
    pub fn class_histogram(&self) -> std::collections::BTreeMap<u16, u64> {
        let mut hist = std::collections::BTreeMap::new();
        match &self.samples {
            Samples::Segmentation(samples) => {
                for s in samples {
                    for &v in s.gt.data() {
                        *hist.entry(v).or_insert(0) += 1;
                    }
                }
            }
            Samples::Detection(samples) => {
                for s in samples {
                    for b in &s.gt_boxes {
                        *hist.entry(b.class_id).or_insert(0) += 1;
                    }
                }
            }
        }
        hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_copies_requested_region() {
        let map = LabelMap::new(4, 3, (0..12).collect()).unwrap();
        let win = map.window(1, 1, 2, 2);
        assert_eq!(win.data(), &[5, 6, 9, 10]);
    }

    #[test]
    fn zero_sized_map_rejected() {
        assert!(LabelMap::new(0, 4, vec![]).is_err());
        assert!(LabelMap::new(4, 0, vec![]).is_err());
    }

    #[test]
    fn box_image_intersection() {
        let b = DetectionBox {
            class_id: 0,
            x: -5.0,
            y: -5.0,
            w: 10.0,
            h: 10.0,
            confidence: 1.0,
        };
        assert!(b.intersects_image(640, 480));
        let outside = DetectionBox {
            class_id: 0,
            x: 700.0,
            y: 0.0,
            w: 10.0,
            h: 10.0,
            confidence: 1.0,
        };
        assert!(!outside.intersects_image(640, 480));
    }
}
