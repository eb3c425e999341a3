use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ClassLegend, Mode};

/// Raw class declaration in a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassDef {
    pub raw_id: u32,
    pub name: String,
}

/// Legend section of a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LegendDef {
    pub classes: Vec<ClassDef>,
    #[serde(default)]
    pub ignore_raw_ids: Vec<u32>,
}

/// Segmentation sample entry: label raster paths, image optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegSampleRef {
    pub image_id: String,
    pub gt_path: PathBuf,
    pub pred_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

/// Detection sample entry: image extent plus box-list file paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetSampleRef {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub gt_boxes_path: PathBuf,
    pub pred_boxes_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum SampleRef {
    Seg(SegSampleRef),
    Det(DetSampleRef),
}

impl SampleRef {
    pub fn image_id(&self) -> &str {
        match self {
            SampleRef::Seg(s) => &s.image_id,
            SampleRef::Det(s) => &s.image_id,
        }
    }
}

/// JSON shape of a manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    mode: Mode,
    legend: LegendDef,
    samples: serde_json::Value,
}

/// Parsed manifest: dataset identity, legend, and per-sample file references.
/// No pixel data is loaded at this stage.
#[derive(Debug, Clone)]
pub struct DatasetManifestDescription {
    pub name: String,
    pub mode: Mode,
    pub legend: ClassLegend,
    pub samples: Vec<SampleRef>,
    /// Directory the manifest lives in; sample paths resolve against it.
    pub base_dir: PathBuf,
}

impl DatasetManifestDescription {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Parse and validate a dataset manifest without loading rasters or boxes.
pub fn load_manifest(path: &Path) -> Result<DatasetManifestDescription> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;

    if file.name.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "dataset name must be non-empty".into(),
        });
    }

    let class_defs: Vec<(u32, String)> = file
        .legend
        .classes
        .iter()
        .map(|c| (c.raw_id, c.name.clone()))
        .collect();
    let mut legend = ClassLegend::from_defs(&class_defs, &file.legend.ignore_raw_ids)?;
    if file.mode == Mode::Detection {
        legend.ensure_class(super::BACKGROUND_CLASS);
    }

    let samples = parse_samples(path, file.mode, file.samples)?;
    if samples.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "manifest must list at least one sample".into(),
        });
    }

    let mut seen = BTreeSet::new();
    for s in &samples {
        if !seen.insert(s.image_id().to_string()) {
            return Err(Error::DuplicateImageId(s.image_id().to_string()));
        }
    }

    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    Ok(DatasetManifestDescription {
        name: file.name,
        mode: file.mode,
        legend,
        samples,
        base_dir,
    })
}

fn parse_samples(path: &Path, mode: Mode, value: serde_json::Value) -> Result<Vec<SampleRef>> {
    let bad = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    match mode {
        Mode::Segmentation => {
            let refs: Vec<SegSampleRef> =
                serde_json::from_value(value).map_err(|e| bad(format!("samples: {e}")))?;
            Ok(refs.into_iter().map(SampleRef::Seg).collect())
        }
        Mode::Detection => {
            let refs: Vec<DetSampleRef> =
                serde_json::from_value(value).map_err(|e| bad(format!("samples: {e}")))?;
            for r in &refs {
                if r.width == 0 || r.height == 0 {
                    return Err(bad(format!(
                        "sample {:?} has zero image extent",
                        r.image_id
                    )));
                }
            }
            Ok(refs.into_iter().map(SampleRef::Det).collect())
        }
    }
}

/// One box row in a detection box file. `class` may be a class name or a raw id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRecord {
    pub class: serde_json::Value,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}
