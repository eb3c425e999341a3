//! Python bindings for contextualized-performance dataset comparison:
//! synthetic dataset generation, manifest inspection, pixel-level label
//! similarity, and the full two-dataset comparison returning nested dicts.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use cperf_core::cperf::Estimator;
use cperf_core::dataset::{load_dataset, load_manifest, validate_pairing, LabelMap, IGNORE_ID};
use cperf_core::error::Error as CoreError;
use cperf_core::metrics::MetricKind;
use cperf_core::run::{run_comparison, BootstrapSettings, ComparisonConfig, Preset};
use cperf_core::similarity::ReferenceSide;
use cperf_core::synth::{generate_synthetic, SynthPattern, SynthSpec};

fn core_err(e: CoreError) -> PyErr {
    match &e {
        CoreError::InvalidSpec(_)
        | CoreError::Config(_)
        | CoreError::NoBatches
        | CoreError::TooFewBatches(_)
        | CoreError::ShapeMismatch(..)
        | CoreError::CellCountMismatch(..) => PyValueError::new_err(e.to_string()),
        CoreError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Recursive JSON-to-Python conversion; report payloads come out as the
/// same nested dict shape that `report.json` carries.
fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    match value {
        serde_json::Value::Null => Ok(py.None()),
        serde_json::Value::Bool(b) => b.into_py_any(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64()
                    .ok_or_else(|| PyValueError::new_err("non-finite number in report"))?
                    .into_py_any(py)
            }
        }
        serde_json::Value::String(s) => s.into_py_any(py),
        serde_json::Value::Array(items) => {
            let converted = items
                .iter()
                .map(|item| json_to_py(py, item))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, converted)?.into_py_any(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

/// Comparison knobs mirrored as plain Python attributes; enum-valued
/// fields take the same strings the command line accepts.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct ComparisonOptions {
    #[pyo3(get, set)]
    patch_size: usize,
    #[pyo3(get, set)]
    patches_per_image: usize,
    #[pyo3(get, set)]
    threshold: f64,
    #[pyo3(get, set)]
    min_batch: usize,
    #[pyo3(get, set)]
    anchor_scale: f64,
    #[pyo3(get, set)]
    seed: u64,
    /// None selects the mode default: pixel_accuracy for segmentation,
    /// detection_hit for detection.
    #[pyo3(get, set)]
    metric: Option<String>,
    #[pyo3(get, set)]
    estimator: String,
    #[pyo3(get, set)]
    reference_side: String,
    #[pyo3(get, set)]
    weight_by_size: bool,
    /// Bootstrap resample count; None skips the confidence interval.
    #[pyo3(get, set)]
    bootstrap: Option<usize>,
    #[pyo3(get, set)]
    level: f64,
}

impl ComparisonOptions {
    fn from_config(config: &ComparisonConfig) -> Self {
        ComparisonOptions {
            patch_size: config.spec.patch_size,
            patches_per_image: config.spec.patches_per_image,
            threshold: config.spec.threshold,
            min_batch: config.spec.min_batch_per_side,
            anchor_scale: config.spec.anchor_scale,
            seed: config.spec.seed,
            metric: config.metric.map(|m| m.to_string()),
            estimator: config.estimator.to_string(),
            reference_side: config.reference_side.to_string(),
            weight_by_size: config.weight_by_size,
            bootstrap: config.bootstrap.map(|b| b.resamples),
            level: config.bootstrap.unwrap_or_default().level,
        }
    }

    fn to_config(&self) -> PyResult<ComparisonConfig> {
        let mut config = ComparisonConfig::default();
        config.spec.patch_size = self.patch_size;
        config.spec.patches_per_image = self.patches_per_image;
        config.spec.threshold = self.threshold;
        config.spec.min_batch_per_side = self.min_batch;
        config.spec.anchor_scale = self.anchor_scale;
        config.spec.seed = self.seed;
        config.metric = match &self.metric {
            Some(text) => Some(MetricKind::from_str(text).map_err(PyValueError::new_err)?),
            None => None,
        };
        config.estimator = Estimator::from_str(&self.estimator).map_err(PyValueError::new_err)?;
        config.reference_side =
            ReferenceSide::from_str(&self.reference_side).map_err(PyValueError::new_err)?;
        config.weight_by_size = self.weight_by_size;
        config.bootstrap = self.bootstrap.map(|resamples| BootstrapSettings {
            resamples,
            level: self.level,
        });
        Ok(config)
    }
}

#[pymethods]
impl ComparisonOptions {
    #[new]
    fn new() -> Self {
        ComparisonOptions::from_config(&ComparisonConfig::default())
    }

    fn __repr__(&self) -> String {
        format!(
            "ComparisonOptions(patch_size={}, patches_per_image={}, threshold={}, \
             min_batch={}, anchor_scale={}, seed={}, metric={:?}, estimator={:?}, \
             reference_side={:?}, weight_by_size={}, bootstrap={:?}, level={})",
            self.patch_size,
            self.patches_per_image,
            self.threshold,
            self.min_batch,
            self.anchor_scale,
            self.seed,
            self.metric,
            self.estimator,
            self.reference_side,
            self.weight_by_size,
            self.bootstrap,
            self.level,
        )
    }
}

/// Options pre-filled from a named preset: city128, city256, or cones.
#[pyfunction]
fn preset_options(name: &str) -> PyResult<ComparisonOptions> {
    let preset = Preset::from_str(name).map_err(PyValueError::new_err)?;
    let mut config = ComparisonConfig::default();
    preset.apply(&mut config.spec);
    Ok(ComparisonOptions::from_config(&config))
}

/// Fraction of equally labeled cells between two same-shape label grids,
/// each given as a row-major flat list. Cells holding IGNORE_ID match
/// only cells holding IGNORE_ID.
#[pyfunction]
fn pixel_similarity(a: Vec<u16>, b: Vec<u16>, width: usize) -> PyResult<f64> {
    if width == 0 || !a.len().is_multiple_of(width) {
        return Err(PyValueError::new_err(format!(
            "flat length {} does not tile into rows of width {width}",
            a.len()
        )));
    }
    let height = a.len() / width;
    let height_b = b.len() / width;
    let map_a = LabelMap::new(width, height, a).map_err(core_err)?;
    let map_b = LabelMap::new(width, height_b.max(1), b).map_err(core_err)?;
    cperf_core::similarity::pixel_similarity(&map_a, &map_b).map_err(core_err)
}

/// Writes a synthetic dataset tree under `out_dir` and returns a dict with
/// its name, manifest path, and sample count.
#[pyfunction]
#[pyo3(signature = (out_dir, images, size, classes, pattern = "blocks", corrupt = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    py: Python<'_>,
    out_dir: PathBuf,
    images: usize,
    size: usize,
    classes: u16,
    pattern: &str,
    corrupt: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let spec = SynthSpec {
        images,
        size,
        classes,
        pattern: SynthPattern::from_str(pattern).map_err(PyValueError::new_err)?,
        corrupt,
        seed,
    };
    let (dataset, manifest_path) = py
        .detach(|| generate_synthetic(&spec, &out_dir))
        .map_err(core_err)?;
    let info = PyDict::new(py);
    info.set_item("name", &dataset.name)?;
    info.set_item("manifest", manifest_path.display().to_string())?;
    info.set_item("samples", dataset.samples.len())?;
    info.into_py_any(py)
}

/// Loads one manifest and returns a dict describing the dataset.
#[pyfunction]
fn dataset_info(py: Python<'_>, manifest: PathBuf) -> PyResult<Py<PyAny>> {
    let (dataset, report) = py
        .detach(|| {
            let description = load_manifest(&manifest)?;
            load_dataset(&description)
        })
        .map_err(core_err)?;
    let info = PyDict::new(py);
    info.set_item("name", &dataset.name)?;
    info.set_item("mode", dataset.mode().to_string())?;
    info.set_item("samples", dataset.samples.len())?;
    info.set_item("classes", dataset.legend.num_classes())?;
    info.set_item("unmapped_pixels", report.unmapped_pixels)?;
    info.into_py_any(py)
}

/// Compares two datasets and returns the full outcome as nested dicts,
/// the same shape `report.json` carries.
#[pyfunction]
#[pyo3(signature = (manifest_a, manifest_b, options = None))]
fn compare(
    py: Python<'_>,
    manifest_a: PathBuf,
    manifest_b: PathBuf,
    options: Option<ComparisonOptions>,
) -> PyResult<Py<PyAny>> {
    let config = options.unwrap_or_else(ComparisonOptions::new).to_config()?;
    let outcome = py
        .detach(|| {
            let (dataset_a, _) = load_dataset(&load_manifest(&manifest_a)?)?;
            let (dataset_b, _) = load_dataset(&load_manifest(&manifest_b)?)?;
            validate_pairing(&dataset_a, &dataset_b)?;
            run_comparison(&dataset_a, &dataset_b, &config)
        })
        .map_err(core_err)?;
    let value = serde_json::to_value(&outcome)
        .map_err(|e| PyRuntimeError::new_err(format!("outcome serialization failed: {e}")))?;
    json_to_py(py, &value)
}

#[pymodule]
fn cperf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IGNORE_ID", IGNORE_ID)?;
    m.add_class::<ComparisonOptions>()?;
    m.add_function(wrap_pyfunction!(preset_options, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_info, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
