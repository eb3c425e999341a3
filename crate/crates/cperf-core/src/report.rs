//! Report emission: a JSON payload with the full result, a CSV table of
//! batch errors, an SVG bar chart, and optional patch contact sheets.
//!
//! Payload files are byte-deterministic for a given outcome: no
//! timestamps, no host details, fixed number formatting. Volatile run
//! metadata belongs in a separate sidecar written by the caller.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::dataset::{Dataset, Samples};
use crate::error::{Error, Result};
use crate::run::RunOutcome;
use crate::sampling::PatchRef;
use crate::similarity::{find_similar, MatchCounters, PatchPool};
use crate::PatchSpec;

/// Payload formats a run can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl std::fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Svg => "svg",
        })
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!(
                "unknown report format {other:?}; expected json, csv, or svg"
            )),
        }
    }
}

/// Parse a comma-separated format list, deduplicated and order-normalized.
pub fn parse_formats(s: &str) -> std::result::Result<Vec<ReportFormat>, String> {
    let mut formats: Vec<ReportFormat> = s
        .split(',')
        .filter(|part| !part.trim().is_empty())
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()?;
    formats.sort();
    formats.dedup();
    if formats.is_empty() {
        return Err("no report formats given".into());
    }
    Ok(formats)
}

/// Write the selected payload files into `out_dir` and return their paths.
pub fn emit_report(
    outcome: &RunOutcome,
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for format in formats {
        let path = match format {
            ReportFormat::Json => write_json(outcome, out_dir)?,
            ReportFormat::Csv => write_csv(outcome, out_dir)?,
            ReportFormat::Svg => write_svg(outcome, out_dir)?,
        };
        written.push(path);
    }
    Ok(written)
}

fn write_json(outcome: &RunOutcome, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(outcome).expect("outcome serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_csv(outcome: &RunOutcome, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("batches.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    writer
        .write_record([
            "batch",
            "reference_image",
            "reference_index",
            "x",
            "y",
            "side",
            "anchor_class",
            "error",
            "mean_a",
            "mean_b",
            "n_a",
            "n_b",
        ])
        .and_then(|_| {
            for (i, e) in outcome.result.batch_errors.iter().enumerate() {
                writer.write_record([
                    i.to_string(),
                    e.reference.image_id.clone(),
                    e.reference.index.to_string(),
                    e.reference.x.to_string(),
                    e.reference.y.to_string(),
                    e.reference.side.to_string(),
                    e.anchor_class.map(|c| c.to_string()).unwrap_or_default(),
                    format_value(e.error),
                    format_value(e.mean_a),
                    format_value(e.mean_b),
                    e.n_a.to_string(),
                    e.n_b.to_string(),
                ])?;
            }
            writer.flush()?;
            Ok(())
        })
        .map_err(|e| Error::Io {
            path: path.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
    Ok(path)
}

/// Fixed-width value formatting keeps payloads byte-stable.
fn format_value(v: f64) -> String {
    format!("{v:.9}")
}

fn write_svg(outcome: &RunOutcome, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("cperf.svg");
    std::fs::write(&path, render_svg(outcome)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Bar chart: the overall difference first, then one bar per anchor class.
fn render_svg(outcome: &RunOutcome) -> String {
    let result = &outcome.result;
    let mut bars: Vec<(String, f64, usize)> = vec![(
        "overall".to_string(),
        result.cperf_difference,
        result.batches_formed,
    )];
    for (&class, cp) in &result.per_class {
        let label = outcome
            .stats
            .class_names
            .get(&class)
            .cloned()
            .unwrap_or_else(|| format!("class {class}"));
        bars.push((label, cp.cperf_difference, cp.batches));
    }

    let bar_w = 72.0;
    let gap = 28.0;
    let chart_h = 240.0;
    let margin_l = 64.0;
    let margin_top = 56.0;
    let label_h = 56.0;
    let width = margin_l + bars.len() as f64 * (bar_w + gap) + gap;
    let height = margin_top + chart_h + label_h;

    let max_v = bars
        .iter()
        .map(|(_, v, _)| *v)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let scale = chart_h / (max_v * 1.2);

    let title = match &result.config_echo {
        Some(echo) => format!(
            "{} vs {} (patch {}, {})",
            echo.dataset_a, echo.dataset_b, echo.spec.patch_size, echo.metric
        ),
        None => "contextualized performance difference".to_string(),
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str("  <style>text { font-family: sans-serif; fill: #222; }</style>\n");
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"24\" font-size=\"15\" font-weight=\"bold\">{}</text>\n",
        margin_l,
        escape_xml(&title)
    ));

    let axis_y = margin_top + chart_h;
    svg.push_str(&format!(
        "  <line x1=\"{margin_l:.1}\" y1=\"{axis_y:.1}\" x2=\"{:.1}\" y2=\"{axis_y:.1}\" \
         stroke=\"#444\"/>\n",
        width - gap
    ));

    let palette = [
        "#4878a8", "#c05850", "#58a868", "#a07838", "#7858a8", "#50a0a0",
    ];
    for (i, (label, value, batches)) in bars.iter().enumerate() {
        let x = margin_l + gap + i as f64 * (bar_w + gap);
        let h = value * scale;
        let y = axis_y - h;
        let color = palette[i % palette.len()];
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" \
             fill=\"{color}\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            y - 6.0,
            format_value(*value)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            axis_y + 18.0,
            escape_xml(label)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\" \
             fill=\"#666\">{} batches</text>\n",
            x + bar_w / 2.0,
            axis_y + 34.0,
            batches
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Contact sheets for the first `cap` batches: the reference patch plus
/// its closest members from each side, cropped from the datasets' RGB
/// images. Emitted only when every involved sample carries an image path;
/// batches without full imagery are skipped.
pub fn emit_batch_thumbnails(
    a: &Dataset,
    b: &Dataset,
    outcome: &RunOutcome,
    spec: &PatchSpec,
    out_dir: &Path,
    cap: usize,
    per_side: usize,
) -> Result<Vec<PathBuf>> {
    if cap == 0 || outcome.result.batch_errors.is_empty() {
        return Ok(Vec::new());
    }
    let dir = out_dir.join("thumbnails");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pool_a = PatchPool::build(a, spec)?;
    let pool_b = PatchPool::build(b, spec)?;
    let counters = MatchCounters::default();

    let mut written = Vec::new();
    for (i, batch) in outcome.result.batch_errors.iter().take(cap).enumerate() {
        let reference = &batch.reference;
        let store = if reference.dataset == a.name {
            &pool_a
        } else {
            &pool_b
        };
        let members_a = find_similar(reference, &pool_a, spec, store, &counters);
        let members_b = find_similar(reference, &pool_b, spec, store, &counters);
        let tiles_a = crop_tiles(a, &members_a, per_side);
        let tiles_b = crop_tiles(b, &members_b, per_side);
        let (Some(tiles_a), Some(tiles_b)) = (tiles_a, tiles_b) else {
            continue;
        };
        let sheet = compose_sheet(&tiles_a, &tiles_b);
        let path = dir.join(format!("batch_{i:04}.png"));
        sheet.save(&path).map_err(|e| Error::Raster {
            path: path.clone(),
            message: e.to_string(),
        })?;
        written.push(path);
    }
    Ok(written)
}

const TILE: u32 = 96;

/// Crop and resize the top members' patches; None when any needed image
/// is missing on disk or unreferenced in the manifest.
fn crop_tiles(
    dataset: &Dataset,
    members: &[(PatchRef, f64)],
    per_side: usize,
) -> Option<Vec<RgbImage>> {
    let image_paths: BTreeMap<&str, &Path> = match &dataset.samples {
        Samples::Segmentation(samples) => samples
            .iter()
            .filter_map(|s| Some((s.image_id.as_str(), s.image_path.as_deref()?)))
            .collect(),
        Samples::Detection(samples) => samples
            .iter()
            .filter_map(|s| Some((s.image_id.as_str(), s.image_path.as_deref()?)))
            .collect(),
    };
    let mut tiles = Vec::new();
    for (patch, _) in members.iter().take(per_side) {
        let path = image_paths.get(patch.image_id.as_str())?;
        let img = image::open(path).ok()?.to_rgb8();
        let crop = image::imageops::crop_imm(
            &img,
            patch.x as u32,
            patch.y as u32,
            patch.side as u32,
            patch.side as u32,
        )
        .to_image();
        tiles.push(image::imageops::resize(
            &crop,
            TILE,
            TILE,
            image::imageops::FilterType::Nearest,
        ));
    }
    if tiles.is_empty() {
        None
    } else {
        Some(tiles)
    }
}

/// Two rows of tiles: side A on top, side B below, on a white ground.
fn compose_sheet(tiles_a: &[RgbImage], tiles_b: &[RgbImage]) -> RgbImage {
    let pad = 4u32;
    let cols = tiles_a.len().max(tiles_b.len()) as u32;
    let width = cols * (TILE + pad) + pad;
    let height = 2 * (TILE + pad) + pad;
    let mut sheet = RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    for (row, tiles) in [tiles_a, tiles_b].into_iter().enumerate() {
        let y0 = pad + row as u32 * (TILE + pad);
        for (col, tile) in tiles.iter().enumerate() {
            let x0 = pad + col as u32 * (TILE + pad);
            image::imageops::overlay(&mut sheet, tile, x0 as i64, y0 as i64);
        }
    }
    sheet
}
