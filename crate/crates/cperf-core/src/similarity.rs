//! Label similarity between patches and the construction of match batches.
//!
//! Exact similarity is the fraction of grid cells holding equal class IDs.
//! Candidate search prunes with an admissible histogram bound (matched cells
//! per class never exceed the smaller per-class count), so the pruned result
//! set is identical to an exhaustive scan.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelMap, Mode, Samples};
use crate::error::{Error, Result};
use crate::sampling::{anchor_object_patches, sample_random_patches, PatchRef, PatchSpec};

/// Side length of the majority-class grid inside a `PatchSignature`.
pub const SIGNATURE_GRID: usize = 8;

/// Compact content descriptor of a patch, used to rule candidates out
/// before paying for an exact cell-by-cell comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSignature {
    /// Cell counts per class ID, ascending by ID; counts sum to `cells`.
    pub class_histogram: Vec<(u16, u32)>,
    /// Majority class per block of a `coarse_g` x `coarse_g` partition,
    /// row-major; ties go to the smallest class ID.
    pub coarse_grid: Vec<u16>,
    pub coarse_g: usize,
    /// Total cell count the signature was built over.
    pub cells: u64,
}

/// One reference patch together with every patch matching it on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchBatch {
    pub reference: PatchRef,
    /// Matching patches from dataset A with their exact similarities,
    /// in pool order. Contains the reference itself when it came from A.
    pub members_a: Vec<(PatchRef, f64)>,
    /// Matching patches from dataset B, in pool order.
    pub members_b: Vec<(PatchRef, f64)>,
    /// Class of the anchoring ground-truth box (detection mode).
    pub anchor_class: Option<u16>,
}

/// Search-effort counters. Shared across worker threads; the totals are
/// independent of scheduling, so reports stay deterministic.
#[derive(Debug, Default)]
pub struct MatchCounters {
    considered: AtomicU64,
    bound_skipped: AtomicU64,
    exact_checked: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// Candidate pairs examined.
    pub considered: u64,
    /// Pairs dismissed by the signature bound alone.
    pub bound_skipped: u64,
    /// Pairs that went through an exact comparison.
    pub exact_checked: u64,
}

impl MatchCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            considered: self.considered.load(Ordering::Relaxed),
            bound_skipped: self.bound_skipped.load(Ordering::Relaxed),
            exact_checked: self.exact_checked.load(Ordering::Relaxed),
        }
    }
}

impl CounterSnapshot {
    /// Fraction of considered pairs dismissed without an exact comparison.
    pub fn skip_rate(&self) -> f64 {
        if self.considered == 0 {
            0.0
        } else {
            self.bound_skipped as f64 / self.considered as f64
        }
    }
}

/// Borrowed view of a patch's label grid: either a window into a full
/// image map or a pre-rasterized grid.
#[derive(Debug, Clone, Copy)]
pub enum PatchView<'a> {
    Window {
        map: &'a LabelMap,
        x: usize,
        y: usize,
        side: usize,
    },
    Grid(&'a LabelMap),
}

impl<'a> PatchView<'a> {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            PatchView::Window { side, .. } => (*side, *side),
            PatchView::Grid(map) => (map.width(), map.height()),
        }
    }

    /// Row `r` of the patch grid as a slice.
    pub fn row(&self, r: usize) -> &'a [u16] {
        match self {
            PatchView::Window { map, x, y, side } => &map.row(y + r)[*x..x + side],
            PatchView::Grid(map) => map.row(r),
        }
    }
}

/// Fraction of cells holding equal class IDs. The ignore ID participates
/// like any other value: it equals only itself.
pub fn pixel_similarity(c: &LabelMap, a: &LabelMap) -> Result<f64> {
    if c.width() != a.width() || c.height() != a.height() {
        return Err(Error::ShapeMismatch(
            c.width(),
            c.height(),
            a.width(),
            a.height(),
        ));
    }
    Ok(view_similarity(&PatchView::Grid(c), &PatchView::Grid(a)))
}

/// Exact similarity of two equal-dimension views. Full scan, no early exit.
fn view_similarity(c: &PatchView, a: &PatchView) -> f64 {
    let (w, h) = c.dims();
    let mut matches: u64 = 0;
    for r in 0..h {
        matches += row_matches(c.row(r), a.row(r));
    }
    matches as f64 / (w as u64 * h as u64) as f64
}

/// Exact similarity with early exit: returns None as soon as the remaining
/// cells cannot lift the ratio to `t`. A returned value is always the same
/// number a full scan would produce, so membership decisions are unchanged.
fn view_similarity_at_least(c: &PatchView, a: &PatchView, t: f64) -> Option<f64> {
    let (w, h) = c.dims();
    let cells = (w as u64 * h as u64) as f64;
    let mut matches: u64 = 0;
    for r in 0..h {
        matches += row_matches(c.row(r), a.row(r));
        let remaining = (w as u64) * (h - 1 - r) as u64;
        if ((matches + remaining) as f64) / cells < t {
            return None;
        }
    }
    Some(matches as f64 / cells)
}

fn row_matches(c: &[u16], a: &[u16]) -> u64 {
    debug_assert_eq!(c.len(), a.len());
    c.iter().zip(a).filter(|(x, y)| x == y).count() as u64
}

/// Build the histogram-plus-majority-grid descriptor of a label grid.
pub fn compute_signature(labels: &LabelMap, g: usize) -> PatchSignature {
    signature_of_view(&PatchView::Grid(labels), g)
}

fn signature_of_view(view: &PatchView, g: usize) -> PatchSignature {
    let (w, h) = view.dims();
    let mut histogram: BTreeMap<u16, u32> = BTreeMap::new();
    for r in 0..h {
        for &v in view.row(r) {
            *histogram.entry(v).or_insert(0) += 1;
        }
    }

    // blocks must each cover at least one cell
    let g_eff = g.min(w).min(h).max(1);
    let mut coarse = Vec::with_capacity(g_eff * g_eff);
    for by in 0..g_eff {
        let y0 = by * h / g_eff;
        let y1 = (by + 1) * h / g_eff;
        for bx in 0..g_eff {
            let x0 = bx * w / g_eff;
            let x1 = (bx + 1) * w / g_eff;
            let mut counts: BTreeMap<u16, u32> = BTreeMap::new();
            for r in y0..y1 {
                for &v in &view.row(r)[x0..x1] {
                    *counts.entry(v).or_insert(0) += 1;
                }
            }
            // ascending iteration plus strict comparison keeps the
            // smallest ID on ties
            let mut best = (u16::MAX, 0u32);
            for (&id, &n) in &counts {
                if n > best.1 {
                    best = (id, n);
                }
            }
            coarse.push(best.0);
        }
    }

    PatchSignature {
        class_histogram: histogram.into_iter().collect(),
        coarse_grid: coarse,
        coarse_g: g_eff,
        cells: w as u64 * h as u64,
    }
}

/// Upper bound on `pixel_similarity` from histograms alone: cells matched
/// per class cannot exceed the smaller of the two per-class counts.
pub fn similarity_upper_bound(sc: &PatchSignature, sa: &PatchSignature) -> Result<f64> {
    if sc.cells != sa.cells {
        return Err(Error::CellCountMismatch(
            sc.cells as usize,
            sa.cells as usize,
        ));
    }
    let mut shared: u64 = 0;
    let (mut i, mut j) = (0, 0);
    while i < sc.class_histogram.len() && j < sa.class_histogram.len() {
        let (id_c, n_c) = sc.class_histogram[i];
        let (id_a, n_a) = sa.class_histogram[j];
        match id_c.cmp(&id_a) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += n_c.min(n_a) as u64;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(shared as f64 / sc.cells as f64)
}

/// A dataset's sampled patches with their label grids and signatures,
/// ready for similarity search. Patches appear in dataset order: samples
/// in manifest order, patch index ascending within each image.
pub struct PatchPool<'a> {
    dataset: &'a Dataset,
    patches: Vec<PatchRef>,
    entries: Vec<PoolEntry>,
    signatures: Vec<PatchSignature>,
    by_key: HashMap<(String, usize), usize>,
}

enum PoolEntry {
    /// Segmentation: window into the sample's ground-truth map.
    Window { sample: usize },
    /// Detection: rasterized box grid.
    Grid(LabelMap),
}

impl<'a> PatchPool<'a> {
    /// Sample the dataset's patch pool per its mode and index it for search.
    pub fn build(dataset: &'a Dataset, spec: &PatchSpec) -> Result<Self> {
        let patches = match dataset.mode() {
            Mode::Segmentation => sample_random_patches(dataset, spec)?,
            Mode::Detection => anchor_object_patches(dataset, spec)?,
        };
        Self::from_patches(dataset, patches, spec)
    }

    /// Index an explicit patch list (must reference images of `dataset`).
    pub fn from_patches(
        dataset: &'a Dataset,
        patches: Vec<PatchRef>,
        spec: &PatchSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let sample_pos: HashMap<&str, usize> = match &dataset.samples {
            Samples::Segmentation(s) => s
                .iter()
                .enumerate()
                .map(|(i, s)| (s.image_id.as_str(), i))
                .collect(),
            Samples::Detection(s) => s
                .iter()
                .enumerate()
                .map(|(i, s)| (s.image_id.as_str(), i))
                .collect(),
        };

        let entries: Vec<PoolEntry> = patches
            .par_iter()
            .map(|patch| {
                let pos = *sample_pos.get(patch.image_id.as_str()).unwrap_or_else(|| {
                    panic!("patch references unknown image {:?}", patch.image_id)
                });
                match &dataset.samples {
                    Samples::Segmentation(_) => PoolEntry::Window { sample: pos },
                    Samples::Detection(samples) => {
                        let background = dataset
                            .legend
                            .background_id()
                            .expect("detection legend carries a background class");
                        PoolEntry::Grid(crate::sampling::rasterize_boxes(
                            &samples[pos],
                            patch,
                            spec.det_grid,
                            background,
                        ))
                    }
                }
            })
            .collect();

        let signatures: Vec<PatchSignature> = entries
            .par_iter()
            .zip(patches.par_iter())
            .map(|(entry, patch)| {
                let view = entry_view(entry, patch, dataset);
                signature_of_view(&view, SIGNATURE_GRID)
            })
            .collect();

        let by_key = patches
            .iter()
            .enumerate()
            .map(|(pos, p)| ((p.image_id.clone(), p.index), pos))
            .collect();

        Ok(PatchPool {
            dataset,
            patches,
            entries,
            signatures,
            by_key,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn patches(&self) -> &[PatchRef] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Pool position of the patch with this image ID and in-image index.
    pub fn position(&self, image_id: &str, index: usize) -> Option<usize> {
        self.by_key.get(&(image_id.to_string(), index)).copied()
    }

    pub fn view(&self, pos: usize) -> PatchView<'_> {
        entry_view(&self.entries[pos], &self.patches[pos], self.dataset)
    }

    pub fn signature(&self, pos: usize) -> &PatchSignature {
        &self.signatures[pos]
    }
}

fn entry_view<'p>(entry: &'p PoolEntry, patch: &PatchRef, dataset: &'p Dataset) -> PatchView<'p> {
    match entry {
        PoolEntry::Window { sample } => PatchView::Window {
            map: &dataset.seg_samples()[*sample].gt,
            x: patch.x,
            y: patch.y,
            side: patch.side,
        },
        PoolEntry::Grid(map) => PatchView::Grid(map),
    }
}

/// All pool members with exact similarity >= t against the reference, in
/// pool order. `store` is the pool holding the reference's labels (the
/// candidate pool itself in a same-dataset scan). The signature bound only
/// skips candidates; it never changes the result set.
pub fn find_similar(
    reference: &PatchRef,
    pool: &PatchPool<'_>,
    spec: &PatchSpec,
    store: &PatchPool<'_>,
    counters: &MatchCounters,
) -> Vec<(PatchRef, f64)> {
    let ref_pos = store
        .position(&reference.image_id, reference.index)
        .unwrap_or_else(|| panic!("reference patch not present in its store"));
    match_positions(ref_pos, store, pool, spec, counters)
        .into_iter()
        .map(|(pos, sim)| (pool.patches[pos].clone(), sim))
        .collect()
}

/// Core scan: pool positions matching the store's `ref_pos` patch.
/// Detection mode compares only same-anchor-class candidates.
fn match_positions(
    ref_pos: usize,
    store: &PatchPool<'_>,
    pool: &PatchPool<'_>,
    spec: &PatchSpec,
    counters: &MatchCounters,
) -> Vec<(usize, f64)> {
    let t = spec.threshold;
    let ref_view = store.view(ref_pos);
    let ref_sig = store.signature(ref_pos);
    let ref_class = store.patches[ref_pos].anchor_class;

    let mut considered = 0u64;
    let mut skipped = 0u64;
    let mut exact = 0u64;
    let mut out = Vec::new();
    for (pos, patch) in pool.patches.iter().enumerate() {
        if patch.anchor_class != ref_class {
            continue;
        }
        considered += 1;
        let bound = similarity_upper_bound(ref_sig, pool.signature(pos))
            .expect("pool patches share the reference's grid resolution");
        if bound < t {
            skipped += 1;
            continue;
        }
        exact += 1;
        if let Some(sim) = view_similarity_at_least(&ref_view, &pool.view(pos), t) {
            if sim >= t {
                out.push((pos, sim));
            }
        }
    }
    counters.considered.fetch_add(considered, Ordering::Relaxed);
    counters.bound_skipped.fetch_add(skipped, Ordering::Relaxed);
    counters.exact_checked.fetch_add(exact, Ordering::Relaxed);
    out
}

/// Which pool the reference patches are drawn from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSide {
    #[default]
    A,
    B,
    Both,
}

impl std::fmt::Display for ReferenceSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReferenceSide::A => write!(f, "a"),
            ReferenceSide::B => write!(f, "b"),
            ReferenceSide::Both => write!(f, "both"),
        }
    }
}

impl std::str::FromStr for ReferenceSide {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "a" => Ok(ReferenceSide::A),
            "b" => Ok(ReferenceSide::B),
            "both" => Ok(ReferenceSide::Both),
            other => Err(format!(
                "unknown reference side {other:?}, expected a, b, or both"
            )),
        }
    }
}

/// Batch skeleton carrying pool positions instead of patch clones; the
/// building block shared by the public API and the streaming run path.
#[derive(Debug, Clone)]
pub(crate) struct IndexBatch {
    /// true when the reference lives in pool A
    pub ref_in_a: bool,
    pub reference: usize,
    pub members_a: Vec<(usize, f64)>,
    pub members_b: Vec<(usize, f64)>,
}

/// One candidate batch per reference; batches short of `min_batch_per_side`
/// members on either side are dropped. References scan in pool order, so
/// output order and content are identical for any worker count.
pub(crate) fn build_index_batches(
    pool_a: &PatchPool<'_>,
    pool_b: &PatchPool<'_>,
    side: ReferenceSide,
    spec: &PatchSpec,
    counters: &MatchCounters,
) -> Vec<IndexBatch> {
    let mut refs: Vec<(bool, usize)> = Vec::new();
    if matches!(side, ReferenceSide::A | ReferenceSide::Both) {
        refs.extend((0..pool_a.len()).map(|i| (true, i)));
    }
    if matches!(side, ReferenceSide::B | ReferenceSide::Both) {
        refs.extend((0..pool_b.len()).map(|i| (false, i)));
    }

    refs.par_iter()
        .filter_map(|&(ref_in_a, ref_pos)| {
            let store = if ref_in_a { pool_a } else { pool_b };
            let members_a = match_positions(ref_pos, store, pool_a, spec, counters);
            if members_a.len() < spec.min_batch_per_side {
                return None;
            }
            let members_b = match_positions(ref_pos, store, pool_b, spec, counters);
            if members_b.len() < spec.min_batch_per_side {
                return None;
            }
            Some(IndexBatch {
                ref_in_a,
                reference: ref_pos,
                members_a,
                members_b,
            })
        })
        .collect()
}

/// Materialize full batches for the given reference patches (normally pool
/// A's own patch list). Each surviving batch lists every matching patch on
/// both sides with its exact similarity.
pub fn build_batches(
    references: &[PatchRef],
    pool_a: &PatchPool<'_>,
    pool_b: &PatchPool<'_>,
    spec: &PatchSpec,
    counters: &MatchCounters,
) -> Vec<MatchBatch> {
    references
        .par_iter()
        .filter_map(|reference| {
            let store = if reference.dataset == pool_a.dataset().name {
                pool_a
            } else {
                pool_b
            };
            let ref_pos = store
                .position(&reference.image_id, reference.index)
                .unwrap_or_else(|| panic!("reference patch not present in its dataset's pool"));
            let members_a = match_positions(ref_pos, store, pool_a, spec, counters);
            if members_a.len() < spec.min_batch_per_side {
                return None;
            }
            let members_b = match_positions(ref_pos, store, pool_b, spec, counters);
            if members_b.len() < spec.min_batch_per_side {
                return None;
            }
            Some(MatchBatch {
                reference: reference.clone(),
                members_a: members_a
                    .into_iter()
                    .map(|(pos, sim)| (pool_a.patches[pos].clone(), sim))
                    .collect(),
                members_b: members_b
                    .into_iter()
                    .map(|(pos, sim)| (pool_b.patches[pos].clone(), sim))
                    .collect(),
                anchor_class: reference.anchor_class,
            })
        })
        .collect()
}
