use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BACKGROUND_CLASS, IGNORE_ID};

/// One raw-to-canonical mapping row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub raw_id: u32,
    pub canonical_id: u16,
    pub name: String,
}

/// Mapping from a dataset's raw label scheme to a dense canonical vocabulary.
///
/// Canonical IDs start at 0 and are unique per class name; several raw IDs
/// may map to the same canonical class. Raw IDs in `ignore_raw_ids` remap to
/// [`IGNORE_ID`], as does any raw ID absent from the legend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLegend {
    entries: Vec<LegendEntry>,
    ignore_raw_ids: BTreeSet<u32>,
    /// Canonical names indexed by canonical ID.
    names: Vec<String>,
}

impl ClassLegend {
    /// Build a legend from `(raw_id, name)` rows plus an ignore set.
    ///
    /// Canonical IDs are assigned densely in order of first appearance of
    /// each name. A raw ID may appear at most once, and may not also be in
    /// the ignore set.
    pub fn from_defs(classes: &[(u32, String)], ignore_raw_ids: &[u32]) -> Result<Self> {
        let ignore: BTreeSet<u32> = ignore_raw_ids.iter().copied().collect();
        let mut entries = Vec::with_capacity(classes.len());
        let mut names: Vec<String> = Vec::new();
        let mut by_name: BTreeMap<String, u16> = BTreeMap::new();
        let mut seen_raw: BTreeSet<u32> = BTreeSet::new();

        for (raw_id, name) in classes {
            if !seen_raw.insert(*raw_id) {
                return Err(Error::Legend(format!(
                    "raw id {raw_id} appears more than once"
                )));
            }
            if ignore.contains(raw_id) {
                return Err(Error::Legend(format!(
                    "raw id {raw_id} is both mapped and ignored"
                )));
            }
            if name.is_empty() {
                return Err(Error::Legend("empty class name".into()));
            }
            let canonical_id = match by_name.get(name.as_str()) {
                Some(&id) => id,
                None => {
                    let id = names.len();
                    if id as u32 >= IGNORE_ID as u32 {
                        return Err(Error::Legend(format!(
                            "too many classes: canonical ids must stay below {IGNORE_ID}"
                        )));
                    }
                    names.push(name.clone());
                    by_name.insert(name.clone(), id as u16);
                    id as u16
                }
            };
            entries.push(LegendEntry {
                raw_id: *raw_id,
                canonical_id,
                name: name.clone(),
            });
        }

        Ok(ClassLegend {
            entries,
            ignore_raw_ids: ignore,
            names,
        })
    }

    /// Append a canonical class with no raw mapping (detection background).
    /// No-op if a class with that name exists.
    pub(crate) fn ensure_class(&mut self, name: &str) -> u16 {
        if let Some(id) = self.canonical_of_name(name) {
            return id;
        }
        let id = self.names.len() as u16;
        self.names.push(name.to_string());
        id
    }

    pub fn entries(&self) -> &[LegendEntry] {
        &self.entries
    }

    pub fn ignore_raw_ids(&self) -> &BTreeSet<u32> {
        &self.ignore_raw_ids
    }

    /// Number of canonical classes (for detection this includes background).
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn class_name(&self, canonical_id: u16) -> Option<&str> {
        if canonical_id == IGNORE_ID {
            return Some("ignore");
        }
        self.names.get(canonical_id as usize).map(|s| s.as_str())
    }

    pub fn canonical_of_name(&self, name: &str) -> Option<u16> {
        self.names.iter().position(|n| n == name).map(|i| i as u16)
    }

    /// Canonical ID of the background class, if one exists.
    pub fn background_id(&self) -> Option<u16> {
        self.canonical_of_name(BACKGROUND_CLASS)
    }

    /// Remap a raw ID to its canonical ID, or `IGNORE_ID` when unmapped.
    /// The second element reports whether the raw ID was unmapped (not
    /// listed and not explicitly ignored).
    #[inline]
    pub fn remap(&self, raw_id: u32) -> (u16, bool) {
        for e in &self.entries {
            if e.raw_id == raw_id {
                return (e.canonical_id, false);
            }
        }
        (IGNORE_ID, !self.ignore_raw_ids.contains(&raw_id))
    }

    /// Dense raw-to-canonical table covering raw ids `0..=max_raw`, for fast
    /// remapping of rasters. Unmapped entries hold `IGNORE_ID`.
    pub(crate) fn remap_table(&self, max_raw: u32) -> Vec<u16> {
        let mut table = vec![IGNORE_ID; max_raw as usize + 1];
        for e in &self.entries {
            if (e.raw_id as usize) < table.len() {
                table[e.raw_id as usize] = e.canonical_id;
            }
        }
        table
    }

    /// The name <-> canonical id pairs, sorted by id. Two legends agree for
    /// pairing purposes when these sets are equal.
    pub fn canonical_pairs(&self) -> Vec<(u16, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u16, n.as_str()))
            .collect()
    }
}
