//! A catalog of common text-to-image error patterns, each paired with a
//! refinement strategy, and retrieval of the patterns relevant to an error.
//!
//! The bundled catalog lives in `assets/patterns.toml`; its header comment
//! documents the format.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error_analysis::{Aspect, ErrorRecord};
use crate::synthetic::lexicon;
use crate::text::tokens;

pub const PATTERN_COUNT: usize = 35;
pub const CATALOG_VERSION: u32 = 1;

const BUNDLED: &str = include_str!("../assets/patterns.toml");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog schema error: {0}")]
    SchemaError(String),
    #[error("catalog has {found} patterns, expected {expected}")]
    CountMismatch { expected: usize, found: usize },
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEntry {
    pub id: u32,
    pub name: String,
    pub category: Aspect,
    #[serde(default)]
    pub spillover: bool,
    pub keywords: Vec<String>,
    pub strategy: String,
    pub example: (String, String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    version: u32,
    #[serde(default)]
    pattern: Vec<PatternEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    pub entries: Vec<PatternEntry>,
}

impl Catalog {
    pub fn bundled() -> Self {
        parse_catalog(BUNDLED).expect("bundled catalog is valid")
    }

    pub fn get(&self, id: u32) -> Option<&PatternEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Patterns relevant to `error`, best first.
    pub fn match_patterns(&self, error: &ErrorRecord) -> Vec<&PatternEntry> {
        match_patterns(&self.entries, error)
    }
}

pub fn parse_catalog(text: &str) -> Result<Catalog, CatalogError> {
    let file: CatalogFile = toml::from_str(text).map_err(|e| CatalogError::SchemaError(e.to_string()))?;
    if file.version != CATALOG_VERSION {
        return Err(CatalogError::SchemaError(format!("unsupported catalog version {}", file.version)));
    }
    if file.pattern.len() != PATTERN_COUNT {
        return Err(CatalogError::CountMismatch { expected: PATTERN_COUNT, found: file.pattern.len() });
    }
    let mut ids = BTreeSet::new();
    for entry in &file.pattern {
        if !(1..=PATTERN_COUNT as u32).contains(&entry.id) || !ids.insert(entry.id) {
            return Err(CatalogError::SchemaError(format!("invalid or duplicate id {}", entry.id)));
        }
        if entry.name.trim().is_empty() || entry.strategy.trim().is_empty() {
            return Err(CatalogError::SchemaError(format!("pattern {} lacks a name or strategy", entry.id)));
        }
        if entry.keywords.is_empty() {
            return Err(CatalogError::SchemaError(format!("pattern {} has no keywords", entry.id)));
        }
    }
    let mut entries = file.pattern;
    entries.sort_by_key(|e| e.id);
    Ok(Catalog { entries })
}

pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    parse_catalog(&fs::read_to_string(path)?)
}

fn keyword_overlap(entry: &PatternEntry, words: &BTreeSet<String>) -> usize {
    entry.keywords.iter().filter(|k| words.contains(k.as_str())).count()
}

/// Entries sharing at least one keyword with the explanation, ranked by
/// category match, then overlap count (both descending), then id. Empty
/// when no entry of the error's own category overlaps.
pub fn match_patterns<'a>(entries: &'a [PatternEntry], error: &ErrorRecord) -> Vec<&'a PatternEntry> {
    let mut words: BTreeSet<String> = BTreeSet::new();
    for t in tokens(&error.explanation) {
        if let Some(s) = lexicon::singular(&t) {
            words.insert(s.to_string());
        }
        words.insert(t);
    }
    let mut scored: Vec<(bool, usize, &PatternEntry)> = entries
        .iter()
        .map(|e| (e.category == error.category, keyword_overlap(e, &words), e))
        .filter(|(_, overlap, _)| *overlap > 0)
        .collect();
    if !scored.iter().any(|(same, _, _)| *same) {
        return Vec::new();
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.id.cmp(&b.2.id)));
    scored.into_iter().map(|(_, _, e)| e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_analysis::Branch;

    const NAMES: [&str; 35] = [
        "Quantity Errors",
        "Spatial Positioning Errors",
        "Texture Errors",
        "Color Errors",
        "Shape Errors",
        "Proportion Errors",
        "Action or Pose Errors",
        "Scene Element Omissions",
        "Extraneous Scene Elements",
        "Indistinct Background Errors",
        "Lighting Errors",
        "Shadow Errors",
        "Reflection Errors",
        "Object Blurriness",
        "Style Errors",
        "Material Errors",
        "Composition Errors",
        "Interaction Errors",
        "Ambiguous Object States",
        "Object Fusion Errors",
        "Emphasis Errors",
        "Atmospheric Mismatch Errors",
        "Cluttered Background Errors",
        "Partial Object Generation",
        "Object Occlusion Errors",
        "Unwanted Brand Elements",
        "Temporal Ambiguity Errors",
        "Seasonal Element Errors",
        "Facial Expression Errors",
        "Transparency Errors",
        "Background Inconsistency Errors",
        "Contrast Errors",
        "Color Disharmony Errors",
        "Emotional Tone Errors",
        "Object Boundary Errors",
    ];

    #[test]
    fn bundled_catalog_has_every_name() {
        let c = Catalog::bundled();
        assert_eq!(c.entries.len(), 35);
        for (i, name) in NAMES.iter().enumerate() {
            assert_eq!(c.get(i as u32 + 1).unwrap().name, *name);
        }
        assert_eq!(c.get(26).unwrap().category, Aspect::Background);
    }

    fn without_last_entry() -> String {
        let cut = BUNDLED.rfind("[[pattern]]").unwrap();
        BUNDLED[..cut].to_string()
    }

    #[test]
    fn count_and_schema_guards() {
        assert!(matches!(
            parse_catalog(&without_last_entry()),
            Err(CatalogError::CountMismatch { found: 34, .. })
        ));
        let no_strategy = BUNDLED.replacen(
            "strategy = \"Repeat the count next to the noun and add a precision adverb such as exactly or precisely.\"\n",
            "",
            1,
        );
        assert!(matches!(parse_catalog(&no_strategy), Err(CatalogError::SchemaError(_))));
        let blank = BUNDLED.replacen("strategy = \"Repeat the count", "strategy = \" \"\n# \"", 1);
        assert!(matches!(parse_catalog(&blank), Err(CatalogError::SchemaError(_))));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        fs::write(&path, BUNDLED).unwrap();
        assert_eq!(load_catalog(&path).unwrap(), Catalog::bundled());
    }

    #[test]
    fn matching_examples() {
        let c = Catalog::bundled();
        let e = ErrorRecord::new(Aspect::Number, "only three baozi instead of six", Branch::Integrated);
        assert_eq!(c.match_patterns(&e)[0].name, "Quantity Errors");
        let e = ErrorRecord::new(Aspect::Texture, "frosty boards not visible", Branch::Integrated);
        assert_eq!(c.match_patterns(&e)[0].name, "Texture Errors");
        let e = ErrorRecord::new(Aspect::Number, "the sky looks odd", Branch::Integrated);
        assert!(c.match_patterns(&e).is_empty());
    }

    #[test]
    fn ranking_prefers_category_then_overlap_then_id() {
        let c = Catalog::bundled();
        let e = ErrorRecord::new(Aspect::Existence, "an unrequested cat appears, extra clutter", Branch::Integrated);
        let ranked: Vec<u32> = c.match_patterns(&e).iter().map(|p| p.id).collect();
        assert_eq!(ranked[0], 9);
        let first_other = ranked.iter().position(|id| c.get(*id).unwrap().category != Aspect::Existence);
        if let Some(pos) = first_other {
            assert!(ranked[pos..].iter().all(|id| c.get(*id).unwrap().category != Aspect::Existence));
        }
    }
}
